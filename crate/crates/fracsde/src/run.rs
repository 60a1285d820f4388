//! Experiment dispatch: one call per configured run, artifacts written under
//! `output_dir/<experiment>/`.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::config::{CheckKind, Experiment, RunConfig};
use crate::drift::{
    convergence_study, euler_solve, holder_table, loglog_slope, solve_flow, ConvergenceTable, DriftField, FlowTable,
};
use crate::error::{Error, Result};
use crate::fbm::{sample_cholesky, sample_fgn_circulant, sample_volterra, FbmEnsemble, GeneratorTag};
use crate::girsanov::{
    girsanov_weight, kazamaki_diagnostic, weight_convergence_study, GirsanovSummary, KazamakiReport, WeightConvergence,
};
use crate::io;
use crate::mc::{mc_batch, McSummary};
use crate::regimes::{classify, holder_exponents, reciprocal_lattice, region_sample, RegimeReport};
use crate::verify::{
    self, compactness_beta, empirical_flow_regularity, sobolev_level_stability, CheckReport, FlowRegularity, Sweep,
};

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Check verdict of `verify` and `flow` runs, `None` elsewhere.
    pub check: Option<CheckReport>,
}

struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let name = serde_json::to_value(cfg.experiment).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let dir = cfg.output_dir.join(name);
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn text(&mut self, name: &str, s: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, s)?;
        self.files.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        self.text(name, &io::to_json(v)?)
    }

    fn done(self, check: Option<CheckReport>) -> RunOutcome {
        RunOutcome { dir: self.dir, files: self.files, check }
    }
}

/// Validates the config, applies the regime gate and runs the experiment.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let regime = cfg.gate()?;
    log::info!("running {:?} into {}", cfg.experiment, cfg.output_dir.display());
    match cfg.experiment {
        Experiment::Simulate => simulate(cfg),
        Experiment::Girsanov => girsanov(cfg),
        Experiment::Converge => converge(cfg, regime.expect("gate returns the report for converge")),
        Experiment::Flow => flow(cfg),
        Experiment::Verify => verify_run(cfg),
        Experiment::Regimes => regimes(cfg),
    }
}

/// The noise ensemble: read from `input_cache` or sampled.
pub fn ensemble(cfg: &RunConfig) -> Result<FbmEnsemble> {
    if let Some(path) = &cfg.input_cache {
        let ens = io::read_ensemble(path)?;
        let g = ens.grid;
        if g.hurst != cfg.hurst || g.horizon != cfg.horizon || g.n_steps != cfg.n_steps || ens.dim != cfg.d {
            return Err(Error::Usage(format!(
                "cache {} holds H={}, T={}, n_steps={}, d={}, which differs from the config",
                path.display(),
                g.hurst,
                g.horizon,
                g.n_steps,
                ens.dim
            )));
        }
        return Ok(ens);
    }
    let grid = cfg.grid()?;
    match cfg.generator {
        GeneratorTag::Cholesky => sample_cholesky(&grid, cfg.d, cfg.n_paths, cfg.seed),
        GeneratorTag::Volterra => sample_volterra(&grid, cfg.d, cfg.n_paths, cfg.seed),
        GeneratorTag::FgnCirculant => sample_fgn_circulant(&grid, cfg.d, cfg.n_paths, cfg.seed),
    }
}

/// The drift the solver sees: singular drifts are mollified at the finest
/// configured level.
fn solver_drift(cfg: &RunConfig) -> Result<DriftField> {
    let b = cfg.drift_field()?;
    if !b.is_singular() {
        return Ok(b);
    }
    let eps = cfg.mollification_levels.iter().copied().fold(f64::INFINITY, f64::min);
    if !eps.is_finite() {
        return Err(Error::Usage("singular drift needs at least one mollification level".into()));
    }
    log::info!("singular drift mollified at eps = {eps}");
    b.mollify(eps)
}

fn levels_of(cfg: &RunConfig, b: &DriftField) -> Result<Vec<(f64, DriftField)>> {
    cfg.mollification_levels.iter().map(|&e| Ok((e, b.mollify(e)?))).collect()
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    config: &'a RunConfig,
    terminal_mean: McSummary,
    terminal_second_moment: McSummary,
    holder_slope: f64,
    excluded_paths: usize,
}

fn terminal_summary(
    sol: &crate::drift::SolutionPaths,
    cfg: &RunConfig,
    f: impl Fn(f64) -> f64 + Sync,
) -> Result<McSummary> {
    let n = sol.grid.n_steps;
    mc_batch(
        |p, _| Ok(if sol.flagged.contains(&p) { None } else { Some(f(sol.value(p, n, 0))) }),
        sol.n_paths,
        cfg.seed,
        cfg.batch_size,
    )
}

fn holder_slope_of(sol: &crate::drift::SolutionPaths) -> (f64, Vec<(f64, f64, f64)>) {
    let tab = holder_table(sol, 0);
    let xs: Vec<f64> = tab.iter().map(|r| r.0).collect();
    let ys: Vec<f64> = tab.iter().map(|r| r.1.mean).collect();
    (loglog_slope(&xs, &ys), tab.iter().map(|r| (r.0, r.1.mean, r.1.se)).collect())
}

fn simulate(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut out = Out::new(cfg)?;
    let ens = ensemble(cfg)?;
    let b = solver_drift(cfg)?;
    let sol = euler_solve(&ens, &b, &cfg.x0_vec())?;
    let (holder_slope, _) = holder_slope_of(&sol);
    let summary = SimulateSummary {
        config: cfg,
        terminal_mean: terminal_summary(&sol, cfg, |x| x)?,
        terminal_second_moment: terminal_summary(&sol, cfg, |x| x * x)?,
        holder_slope,
        excluded_paths: sol.flagged.len(),
    };
    out.json("summary.json", &summary)?;
    out.text("paths.csv", &io::ensemble_csv(&ens, cfg.csv_paths))?;
    out.text("solution.csv", &io::solution_csv(&sol, cfg.csv_paths))?;
    if cfg.cache {
        let p = out.dir.join("paths.fbm1");
        io::write_ensemble(&p, &ens)?;
        out.files.push(p);
    }
    Ok(out.done(None))
}

#[derive(Serialize)]
struct GirsanovOut<'a> {
    config: &'a RunConfig,
    summary: GirsanovSummary,
    kazamaki: KazamakiReport,
    level_study: Option<WeightConvergence>,
}

fn girsanov(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut out = Out::new(cfg)?;
    let ens = ensemble(cfg)?;
    if !ens.has_increments() {
        return Err(Error::CoupledGeneratorRequired);
    }
    let b = solver_drift(cfg)?;
    let rec = girsanov_weight(&ens, &b)?;
    let kz = kazamaki_diagnostic(&ens, &b, &cfg.checkpoints)?;
    let raw = cfg.drift_field()?;
    let level_study = if raw.is_singular() && cfg.mollification_levels.len() >= 2 {
        Some(weight_convergence_study(&ens, &raw, &cfg.mollification_levels, &cfg.regime()?)?)
    } else {
        None
    };
    out.text("weights.csv", &rec.to_csv())?;
    let mut kz_csv = Sweep::new(&["t", "estimate", "standard_error"]);
    for (t, e) in kz.checkpoints.iter().zip(&kz.estimates) {
        kz_csv.push(vec![*t, e.mean, e.se]);
    }
    out.text("kazamaki.csv", &kz_csv.to_csv())?;
    let summary = GirsanovSummary::new(&rec, &kz);
    out.json("summary.json", &GirsanovOut { config: cfg, summary, kazamaki: kz, level_study })?;
    Ok(out.done(None))
}

#[derive(Serialize)]
struct ConvergeOut<'a> {
    config: &'a RunConfig,
    regime: RegimeReport,
    table: ConvergenceTable,
}

fn converge(cfg: &RunConfig, regime: RegimeReport) -> Result<RunOutcome> {
    let mut out = Out::new(cfg)?;
    let b = cfg.drift_field()?;
    if !b.is_singular() {
        return Err(Error::Usage("converge needs a singular drift".into()));
    }
    let ens = ensemble(cfg)?;
    let table = convergence_study(&ens, &b, &cfg.mollification_levels, &cfg.step_factors, &regime.params, &cfg.x0_vec())?;
    let mut lv = Sweep::new(&["level_fine", "distance"]);
    for (l, d) in table.levels.iter().skip(1).zip(&table.level_distances) {
        lv.push(vec![*l, d.mean]);
    }
    out.text("levels.csv", &lv.to_csv())?;
    let mut st = Sweep::new(&["step_factor", "distance"]);
    for (f, d) in table.step_factors.iter().skip(1).zip(&table.step_distances) {
        st.push(vec![*f as f64, d.mean]);
    }
    out.text("steps.csv", &st.to_csv())?;
    out.json("summary.json", &ConvergeOut { config: cfg, regime, table })?;
    Ok(out.done(None))
}

/// Initial points of the flow: 33 points on x0 ± 1 along the first axis.
pub fn flow_points(cfg: &RunConfig) -> Vec<Vec<f64>> {
    (0..33)
        .map(|k| {
            let mut x = cfg.x0_vec();
            x[0] += -1.0 + k as f64 / 16.0;
            x
        })
        .collect()
}

/// Start nodes of the flow: 0 and the checkpoints before T.
pub fn flow_starts(cfg: &RunConfig) -> Result<Vec<usize>> {
    let g = cfg.grid()?;
    let mut s = vec![0];
    for &c in &cfg.checkpoints {
        let node = g.nearest_node(c);
        if node < g.n_steps && !s.contains(&node) {
            s.push(node);
        }
    }
    Ok(s)
}

fn truncated(flow: &FlowTable, n_paths: usize) -> FlowTable {
    let k = flow.n_paths.min(n_paths);
    let per = flow.values.len() / flow.n_paths.max(1);
    FlowTable {
        n_paths: k,
        values: flow.values[..k * per].to_vec(),
        flagged: flow.flagged.iter().copied().filter(|&p| p < k).collect(),
        ..flow.clone()
    }
}

#[derive(Serialize)]
struct FlowOut<'a> {
    config: &'a RunConfig,
    regularity: FlowRegularity,
    check: CheckReport,
    sobolev_levels: Option<CheckReport>,
}

/// Moment order p_1 of the flow increments.
pub const FLOW_P1: f64 = 2.0;
/// Relative slack on the flow slopes.
pub const FLOW_SLOPE_TOL: f64 = 0.1;

fn flow(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut out = Out::new(cfg)?;
    let ens = ensemble(cfg)?;
    let raw = cfg.drift_field()?;
    let b = solver_drift(cfg)?;
    let xs = flow_points(cfg);
    let starts = flow_starts(cfg)?;
    let time_exp = holder_exponents(&cfg.regime()?).time_bound.unwrap_or(cfg.hurst).min(cfg.hurst);
    let table = solve_flow(&ens, &b, &starts, &xs)?;
    let (regularity, check) = empirical_flow_regularity(&table, FLOW_P1, time_exp, FLOW_SLOPE_TOL)?;
    out.text("flow.csv", &truncated(&table, cfg.csv_paths.min(4)).to_csv())?;
    drop(table);
    let sobolev_levels = if raw.is_singular() {
        let mut norms = Vec::new();
        for (e, f) in levels_of(cfg, &raw)? {
            let t = solve_flow(&ens, &f, &starts[..1], &xs)?;
            norms.push((e, empirical_flow_regularity(&t, FLOW_P1, time_exp, FLOW_SLOPE_TOL)?.0.sobolev_norm));
        }
        Some(sobolev_level_stability(&norms, 2.0))
    } else {
        None
    };
    out.text("flow_moments.csv", &check.sweep.to_csv())?;
    out.json("summary.json", &FlowOut { config: cfg, regularity, check: check.clone(), sobolev_levels })?;
    Ok(out.done(Some(check)))
}

/// Allowed distance of the solution's increment slope from 2H.
pub const HOLDER_SLOPE_TOL: f64 = 0.05;

/// Second-moment increment slope of the solution against 2H.
pub fn holder_check(ens: &FbmEnsemble, b: &DriftField, x0: &[f64]) -> Result<CheckReport> {
    let start = Instant::now();
    let sol = euler_solve(ens, b, x0)?;
    let (slope, rows) = holder_slope_of(&sol);
    let target = 2.0 * ens.grid.hurst;
    let mut sweep = Sweep::new(&["lag", "second_moment", "standard_error"]);
    for (l, m, se) in rows {
        sweep.push(vec![l, m, se]);
    }
    let mut rep = verify::ReportBuilder::new("holder_slope");
    rep.tol("slope_abs", HOLDER_SLOPE_TOL).value("slope", slope).value("target", target);
    rep.constant(slope, vec![target]).sweep(sweep);
    let mut r = rep.finish(verify::pass_if((slope - target).abs() <= HOLDER_SLOPE_TOL));
    r.runtime = start.elapsed().as_secs_f64();
    Ok(r)
}

fn verify_run(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut out = Out::new(cfg)?;
    let h = cfg.hurst;
    let t = cfg.horizon;
    let x0 = cfg.x0_vec();
    let report = match cfg.check {
        CheckKind::Holder => holder_check(&ensemble(cfg)?, &solver_drift(cfg)?, &x0)?,
        CheckKind::Kernel => verify::check_kernel_bounds(h, t, cfg.n_steps.min(64), 0.5 * h, 0.1)?,
        CheckKind::DoubleIntegral => {
            let tol = cfg.quad_rel_tol;
            verify::kernel_double_integral(h, t, 0.5 * h, &[100.0 * tol, 10.0 * tol, tol], 0.02)?
        }
        CheckKind::Density => {
            verify::density_gap_sweep(h, 1, 0.5 * t, &[0.1, 0.2, 0.4], cfg.box_half_width, 81, &[0, 1], 0.1)?
        }
        CheckKind::Simplex => {
            verify::check_simplex_identity(&[0.5, 1.3, 0.7], 0.0, t, cfg.n_paths, cfg.seed, 1e-6, 3.0)?
        }
        CheckKind::Shuffle => verify::check_shuffle_identity(&|s: f64| s.cos(), 0.0, t, 2, 2, 1e-8)?,
        CheckKind::Taming => verify::check_taming_bound(-0.3, 0.4, 0.2, 0.1, t, 1e-6, 200, 0.1)?,
        CheckKind::Jacobian => verify::jacobian_bump_check(
            &ensemble(cfg)?,
            &solver_drift(cfg)?,
            &x0,
            0.25 * t,
            &[1e-1, 1e-2, 1e-3, 1e-4],
            cfg.n_paths,
        )?,
        CheckKind::Picard => {
            verify::picard_check(&ensemble(cfg)?, &solver_drift(cfg)?, &x0, cfg.n_steps / 4, 3, cfg.n_paths)?
        }
        CheckKind::Compactness => {
            let raw = cfg.drift_field()?;
            let fields = if raw.is_singular() { levels_of(cfg, &raw)? } else { vec![(0.0, raw)] };
            let beta = compactness_beta(&cfg.regime()?);
            verify::compactness_quantities(&ensemble(cfg)?, &fields, &x0, beta, 2.0)?.1
        }
    };
    let name = serde_json::to_value(cfg.check).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    out.text(&format!("{name}.csv"), &report.sweep.to_csv())?;
    out.json(&format!("{name}.json"), &report)?;
    Ok(out.done(Some(report)))
}

fn regimes(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut out = Out::new(cfg)?;
    let report = classify(&cfg.regime()?);
    let ps = reciprocal_lattice(1.0, 64.0, 24);
    let qs = reciprocal_lattice(1.0, 64.0, 24);
    out.text("region.csv", &region_sample(cfg.hurst, cfg.d, &ps, &qs)?)?;
    out.json("report.json", &report)?;
    Ok(out.done(None))
}
