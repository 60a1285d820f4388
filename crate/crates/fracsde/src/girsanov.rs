//! Drift removal process v, Radon–Nikodym weights and reweighted estimates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::drift::{loglog_slope, DriftField};
use crate::error::{Error, Result};
use crate::fbm::{FbmEnsemble, HurstGrid};
use crate::frac_calc::{kh_operator_scale, GridFunction};
use crate::mc::{compensated_sum, par_map, Estimate, MAX_EXCLUDED_FRACTION};
use crate::regimes::{check_h1, RegimeParams};
use crate::special::{beta, beta_reg_diff, gamma};

const BATCH: usize = 256;

/// Product-integration weights for v on a fixed grid.
///
/// Row i holds ∫_{r_j}^{r_{j+1}} (s_i − r)^{−½−H} r^{½−H} dr for j < i, already
/// multiplied by the prefactor s_i^{H−½} / (Γ(½−H) C_H Γ(H+½)).
#[derive(Debug, Clone, PartialEq)]
pub struct VWeights {
    n: usize,
    rows: Vec<f64>,
}

impl VWeights {
    pub fn new(grid: &HurstGrid) -> Result<Self> {
        let h = grid.hurst;
        if !(h > 0.0 && h < 0.5) {
            return Err(Error::domain(format!("drift removal needs H in (0, 1/2), got {h}")));
        }
        let n = grid.n_steps;
        let (a, b) = (1.5 - h, 0.5 - h);
        let full = beta(a, b);
        let scale = 1.0 / (gamma(0.5 - h) * kh_operator_scale(h)?);
        let mut rows = Vec::with_capacity(n * (n + 1) / 2);
        for i in 1..=n {
            let s = grid.time(i);
            // r = s u turns the cell integral into s^{1−2H} B(a, b) ΔI_u(a, b)
            let pre = scale * s.powf(h - 0.5) * s.powf(1.0 - 2.0 * h) * full;
            let fi = i as f64;
            for j in 0..i {
                rows.push(pre * beta_reg_diff(a, b, j as f64 / fi, (j + 1) as f64 / fi));
            }
        }
        Ok(Self { n, rows })
    }

    fn row(&self, i: usize) -> &[f64] {
        let start = (i - 1) * i / 2;
        &self.rows[start..start + i]
    }

    /// v at nodes 0..=n from left-point drift values u_j = b(r_j, B_{r_j}),
    /// node-major with `d` coordinates. v_0 = 0.
    pub fn apply(&self, u: &[f64], d: usize, out: &mut [f64]) {
        out[..d].fill(0.0);
        for i in 1..=self.n {
            let w = self.row(i);
            for k in 0..d {
                out[i * d + k] = compensated_sum(w.iter().enumerate().map(|(j, wj)| wj * u[j * d + k]));
            }
        }
    }
}

fn drift_along(ens: &FbmEnsemble, b: &DriftField, p: usize) -> Vec<f64> {
    let d = ens.dim;
    let path = ens.path(p);
    let mut u = vec![0.0; ens.grid.n_steps * d];
    for j in 0..ens.grid.n_steps {
        b.eval(ens.grid.time(j), &path[j * d..(j + 1) * d], &mut u[j * d..(j + 1) * d]);
    }
    u
}

fn check_inputs(ens: &FbmEnsemble, b: &DriftField) -> Result<()> {
    if !ens.has_increments() {
        return Err(Error::CoupledGeneratorRequired);
    }
    if b.dim() != ens.dim {
        return Err(Error::Usage(format!("drift dimension {} does not match ensemble dimension {}", b.dim(), ens.dim)));
    }
    Ok(())
}

/// v_s = K_H⁻¹(∫_0^· b(r, B_r) dr)(s) on every path, one GridFunction each.
pub fn drift_to_v(ens: &FbmEnsemble, b: &DriftField) -> Result<Vec<GridFunction>> {
    check_inputs(ens, b)?;
    let w = VWeights::new(&ens.grid)?;
    let g = ens.grid;
    let d = ens.dim;
    let out = par_map(ens.n_paths, BATCH, |p| {
        let mut v = vec![0.0; g.n_nodes() * d];
        w.apply(&drift_along(ens, b, p), d, &mut v);
        v
    });
    out.into_iter().map(|v| GridFunction::new(g.horizon, g.n_steps, d, v)).collect()
}

/// Per-path drift removal data and weights. Flagged paths carry NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovRecord {
    pub grid: HurstGrid,
    pub dim: usize,
    pub n_paths: usize,
    /// v for each path, path-major, node-major, coordinate-minor.
    pub v: Vec<f64>,
    pub ito_sum: Vec<f64>,
    pub qv_sum: Vec<f64>,
    pub xi: Vec<f64>,
    pub flagged: Vec<usize>,
}

impl GirsanovRecord {
    pub fn v_path(&self, p: usize) -> &[f64] {
        let len = self.grid.n_nodes() * self.dim;
        &self.v[p * len..(p + 1) * len]
    }

    pub fn is_flagged(&self, p: usize) -> bool {
        self.flagged.binary_search(&p).is_ok()
    }

    pub fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_paths).filter(|p| !self.is_flagged(*p))
    }

    /// Mean weight with its standard error over unflagged paths.
    pub fn mean_xi(&self) -> Estimate {
        let xs: Vec<f64> = self.kept().map(|p| self.xi[p]).collect();
        Estimate::from_values(&xs)
    }

    /// CSV rows `path_id,ito_sum,qv_sum,xi`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path_id,ito_sum,qv_sum,xi\n");
        for p in 0..self.n_paths {
            let _ = writeln!(s, "{p},{},{},{}", self.ito_sum[p], self.qv_sum[p], self.xi[p]);
        }
        s
    }
}

/// Left-point sums Σ v_j·ΔW_j and Σ |v_j|² dt, cumulated over steps.
fn ito_partials(v: &[f64], dw: &[f64], d: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = dw.len() / d;
    let mut ito = Vec::with_capacity(n + 1);
    let mut qv = Vec::with_capacity(n + 1);
    let (mut a, mut q) = (crate::mc::CompensatedSum::default(), crate::mc::CompensatedSum::default());
    ito.push(0.0);
    qv.push(0.0);
    for j in 0..n {
        for k in 0..d {
            let vj = v[j * d + k];
            a.add(vj * dw[j * d + k]);
            q.add(vj * vj * dt);
        }
        ito.push(a.value());
        qv.push(q.value());
    }
    (ito, qv)
}

/// ξ_T = exp(−Σ v_j·ΔW_j − ½ Σ |v_j|² dt) on every path.
pub fn girsanov_weight(ens: &FbmEnsemble, b: &DriftField) -> Result<GirsanovRecord> {
    check_inputs(ens, b)?;
    let w = VWeights::new(&ens.grid)?;
    let g = ens.grid;
    let d = ens.dim;
    let dt = g.dt();
    let rows = par_map(ens.n_paths, BATCH, |p| {
        let mut v = vec![0.0; g.n_nodes() * d];
        w.apply(&drift_along(ens, b, p), d, &mut v);
        let dw = ens.increments(p).expect("checked above");
        let (ito, qv) = ito_partials(&v, dw, d, dt);
        let (i, q) = (ito[g.n_steps], qv[g.n_steps]);
        (v, i, q)
    });
    let mut rec = GirsanovRecord {
        grid: g,
        dim: d,
        n_paths: ens.n_paths,
        v: Vec::with_capacity(ens.n_paths * g.n_nodes() * d),
        ito_sum: Vec::with_capacity(ens.n_paths),
        qv_sum: Vec::with_capacity(ens.n_paths),
        xi: Vec::with_capacity(ens.n_paths),
        flagged: Vec::new(),
    };
    for (p, (v, i, q)) in rows.into_iter().enumerate() {
        let xi = (-i - 0.5 * q).exp();
        if v.iter().any(|x| !x.is_finite()) || !xi.is_finite() {
            rec.flagged.push(p);
            rec.ito_sum.push(f64::NAN);
            rec.qv_sum.push(f64::NAN);
            rec.xi.push(f64::NAN);
        } else {
            rec.ito_sum.push(i);
            rec.qv_sum.push(q);
            rec.xi.push(xi);
        }
        rec.v.extend(v);
    }
    if rec.flagged.len() as f64 > MAX_EXCLUDED_FRACTION * ens.n_paths as f64 {
        return Err(Error::Numeric(format!(
            "{} of {} paths hit the drift singularity (limit {:.1}%)",
            rec.flagged.len(),
            ens.n_paths,
            100.0 * MAX_EXCLUDED_FRACTION
        )));
    }
    if !rec.flagged.is_empty() {
        log::warn!("{} paths excluded: non-finite v", rec.flagged.len());
    }
    Ok(rec)
}

/// Estimates of E exp(−½ M_t), M_t = ∫_0^t v dW, at the requested times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KazamakiReport {
    pub checkpoints: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub sup: f64,
    /// sup over the first half of the paths divided by `sup`.
    pub stability_ratio: f64,
    pub stable: bool,
}

/// Relative deviation of the half-sample sup beyond which a heavy tail is
/// suspected.
pub const KAZAMAKI_STABILITY_TOL: f64 = 0.05;

pub fn kazamaki_diagnostic(ens: &FbmEnsemble, b: &DriftField, checkpoints: &[f64]) -> Result<KazamakiReport> {
    check_inputs(ens, b)?;
    let w = VWeights::new(&ens.grid)?;
    let g = ens.grid;
    let d = ens.dim;
    let nodes: Vec<usize> = checkpoints.iter().map(|&t| g.nearest_node(t)).collect();
    let vals = par_map(ens.n_paths, BATCH, |p| {
        let mut v = vec![0.0; g.n_nodes() * d];
        w.apply(&drift_along(ens, b, p), d, &mut v);
        let (ito, _) = ito_partials(&v, ens.increments(p).expect("checked above"), d, g.dt());
        nodes.iter().map(|&i| (-0.5 * ito[i]).exp()).collect::<Vec<_>>()
    });
    let kept: Vec<&Vec<f64>> = vals.iter().filter(|r| r.iter().all(|x| x.is_finite())).collect();
    let column = |c: usize, rows: &[&Vec<f64>]| Estimate::from_values(&rows.iter().map(|r| r[c]).collect::<Vec<_>>());
    let estimates: Vec<Estimate> = (0..nodes.len()).map(|c| column(c, &kept)).collect();
    let half = &kept[..kept.len() / 2];
    let sup = estimates.iter().map(|e| e.mean).fold(f64::NEG_INFINITY, f64::max);
    let half_sup = (0..nodes.len()).map(|c| column(c, half).mean).fold(f64::NEG_INFINITY, f64::max);
    let stability_ratio = half_sup / sup;
    let stable = (stability_ratio - 1.0).abs() <= KAZAMAKI_STABILITY_TOL;
    if !stable {
        log::warn!("Kazamaki estimate unstable under halving: ratio {stability_ratio:.4}");
    }
    Ok(KazamakiReport {
        checkpoints: nodes.iter().map(|&i| g.time(i)).collect(),
        estimates,
        sup,
        stability_ratio,
        stable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Weight,
    InverseWeight,
}

/// Σ w_p f_p / N over unflagged paths with w = ξ_T or ξ_T⁻¹; `values[p]`
/// is the functional on path p.
pub fn reweighted_expectation(rec: &GirsanovRecord, values: &[f64], mode: WeightMode) -> Result<Estimate> {
    if values.len() != rec.n_paths {
        return Err(Error::Usage(format!("{} functional values for {} paths", values.len(), rec.n_paths)));
    }
    let mut xs = Vec::with_capacity(rec.n_paths);
    for p in rec.kept() {
        if !values[p].is_finite() {
            return Err(Error::Numeric(format!("functional is not finite on path {p}")));
        }
        let w = match mode {
            WeightMode::Weight => rec.xi[p],
            WeightMode::InverseWeight => 1.0 / rec.xi[p],
        };
        xs.push(w * values[p]);
    }
    Ok(Estimate::from_values(&xs))
}

/// B̃_t = B_t + Σ_{r_j < t} b(r_j, B_{r_j}) dt along path p, node-major.
pub fn shifted_path(ens: &FbmEnsemble, b: &DriftField, p: usize) -> Vec<f64> {
    let d = ens.dim;
    let dt = ens.grid.dt();
    let u = drift_along(ens, b, p);
    let mut out = ens.path(p).to_vec();
    let mut acc = vec![0.0; d];
    for i in 1..ens.grid.n_nodes() {
        for k in 0..d {
            acc[k] += u[(i - 1) * d + k] * dt;
            out[i * d + k] += acc[k];
        }
    }
    out
}

/// Consecutive-level distances of Ξ^ε on a common ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConvergence {
    pub levels: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    /// l2[k] / l2[k+1].
    pub l2_ratios: Vec<f64>,
    pub mean_l2_ratio: f64,
    pub excluded_paths: usize,
}

/// Weights for each mollification level and their L¹, L² distances between
/// consecutive levels. Refused unless (H1) holds for `regime`.
pub fn weight_convergence_study(
    ens: &FbmEnsemble,
    b_singular: &DriftField,
    levels: &[f64],
    regime: &RegimeParams,
) -> Result<WeightConvergence> {
    let h1 = check_h1(regime);
    if !h1.holds {
        return Err(Error::RegimeRefused(format!(
            "(H1) 1/q + Hd/p < 1 − H: lhs − rhs = {:.6}",
            -h1.residual
        )));
    }
    let recs: Vec<GirsanovRecord> =
        levels.iter().map(|&e| girsanov_weight(ens, &b_singular.mollify(e)?)).collect::<Result<_>>()?;
    let mut excluded: Vec<usize> = recs.iter().flat_map(|r| r.flagged.iter().copied()).collect();
    excluded.sort_unstable();
    excluded.dedup();
    let keep: Vec<usize> = (0..ens.n_paths).filter(|p| excluded.binary_search(p).is_err()).collect();
    let n = keep.len() as f64;
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    for w in recs.windows(2) {
        l1.push(compensated_sum(keep.iter().map(|&p| (w[0].xi[p] - w[1].xi[p]).abs())) / n);
        l2.push((compensated_sum(keep.iter().map(|&p| (w[0].xi[p] - w[1].xi[p]).powi(2))) / n).sqrt());
    }
    let l2_ratios: Vec<f64> = l2.windows(2).map(|w| w[0] / w[1]).collect();
    // geometric mean, so one noisy level does not dominate
    let mean_l2_ratio = if l2.len() >= 2 {
        (l2[0] / l2[l2.len() - 1]).powf(1.0 / (l2.len() - 1) as f64)
    } else {
        f64::NAN
    };
    Ok(WeightConvergence { levels: levels.to_vec(), l1, l2, l2_ratios, mean_l2_ratio, excluded_paths: excluded.len() })
}

/// E ∫|v_s|² ds for drifts of increasing amplitude, with the fitted
/// log-log exponent (2 for a linear drift-to-v map).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyScaling {
    pub amplitudes: Vec<f64>,
    pub energies: Vec<Estimate>,
    pub exponent: f64,
}

pub fn energy_scaling(ens: &FbmEnsemble, fields: &[(f64, DriftField)]) -> Result<EnergyScaling> {
    let mut energies = Vec::with_capacity(fields.len());
    for (_, b) in fields {
        let rec = girsanov_weight(ens, b)?;
        energies.push(Estimate::from_values(&rec.kept().map(|p| rec.qv_sum[p]).collect::<Vec<_>>()));
    }
    let amplitudes: Vec<f64> = fields.iter().map(|f| f.0).collect();
    let exponent = loglog_slope(&amplitudes, &energies.iter().map(|e| e.mean).collect::<Vec<_>>());
    Ok(EnergyScaling { amplitudes, energies, exponent })
}

/// JSON summary of a weight run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovSummary {
    pub n_paths: usize,
    pub mean_xi: f64,
    pub se_xi: f64,
    pub kazamaki_sup: f64,
    pub stability_ratio: f64,
    pub excluded_paths: usize,
}

impl GirsanovSummary {
    pub fn new(rec: &GirsanovRecord, kz: &KazamakiReport) -> Self {
        let m = rec.mean_xi();
        Self {
            n_paths: rec.n_paths,
            mean_xi: m.mean,
            se_xi: m.se,
            kazamaki_sup: kz.sup,
            stability_ratio: kz.stability_ratio,
            excluded_paths: rec.flagged.len(),
        }
    }
}
