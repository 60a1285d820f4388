//! Euler scheme, flows, Jacobians and the mollification convergence harness.

use serde::{Deserialize, Serialize};

use super::DriftField;
use crate::error::{Error, Result};
use crate::fbm::{FbmEnsemble, HurstGrid};
use crate::frac_calc::{GridFunction, KhStar};
use crate::mc::{compensated_sum, par_map, Estimate};
use crate::regimes::{require_strong, RegimeParams};

const BATCH: usize = 64;

/// Euler solutions, laid out path-major, node-major, coordinate-minor.
/// Nodes before `start_node` hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPaths {
    pub grid: HurstGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub start_node: usize,
    pub x: Vec<f64>,
    /// Paths whose state became non-finite.
    pub flagged: Vec<usize>,
}

impl SolutionPaths {
    pub fn path(&self, p: usize) -> &[f64] {
        let len = self.grid.n_nodes() * self.dim;
        &self.x[p * len..(p + 1) * len]
    }

    pub fn value(&self, p: usize, node: usize, coord: usize) -> f64 {
        self.path(p)[node * self.dim + coord]
    }
}

fn require_solvable(b: &DriftField, d: usize) -> Result<()> {
    if b.is_singular() {
        return Err(Error::Usage("singular drift must be mollified before solving".into()));
    }
    if b.dim() != d {
        return Err(Error::Usage(format!("drift dimension {} does not match noise dimension {d}", b.dim())));
    }
    Ok(())
}

/// Explicit Euler for one path from `start` with state `x0`, writing nodes
/// `start..` of `out`. Returns false if the state became non-finite.
pub fn solve_path(b: &DriftField, grid: &HurstGrid, noise: &[f64], start: usize, x0: &[f64], out: &mut [f64]) -> bool {
    let d = x0.len();
    let dt = grid.dt();
    let mut drift = vec![0.0; d];
    out[start * d..(start + 1) * d].copy_from_slice(x0);
    for i in start..grid.n_steps {
        let (head, tail) = out.split_at_mut((i + 1) * d);
        let xi = &head[i * d..];
        b.eval(grid.time(i), xi, &mut drift);
        for k in 0..d {
            tail[k] = xi[k] + drift[k] * dt + (noise[(i + 1) * d + k] - noise[i * d + k]);
        }
        if tail[..d].iter().any(|v| !v.is_finite()) {
            return false;
        }
    }
    true
}

/// X_{i+1} = X_i + b(t_i, X_i) dt + (B_{i+1} − B_i) on every path.
pub fn euler_solve(ens: &FbmEnsemble, b: &DriftField, x0: &[f64]) -> Result<SolutionPaths> {
    solve_from(ens, b, 0, x0)
}

fn solve_from(ens: &FbmEnsemble, b: &DriftField, start: usize, x0: &[f64]) -> Result<SolutionPaths> {
    let d = ens.dim;
    require_solvable(b, d)?;
    if x0.len() != d {
        return Err(Error::Usage(format!("initial state has {} coordinates, expected {d}", x0.len())));
    }
    let len = ens.path_len();
    let res = par_map(ens.n_paths, BATCH, |p| {
        let mut out = vec![f64::NAN; len];
        let ok = solve_path(b, &ens.grid, ens.path(p), start, x0, &mut out);
        (out, ok)
    });
    let mut x = Vec::with_capacity(ens.n_paths * len);
    let mut flagged = Vec::new();
    for (p, (v, ok)) in res.into_iter().enumerate() {
        if !ok {
            flagged.push(p);
        }
        x.extend(v);
    }
    Ok(SolutionPaths { grid: ens.grid, dim: d, n_paths: ens.n_paths, start_node: start, x, flagged })
}

/// Solutions X_{s,t}^x for every start node s and initial point x, all on
/// the same noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    pub grid: HurstGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub s_nodes: Vec<usize>,
    pub x_grid: Vec<Vec<f64>>,
    /// Index order: path, s, x, node, coordinate; NaN before s.
    pub values: Vec<f64>,
    pub flagged: Vec<usize>,
}

impl FlowTable {
    fn offset(&self, p: usize, si: usize, xi: usize) -> usize {
        let len = self.grid.n_nodes() * self.dim;
        ((p * self.s_nodes.len() + si) * self.x_grid.len() + xi) * len
    }

    /// Trajectory t ↦ X_{s,t}^x of one path, node-major.
    pub fn trajectory(&self, p: usize, si: usize, xi: usize) -> &[f64] {
        let o = self.offset(p, si, xi);
        &self.values[o..o + self.grid.n_nodes() * self.dim]
    }

    /// CSV rows `path_id,s,t,x_1..x_d,X_1..X_d` for t ≥ s.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let d = self.dim;
        let mut s = String::from("path_id,s,t");
        for k in 1..=d {
            let _ = write!(s, ",x_{k}");
        }
        for k in 1..=d {
            let _ = write!(s, ",X_{k}");
        }
        s.push('\n');
        for p in 0..self.n_paths {
            for (si, &sn) in self.s_nodes.iter().enumerate() {
                for (xi, x) in self.x_grid.iter().enumerate() {
                    let tr = self.trajectory(p, si, xi);
                    for i in sn..self.grid.n_nodes() {
                        let _ = write!(s, "{p},{},{}", self.grid.time(sn), self.grid.time(i));
                        for v in x {
                            let _ = write!(s, ",{v}");
                        }
                        for v in &tr[i * d..(i + 1) * d] {
                            let _ = write!(s, ",{v}");
                        }
                        s.push('\n');
                    }
                }
            }
        }
        s
    }

    /// max over paths and nodes t ≥ u of |X_{u,t}(X_{s,u}^x) − X_{s,t}^x|.
    pub fn composition_defect(&self, ens: &FbmEnsemble, b: &DriftField, si: usize, xi: usize, u: usize) -> Result<f64> {
        let s = self.s_nodes[si];
        if u < s || u > self.grid.n_steps {
            return Err(Error::domain(format!("intermediate node {u} outside [{s}, {}]", self.grid.n_steps)));
        }
        let d = self.dim;
        let worst = par_map(self.n_paths, BATCH, |p| {
            let tr = self.trajectory(p, si, xi);
            let mid = &tr[u * d..(u + 1) * d];
            let mut out = vec![f64::NAN; tr.len()];
            solve_path(b, &self.grid, ens.path(p), u, mid, &mut out);
            (u * d..tr.len()).map(|k| (out[k] - tr[k]).abs()).fold(0.0, f64::max)
        });
        Ok(worst.into_iter().fold(0.0, f64::max))
    }
}

/// Runs the Euler scheme from every (s, x) pair on the common noise.
pub fn solve_flow(ens: &FbmEnsemble, b: &DriftField, s_nodes: &[usize], x_grid: &[Vec<f64>]) -> Result<FlowTable> {
    let d = ens.dim;
    require_solvable(b, d)?;
    if let Some(&s) = s_nodes.iter().find(|&&s| s > ens.grid.n_steps) {
        return Err(Error::domain(format!("start node {s} beyond the grid")));
    }
    if x_grid.iter().any(|x| x.len() != d) {
        return Err(Error::Usage("every initial point needs d coordinates".into()));
    }
    let len = ens.path_len();
    let res = par_map(ens.n_paths, 8, |p| {
        let mut block = Vec::with_capacity(s_nodes.len() * x_grid.len() * len);
        let mut ok = true;
        for &s in s_nodes {
            for x in x_grid {
                let mut out = vec![f64::NAN; len];
                ok &= solve_path(b, &ens.grid, ens.path(p), s, x, &mut out);
                block.extend(out);
            }
        }
        (block, ok)
    });
    let mut values = Vec::with_capacity(ens.n_paths * s_nodes.len() * x_grid.len() * len);
    let mut flagged = Vec::new();
    for (p, (v, ok)) in res.into_iter().enumerate() {
        if !ok {
            flagged.push(p);
        }
        values.extend(v);
    }
    Ok(FlowTable {
        grid: ens.grid,
        dim: d,
        n_paths: ens.n_paths,
        s_nodes: s_nodes.to_vec(),
        x_grid: x_grid.to_vec(),
        values,
        flagged,
    })
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                c[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    c
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn fro(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// J_{θ,t} along one solution path for t ≥ θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianSlice {
    pub theta_node: usize,
    pub dim: usize,
    /// Row-major d×d matrices for nodes θ..=n.
    pub mats: Vec<f64>,
}

impl JacobianSlice {
    pub fn at(&self, node: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        let k = node - self.theta_node;
        &self.mats[k * d2..(k + 1) * d2]
    }
}

fn gradients(path: &[f64], b: &DriftField, grid: &HurstGrid, from: usize, to: usize) -> Result<Vec<f64>> {
    let d = b.dim();
    let mut g = vec![0.0; (to - from) * d * d];
    for i in from..to {
        b.grad(grid.time(i), &path[i * d..(i + 1) * d], &mut g[(i - from) * d * d..(i - from + 1) * d * d])?;
    }
    Ok(g)
}

/// J_{θ,t_{i+1}} = (I + ∇b(t_i, X_i) dt) J_{θ,t_i}, J_{θ,θ} = I. An
/// off-grid θ is snapped to the nearest node.
pub fn jacobian_ode(path: &[f64], b: &DriftField, grid: &HurstGrid, theta: f64) -> Result<JacobianSlice> {
    let node = grid.nearest_node(theta);
    if (grid.time(node) - theta).abs() > 1e-12 * grid.horizon {
        log::warn!("theta = {theta} snapped to grid node {node} (t = {})", grid.time(node));
    }
    let d = b.dim();
    let n = grid.n_steps;
    let dt = grid.dt();
    let g = gradients(path, b, grid, node, n)?;
    let mut mats = identity(d);
    for i in node..n {
        let prev = mats[(i - node) * d * d..(i - node + 1) * d * d].to_vec();
        let a = &g[(i - node) * d * d..(i - node + 1) * d * d];
        let step = matmul(a, &prev, d);
        mats.extend(prev.iter().zip(&step).map(|(p, s)| p + s * dt));
    }
    Ok(JacobianSlice { theta_node: node, dim: d, mats })
}

/// θ ↦ J_{θ,t} for all grid θ at fixed `t_node`, by the backward product
/// P_θ = P_{θ+1}(I + ∇b(t_θ, X_θ) dt). Entries for θ > t are zero.
pub fn jacobian_all_theta(path: &[f64], b: &DriftField, grid: &HurstGrid, t_node: usize) -> Result<Vec<f64>> {
    let d = b.dim();
    let d2 = d * d;
    let dt = grid.dt();
    let g = gradients(path, b, grid, 0, t_node)?;
    let mut out = vec![0.0; grid.n_nodes() * d2];
    out[t_node * d2..(t_node + 1) * d2].copy_from_slice(&identity(d));
    for th in (0..t_node).rev() {
        let next = out[(th + 1) * d2..(th + 2) * d2].to_vec();
        let mut step = identity(d);
        for (s, a) in step.iter_mut().zip(&g[th * d2..(th + 1) * d2]) {
            *s += a * dt;
        }
        out[th * d2..(th + 1) * d2].copy_from_slice(&matmul(&next, &step, d));
    }
    Ok(out)
}

/// Comparison of the order-3 Picard sum with the Jacobian at the last node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardCheck {
    /// max over nodes of the Frobenius distance.
    pub max_difference: f64,
    /// e^Λ − Σ_{m≤order} Λ^m/m! with Λ = Σ ‖∇b(X_i)‖ dt.
    pub tail_bound: f64,
    pub order: usize,
}

/// Truncated series I + Σ_{m=1}^{order} S_m with S_m(i+1) = S_m(i) +
/// ∇b(X_i) S_{m−1}(i) dt, compared with the Jacobian.
pub fn picard_series(path: &[f64], b: &DriftField, grid: &HurstGrid, theta_node: usize, order: usize) -> Result<PicardCheck> {
    let d = b.dim();
    let d2 = d * d;
    let n = grid.n_steps;
    let dt = grid.dt();
    let jac = jacobian_ode(path, b, grid, grid.time(theta_node))?;
    let g = gradients(path, b, grid, theta_node, n)?;
    let mut terms: Vec<Vec<f64>> = vec![identity(d)];
    terms.extend((0..order).map(|_| vec![0.0; d2]));
    let mut worst: f64 = 0.0;
    let mut lambda = 0.0;
    for i in theta_node..n {
        let a = &g[(i - theta_node) * d2..(i - theta_node + 1) * d2];
        lambda += fro(a) * dt;
        for m in (1..=order).rev() {
            let inc = matmul(a, &terms[m - 1], d);
            for (t, v) in terms[m].iter_mut().zip(&inc) {
                *t += v * dt;
            }
        }
        let mut sum = vec![0.0; d2];
        for t in &terms {
            for (s, v) in sum.iter_mut().zip(t) {
                *s += v;
            }
        }
        let diff: Vec<f64> = sum.iter().zip(jac.at(i + 1)).map(|(a, b)| a - b).collect();
        worst = worst.max(fro(&diff));
    }
    let mut partial = 0.0;
    let mut term = 1.0;
    for m in 0..=order {
        if m > 0 {
            term *= lambda / m as f64;
        }
        partial += term;
    }
    Ok(PicardCheck { max_difference: worst, tail_bound: (lambda.exp() - partial).max(0.0), order })
}

/// θ ↦ D_θ X_t = K_H* (θ ↦ J_{θ,t}) entrywise, from the output of
/// [`jacobian_all_theta`]. Columns of the result are the d×d entries.
pub fn malliavin_transfer(theta_field: &[f64], op: &KhStar, dim: usize) -> Result<GridFunction> {
    let f = GridFunction::new(op.horizon(), op.n_steps(), dim * dim, theta_field.to_vec())?;
    op.apply(&f)
}

/// [X(B + ε e_k 1_{[θ,·]}) − X(B)] / ε at every node, for one path on the
/// same noise. Node-major, d coordinates.
pub fn bump_response(
    b: &DriftField,
    grid: &HurstGrid,
    noise: &[f64],
    x0: &[f64],
    theta_node: usize,
    coord: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    let d = x0.len();
    require_solvable(b, d)?;
    if theta_node > grid.n_steps || coord >= d {
        return Err(Error::domain(format!("bump at node {theta_node}, coordinate {coord} outside the grid")));
    }
    let mut bumped = noise.to_vec();
    for i in theta_node..grid.n_nodes() {
        bumped[i * d + coord] += eps;
    }
    let mut base = vec![f64::NAN; noise.len()];
    let mut pert = vec![f64::NAN; noise.len()];
    solve_path(b, grid, noise, 0, x0, &mut base);
    solve_path(b, grid, &bumped, 0, x0, &mut pert);
    Ok(pert.iter().zip(&base).map(|(a, b)| (a - b) / eps).collect())
}

/// Output of [`convergence_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub levels: Vec<f64>,
    /// E sup_t |X^{ε_k} − X^{ε_{k+1}}| for consecutive levels.
    pub level_distances: Vec<Estimate>,
    pub level_ratios: Vec<f64>,
    /// log-log slope of the level distances against ε.
    pub fitted_level_rate: f64,
    /// Coarsening factors, coarse to fine.
    pub step_factors: Vec<usize>,
    /// E sup_t |X^{(f_k)} − X^{(f_{k+1})}| on the coarser grid.
    pub step_distances: Vec<Estimate>,
    pub fitted_step_rate: f64,
    /// (lag, E|X_{t+lag} − X_t|²) on the finest solution.
    pub holder_table: Vec<(f64, Estimate)>,
    pub holder_slope: f64,
    pub excluded_paths: usize,
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn sup_distance(a: &SolutionPaths, b: &SolutionPaths, stride_b: usize) -> Vec<f64> {
    let d = a.dim;
    (0..a.n_paths)
        .map(|p| {
            (0..a.grid.n_nodes())
                .flat_map(|i| (0..d).map(move |k| (i, k)))
                .map(|(i, k)| (a.value(p, i, k) - b.value(p, i * stride_b, k)).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// E|X_{t+ℓ} − X_t|² for dyadic lags ℓ, averaged over start nodes and paths.
pub fn holder_table(sol: &SolutionPaths, coord: usize) -> Vec<(f64, Estimate)> {
    let n = sol.grid.n_steps;
    let dt = sol.grid.dt();
    let mut out = Vec::new();
    let mut lag = 1;
    while lag <= n / 4 {
        let per_path: Vec<f64> = (0..sol.n_paths)
            .filter(|p| !sol.flagged.contains(p))
            .map(|p| {
                let v = compensated_sum(
                    (0..=n - lag).map(|i| (sol.value(p, i + lag, coord) - sol.value(p, i, coord)).powi(2)),
                );
                v / (n - lag + 1) as f64
            })
            .collect();
        out.push((lag as f64 * dt, Estimate::from_values(&per_path)));
        lag *= 2;
    }
    out
}

/// Mollification and step-refinement self-convergence on common noise.
///
/// Refused unless (H1) and (H2) hold for `regime`. Level distances use all
/// `levels` in the given order; step refinements solve the finest level on
/// the ensemble coarsened by each factor.
pub fn convergence_study(
    ens: &FbmEnsemble,
    b_singular: &DriftField,
    levels: &[f64],
    step_factors: &[usize],
    regime: &RegimeParams,
    x0: &[f64],
) -> Result<ConvergenceTable> {
    require_strong(regime)?;
    if levels.len() < 2 {
        return Err(Error::Usage("need at least two mollification levels".into()));
    }
    let fields: Vec<DriftField> = levels.iter().map(|&e| b_singular.mollify(e)).collect::<Result<_>>()?;
    let sols: Vec<SolutionPaths> = fields.iter().map(|f| euler_solve(ens, f, x0)).collect::<Result<_>>()?;
    let excluded: std::collections::BTreeSet<usize> = sols.iter().flat_map(|s| s.flagged.iter().copied()).collect();
    if excluded.len() as f64 > crate::mc::MAX_EXCLUDED_FRACTION * ens.n_paths as f64 {
        return Err(Error::Numeric(format!("{} of {} paths non-finite", excluded.len(), ens.n_paths)));
    }
    let keep = |v: Vec<f64>| -> Vec<f64> {
        v.into_iter().enumerate().filter(|(p, _)| !excluded.contains(p)).map(|(_, x)| x).collect()
    };
    let level_distances: Vec<Estimate> =
        sols.windows(2).map(|w| Estimate::from_values(&keep(sup_distance(&w[0], &w[1], 1)))).collect();
    let level_ratios = level_distances.windows(2).map(|w| w[0].mean / w[1].mean).collect();
    let mids: Vec<f64> = levels.windows(2).map(|w| w[1]).collect();
    let fitted_level_rate = loglog_slope(&mids, &level_distances.iter().map(|e| e.mean).collect::<Vec<_>>());

    let mut factors = step_factors.to_vec();
    factors.sort_unstable_by(|a, b| b.cmp(a));
    let finest = fields.last().expect("at least two levels");
    let step_sols: Vec<SolutionPaths> =
        factors.iter().map(|&f| euler_solve(&ens.subsample(f)?, finest, x0)).collect::<Result<_>>()?;
    let step_distances: Vec<Estimate> = step_sols
        .windows(2)
        .zip(factors.windows(2))
        .map(|(w, f)| Estimate::from_values(&keep(sup_distance(&w[0], &w[1], f[0] / f[1]))))
        .collect();
    let dts: Vec<f64> = factors.windows(2).map(|f| f[0] as f64 * ens.grid.dt()).collect();
    let fitted_step_rate = loglog_slope(&dts, &step_distances.iter().map(|e| e.mean).collect::<Vec<_>>());

    let holder = holder_table(sols.last().expect("nonempty"), 0);
    let holder_slope = loglog_slope(
        &holder.iter().map(|h| h.0).collect::<Vec<_>>(),
        &holder.iter().map(|h| h.1.mean).collect::<Vec<_>>(),
    );
    Ok(ConvergenceTable {
        levels: levels.to_vec(),
        level_distances,
        level_ratios,
        fitted_level_rate,
        step_factors: factors,
        step_distances,
        fitted_step_rate,
        holder_table: holder,
        holder_slope,
        excluded_paths: excluded.len(),
    })
}
