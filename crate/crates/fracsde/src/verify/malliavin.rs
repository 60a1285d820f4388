//! Jacobian cross-checks and the compactness-criterion quantities.

use serde::{Deserialize, Serialize};

use super::{median_spread, stable_if, CheckReport, ReportBuilder, Sweep};
use crate::drift::{
    bump_response, jacobian_all_theta, jacobian_ode, loglog_slope, malliavin_transfer, picard_series, solve_path,
    DriftField,
};
use crate::error::{Error, Result};
use crate::fbm::FbmEnsemble;
use crate::frac_calc::{singular_dot, KhStar};
use crate::mc::{par_map, Estimate};
use crate::regimes::RegimeParams;

/// β = ¼ min(1 − Hd/p − 2/q, 2 − 2H − Hd/p − 2/q).
pub fn compactness_beta(r: &RegimeParams) -> f64 {
    let hdp = r.hurst * r.d as f64 / r.p;
    let two_q = 2.0 / r.q;
    0.25 * (1.0 - hdp - two_q).min(2.0 - 2.0 * r.hurst - hdp - two_q)
}

/// Errors below this are attributed to cancellation in the quotient.
pub const BUMP_FLOOR: f64 = 1e-9;

fn solved(ens: &FbmEnsemble, b: &DriftField, p: usize, x0: &[f64]) -> Option<Vec<f64>> {
    let mut out = vec![f64::NAN; ens.path_len()];
    solve_path(b, &ens.grid, ens.path(p), 0, x0, &mut out).then_some(out)
}

/// max over paths, nodes t ≥ θ and entries of |bump difference quotient −
/// J_{θ,t}| for each ε. First order means a log-log slope near 1. The
/// Euler Jacobian is the exact derivative of the discrete map, so the only
/// floor is rounding in the difference quotient, taken as `BUMP_FLOOR`.
pub fn jacobian_bump_check(
    ens: &FbmEnsemble,
    b: &DriftField,
    x0: &[f64],
    theta: f64,
    eps_list: &[f64],
    n_paths: usize,
) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("jacobian_bump");
    let d = ens.dim;
    let g = ens.grid;
    let n_paths = n_paths.min(ens.n_paths);
    let per_path = par_map(n_paths, 4, |p| -> Result<Vec<f64>> {
        let path = solved(ens, b, p, x0).ok_or_else(|| Error::Numeric(format!("path {p} blew up")))?;
        let jac = jacobian_ode(&path, b, &g, theta)?;
        let node = jac.theta_node;
        let mut errs = Vec::with_capacity(eps_list.len());
        for &eps in eps_list {
            let mut worst: f64 = 0.0;
            for k in 0..d {
                let resp = bump_response(b, &g, ens.path(p), x0, node, k, eps)?;
                for i in node..g.n_nodes() {
                    let j = jac.at(i);
                    for l in 0..d {
                        worst = worst.max((resp[i * d + l] - j[l * d + k]).abs());
                    }
                }
            }
            errs.push(worst);
        }
        Ok(errs)
    });
    let mut errs = vec![0.0f64; eps_list.len()];
    for r in per_path {
        for (e, v) in errs.iter_mut().zip(r?) {
            *e = e.max(v);
        }
    }
    let floor = BUMP_FLOOR;
    let above: Vec<(f64, f64)> = eps_list.iter().copied().zip(errs.iter().copied()).filter(|(_, e)| *e > floor).collect();
    let slope = if above.len() >= 2 {
        loglog_slope(&above.iter().map(|p| p.0).collect::<Vec<_>>(), &above.iter().map(|p| p.1).collect::<Vec<_>>())
    } else {
        f64::NAN
    };
    let mut sweep = Sweep::new(&["eps", "max_error"]);
    for (e, v) in eps_list.iter().zip(&errs) {
        sweep.push(vec![*e, *v]);
    }
    let worst = errs.iter().copied().fold(0.0, f64::max);
    // error / ε at the smallest ε is the first-order constant
    let (ei, emin) = eps_list.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &e)| if e < a.1 { (i, e) } else { a });
    rep.tol("slope_min", 0.8).tol("floor", floor).value("slope", slope).value("max_error", worst);
    rep.constant(errs[ei] / emin, vec![theta, emin]).sweep(sweep);
    let first_order = slope.is_nan() || (0.8..=1.2).contains(&slope);
    let ok = first_order && errs.iter().zip(eps_list).all(|(e, eps)| *e <= 10.0 * errs[ei] / emin * eps + floor);
    Ok(rep.finish(stable_if(ok)))
}

/// Order-`order` Picard sum against the Jacobian on the first `n_paths`
/// paths; passes when every difference is within the computed tail bound.
pub fn picard_check(
    ens: &FbmEnsemble,
    b: &DriftField,
    x0: &[f64],
    theta_node: usize,
    order: usize,
    n_paths: usize,
) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("picard_series");
    let n_paths = n_paths.min(ens.n_paths);
    let checks = par_map(n_paths, 8, |p| -> Result<_> {
        let path = solved(ens, b, p, x0).ok_or_else(|| Error::Numeric(format!("path {p} blew up")))?;
        picard_series(&path, b, &ens.grid, theta_node, order)
    });
    let mut worst_ratio = 0.0f64;
    let mut at = 0;
    let mut ok = true;
    let mut sweep = Sweep::new(&["path", "max_difference", "tail_bound"]);
    for (p, c) in checks.into_iter().enumerate() {
        let c = c?;
        sweep.push(vec![p as f64, c.max_difference, c.tail_bound]);
        ok &= c.max_difference <= c.tail_bound * (1.0 + 1e-9) + 1e-14;
        let r = if c.tail_bound > 0.0 { c.max_difference / c.tail_bound } else { 0.0 };
        if r > worst_ratio {
            worst_ratio = r;
            at = p;
        }
    }
    rep.value("order", order as f64).constant(worst_ratio, vec![at as f64]).sweep(sweep);
    Ok(rep.finish(super::pass_if(ok)))
}

/// The three compactness quantities at one mollification level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactnessLevel {
    pub level: f64,
    /// E‖X_T‖².
    pub second_moment: Estimate,
    /// ∫_0^T E‖D_θ X_T‖² dθ.
    pub derivative_energy: Estimate,
    /// ∫∫ E‖D_θ X_T − D_θ′ X_T‖² / |θ − θ′|^{1+2β} dθ dθ′.
    pub besov: Estimate,
}

/// Exact ∫∫ over the cell pair at distance k (in steps) of |θ−θ′|^{−1−2β},
/// in units of h^{1−2β}; cells are [i − ½, i + ½].
fn cell_pair_weights(n: usize, beta: f64) -> Vec<f64> {
    let e = 1.0 - 2.0 * beta;
    let phi = |u: f64| if u <= 0.0 { 0.0 } else { u.powf(e) / (-2.0 * beta * e) };
    (0..=n).map(|k| if k == 0 { 0.0 } else { phi(k as f64 + 1.0) - 2.0 * phi(k as f64) + phi(k as f64 - 1.0) }).collect()
}

/// Per-level compactness quantities for `fields` (label, drift) on the
/// common ensemble, with D_θ X_T = K_H*(θ ↦ J_{θ,T}). Interior nodes carry
/// D; the double integral treats it as constant on each node's cell.
/// Stable when every quantity stays within a factor `spread_tol` of its
/// median across levels.
pub fn compactness_quantities(
    ens: &FbmEnsemble,
    fields: &[(f64, DriftField)],
    x0: &[f64],
    beta: f64,
    spread_tol: f64,
) -> Result<(Vec<CompactnessLevel>, CheckReport)> {
    let mut rep = ReportBuilder::new("compactness_quantities");
    if !(beta > 0.0 && beta < 0.5) {
        return Err(Error::domain(format!("β = {beta} must lie in (0, 1/2)")));
    }
    let g = ens.grid;
    let d = ens.dim;
    let n = g.n_steps;
    let h = g.dt();
    let hurst = g.hurst;
    let op = KhStar::new(hurst, g.horizon, n)?;
    let w = cell_pair_weights(n, beta);
    let w_scale = h.powf(1.0 - 2.0 * beta);
    let ones = vec![1.0; n + 1];
    let mut levels = Vec::new();
    let mut sweep = Sweep::new(&["level", "second_moment", "derivative_energy", "besov"]);
    for (label, b) in fields {
        let rows = par_map(ens.n_paths, 8, |p| -> Result<Option<(f64, f64, f64)>> {
            let Some(path) = solved(ens, b, p, x0) else { return Ok(None) };
            let xt = &path[n * d..(n + 1) * d];
            let q1: f64 = xt.iter().map(|v| v * v).sum();
            let field = jacobian_all_theta(&path, b, &g, n)?;
            let dx = malliavin_transfer(&field, &op, d)?;
            let d2 = d * d;
            let norm2: Vec<f64> = (0..=n).map(|i| (0..d2).map(|k| dx.get(i, k).powi(2)).sum()).collect();
            let e = 2.0 * hurst - 1.0;
            let q2 = singular_dot(&norm2, &ones, h, e, e);
            let mut q3 = 0.0;
            for i in 1..n {
                for j in (i + 1)..n {
                    let diff: f64 = (0..d2).map(|k| (dx.get(i, k) - dx.get(j, k)).powi(2)).sum();
                    q3 += w[j - i] * diff;
                }
            }
            Ok(Some((q1, q2, 2.0 * w_scale * q3)))
        });
        let mut a = Vec::new();
        let mut bb = Vec::new();
        let mut c = Vec::new();
        for r in rows {
            if let Some((x, y, z)) = r? {
                a.push(x);
                bb.push(y);
                c.push(z);
            }
        }
        let lvl = CompactnessLevel {
            level: *label,
            second_moment: Estimate::from_values(&a),
            derivative_energy: Estimate::from_values(&bb),
            besov: Estimate::from_values(&c),
        };
        sweep.push(vec![*label, lvl.second_moment.mean, lvl.derivative_energy.mean, lvl.besov.mean]);
        levels.push(lvl);
    }
    let spreads = [
        median_spread(&levels.iter().map(|l| l.second_moment.mean).collect::<Vec<_>>()),
        median_spread(&levels.iter().map(|l| l.derivative_energy.mean).collect::<Vec<_>>()),
        median_spread(&levels.iter().map(|l| l.besov.mean).collect::<Vec<_>>()),
    ];
    let worst = spreads.iter().copied().fold(1.0, f64::max);
    rep.tol("median_spread", spread_tol)
        .value("spread_second_moment", spreads[0])
        .value("spread_derivative_energy", spreads[1])
        .value("spread_besov", spreads[2])
        .value("beta", beta);
    let max_besov = levels.iter().map(|l| l.besov.mean).fold(f64::NEG_INFINITY, f64::max);
    rep.constant(max_besov, vec![beta]).sweep(sweep);
    let finite = levels.iter().all(|l| l.besov.mean.is_finite() && l.derivative_energy.mean.is_finite());
    Ok((levels, rep.finish(stable_if(finite && worst <= spread_tol))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, QuadSpec};

    #[test]
    fn cell_weights_match_quadrature() {
        let beta = 0.15;
        let w = cell_pair_weights(4, beta);
        for k in 1..4usize {
            let kf = k as f64;
            let v = integrate(
                |x| integrate(|y| (y - x).powf(-1.0 - 2.0 * beta), kf - 0.5, kf + 0.5, &QuadSpec::default()).value,
                -0.5,
                0.5,
                &QuadSpec::default(),
            )
            .value;
            if k > 1 {
                assert!((w[k] - v).abs() < 1e-9 * v, "k={k}: {} vs {v}", w[k]);
            } else {
                // adjacent cells touch, the integral is still finite
                assert!(w[k].is_finite() && w[k] > 0.0);
            }
        }
    }

    #[test]
    fn beta_quarter_point() {
        let r = RegimeParams::new(0.3, 1, 4.0, f64::INFINITY).unwrap();
        assert!((compactness_beta(&r) - 0.25 * 0.925).abs() < 1e-12);
    }
}
