//! Empirical Hölder exponents and weighted Sobolev norms of the flow.

use serde::{Deserialize, Serialize};

use super::{median_spread, pass_if, stable_if, CheckReport, ReportBuilder, Sweep};
use crate::drift::{loglog_slope, FlowTable};
use crate::error::{Error, Result};
use crate::mc::{compensated_sum, Estimate};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn gauss_weight(x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (-0.5 * r2).exp() / (2.0 * std::f64::consts::PI).powf(0.5 * x.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRegularity {
    pub p1: f64,
    /// (|x_1 − x_2|, E|X^{x_1} − X^{x_2}|^{p_1}) at s = s_0, t = T, for
    /// dyadic offsets from the middle grid point.
    pub spatial: Vec<(f64, f64)>,
    pub spatial_slope: f64,
    /// (|t_1 − t_2|, E|X_{s,t_1} − X_{s,t_2}|^{p_1}) on dyadic lags.
    pub time: Vec<(f64, f64)>,
    pub time_slope: f64,
    /// (|s_1 − s_2|, E|X_{s_1,T} − X_{s_2,T}|^{p_1}).
    pub start: Vec<(f64, f64)>,
    pub start_slope: f64,
    /// Per-path ‖X_{s_0,T}‖²_{W^{1,p_1}(w)}.
    pub sobolev_sq: Estimate,
    pub sobolev_norm: f64,
    /// max |‖ΔX‖/‖Δx‖ − 1| over neighbouring grid points and paths.
    pub derivative_deviation: f64,
}

fn slope_of(pts: &[(f64, f64)]) -> f64 {
    loglog_slope(&pts.iter().map(|p| p.0).collect::<Vec<_>>(), &pts.iter().map(|p| p.1).collect::<Vec<_>>())
}

/// Hölder slopes of the flow in x, t and s, and the weighted Sobolev norm
/// with the standard Gaussian weight w.
///
/// `x_grid` of the table must lie on a line with spacing along it; the
/// spatial derivative is the difference quotient between neighbours. The
/// check passes when the spatial slope is at least p_1(1 − tol) and the time
/// and start slopes are at least p_1 · `time_exponent` · (1 − tol).
pub fn empirical_flow_regularity(
    flow: &FlowTable,
    p1: f64,
    time_exponent: f64,
    tol: f64,
) -> Result<(FlowRegularity, CheckReport)> {
    let mut rep = ReportBuilder::new("flow_regularity");
    let nx = flow.x_grid.len();
    if nx < 2 || flow.s_nodes.is_empty() {
        return Err(Error::Usage("flow regularity needs at least two initial points and one start time".into()));
    }
    let d = flow.dim;
    let n = flow.grid.n_steps;
    let kept: Vec<usize> = (0..flow.n_paths).filter(|p| !flow.flagged.contains(p)).collect();
    let np = kept.len() as f64;
    let at = |p: usize, si: usize, xi: usize, node: usize| &flow.trajectory(p, si, xi)[node * d..(node + 1) * d];

    // dyadic offsets from the middle point keep the pairs in the Lipschitz range
    let mid = nx / 2;
    let mut spatial = Vec::new();
    let mut off = 1;
    while mid + off < nx {
        let m = compensated_sum(kept.iter().map(|&p| dist(at(p, 0, mid + off, n), at(p, 0, mid, n)).powf(p1))) / np;
        spatial.push((dist(&flow.x_grid[mid + off], &flow.x_grid[mid]), m));
        off *= 2;
    }

    let s0 = flow.s_nodes[0];
    let mut time = Vec::new();
    let mut lag = 1;
    while lag <= (n - s0) / 4 {
        let count = (n - s0 + 1 - lag) as f64;
        let m = compensated_sum(kept.iter().map(|&p| {
            compensated_sum((s0..=n - lag).map(|i| dist(at(p, 0, 0, i + lag), at(p, 0, 0, i)).powf(p1))) / count
        })) / np;
        time.push((lag as f64 * flow.grid.dt(), m));
        lag *= 2;
    }

    let mut start = Vec::new();
    for a in 0..flow.s_nodes.len() {
        for b in (a + 1)..flow.s_nodes.len() {
            let gap = (flow.grid.time(flow.s_nodes[b]) - flow.grid.time(flow.s_nodes[a])).abs();
            if gap > 0.0 {
                let m = compensated_sum(kept.iter().map(|&p| dist(at(p, a, 0, n), at(p, b, 0, n)).powf(p1))) / np;
                start.push((gap, m));
            }
        }
    }
    start.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut dev: f64 = 0.0;
    let per_path: Vec<f64> = kept
        .iter()
        .map(|&p| {
            let mut acc = 0.0;
            for k in 0..nx {
                let x = &flow.x_grid[k];
                let dx = if k + 1 < nx { dist(&flow.x_grid[k + 1], x) } else { dist(x, &flow.x_grid[k - 1]) };
                let xv = at(p, 0, k, n);
                acc += gauss_weight(x) * xv.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p1) * dx;
                if k + 1 < nx {
                    let deriv = dist(at(p, 0, k + 1, n), xv) / dx;
                    dev = dev.max((deriv - 1.0).abs());
                    let mid: Vec<f64> = x.iter().zip(&flow.x_grid[k + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
                    acc += gauss_weight(&mid) * deriv.powf(p1) * dx;
                }
            }
            acc.powf(2.0 / p1)
        })
        .collect();
    let sobolev_sq = Estimate::from_values(&per_path);

    let out = FlowRegularity {
        p1,
        spatial_slope: slope_of(&spatial),
        time_slope: slope_of(&time),
        start_slope: if start.len() >= 2 { slope_of(&start) } else { f64::NAN },
        spatial,
        time,
        start,
        sobolev_norm: sobolev_sq.mean.sqrt(),
        sobolev_sq,
        derivative_deviation: dev,
    };
    let need_t = p1 * time_exponent * (1.0 - tol);
    let ok_x = out.spatial_slope >= p1 * (1.0 - tol);
    let ok_t = out.time_slope >= need_t;
    let ok_s = out.start_slope.is_nan() || out.start_slope >= need_t;
    let mut sweep = Sweep::new(&["kind", "gap", "moment"]);
    for (code, tab) in [(0.0, &out.spatial), (1.0, &out.time), (2.0, &out.start)] {
        for &(g, m) in tab.iter() {
            sweep.push(vec![code, g, m]);
        }
    }
    rep.tol("slope_slack", tol)
        .value("spatial_slope", out.spatial_slope)
        .value("time_slope", out.time_slope)
        .value("start_slope", out.start_slope)
        .value("required_time_slope", need_t)
        .value("sobolev_norm", out.sobolev_norm)
        .value("derivative_deviation", dev);
    rep.constant(out.sobolev_norm, vec![flow.grid.time(s0), flow.grid.horizon]).sweep(sweep);
    let verdict = pass_if(ok_x && ok_t && ok_s);
    Ok((out, rep.finish(verdict)))
}

/// Weighted Sobolev norms across mollification levels, stable when each is
/// within a factor `spread_tol` of the median.
pub fn sobolev_level_stability(norms: &[(f64, f64)], spread_tol: f64) -> CheckReport {
    let mut rep = ReportBuilder::new("sobolev_level_stability");
    let vals: Vec<f64> = norms.iter().map(|n| n.1).collect();
    let spread = median_spread(&vals);
    let mut sweep = Sweep::new(&["level", "sobolev_norm"]);
    let mut worst = (f64::NEG_INFINITY, 0.0);
    for &(l, v) in norms {
        sweep.push(vec![l, v]);
        if v > worst.0 {
            worst = (v, l);
        }
    }
    rep.tol("median_spread", spread_tol).value("median_spread", spread).constant(worst.0, vec![worst.1]).sweep(sweep);
    let ok = vals.iter().all(|v| v.is_finite()) && spread <= spread_tol;
    rep.finish(stable_if(ok))
}
