//! Joint-density bounds and product moments of fBm marginals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{pass_if, relative_spread, stable_if, CheckReport, ReportBuilder, Sweep};
use crate::error::{Error, Result};
use crate::fbm::covariance;
use crate::quad::{integrate, tensor_gk15, QuadSpec};

const MAX_LATTICE: f64 = 5e7;

/// Joint law of (B_{t_1}, …, B_{t_n}) for one coordinate.
struct JointGaussian {
    n: usize,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl JointGaussian {
    fn new(times: &[f64], hurst: f64) -> Result<Self> {
        let n = times.len();
        let mut r = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] = covariance(times[i], times[j], hurst)?;
            }
        }
        let chol = r
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("covariance matrix is not positive definite".into()))?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        let log_norm = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self { n, precision, log_norm })
    }

    fn py(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.precision[(i, j)] * x[j]).sum()).collect()
    }

    fn density(&self, x: &[f64]) -> f64 {
        let y = self.py(x);
        let q: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        (self.log_norm - 0.5 * q).exp()
    }

    /// ∂_S p / p for the index set S, |S| ≤ 3 (Gaussian Hermite forms).
    fn derivative_factor(&self, x: &[f64], set: &[usize]) -> f64 {
        let y = self.py(x);
        let p = |i: usize, j: usize| self.precision[(i, j)];
        match *set {
            [] => 1.0,
            [i] => -y[i],
            [i, j] => y[i] * y[j] - p(i, j),
            [i, j, k] => -y[i] * y[j] * y[k] + p(i, j) * y[k] + p(i, k) * y[j] + p(j, k) * y[i],
            _ => unreachable!("at most three derivative indices"),
        }
    }
}

fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.len() > 3 {
        return Err(Error::domain(format!("need 1 to 3 times, got {}", times.len())));
    }
    if !(times[0] > 0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain(format!("times must be positive and strictly increasing: {times:?}")));
    }
    Ok(())
}

fn validate_orders(orders: &[u8], n: usize) -> Result<()> {
    if orders.len() != n || orders.iter().any(|&a| a > 1) {
        return Err(Error::domain(format!("need {n} derivative orders in {{0, 1}}, got {orders:?}")));
    }
    Ok(())
}

fn gaps(times: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    times
        .iter()
        .map(|&t| {
            let g = t - prev;
            prev = t;
            g
        })
        .collect()
}

/// sup over a lattice of |∂^α p(x)| divided by
/// ∏_j g_j^{−(d+|α_j|)H} exp(−|x_j − x_{j−1}|² / (4 g_j^{2H})), g_j = t_j − t_{j−1}.
///
/// Coordinates are independent, so p factorizes over them; the derivatives
/// act on coordinate 0. The implied constant is the lattice supremum.
pub fn check_density_bound(
    times: &[f64],
    hurst: f64,
    d: usize,
    half_width: f64,
    resolution: usize,
    orders: &[u8],
) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("density_bound");
    validate_times(times)?;
    let n = times.len();
    validate_orders(orders, n)?;
    if d == 0 || resolution < 2 {
        return Err(Error::domain("need d ≥ 1 and at least two lattice points per axis"));
    }
    let dims = n * d;
    if (resolution as f64).powi(dims as i32) > MAX_LATTICE {
        return Err(Error::Usage(format!("lattice {resolution}^{dims} is too large")));
    }
    let law = JointGaussian::new(times, hurst)?;
    let g = gaps(times);
    let deriv_set: Vec<usize> = (0..n).filter(|&j| orders[j] == 1).collect();
    let log_pre: f64 =
        (0..n).map(|j| -((d as f64) + orders[j] as f64) * hurst * g[j].ln()).sum();
    let axis: Vec<f64> =
        (0..resolution).map(|i| -half_width + 2.0 * half_width * i as f64 / (resolution - 1) as f64).collect();
    let total = resolution.pow(dims as u32);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut x = vec![0.0; dims];
    let mut col = vec![0.0; n];
    for idx in 0..total {
        let mut r = idx;
        for v in x.iter_mut() {
            *v = axis[r % resolution];
            r /= resolution;
        }
        // x is time-major: x[j * d + k]
        let mut dens = 1.0;
        for k in 0..d {
            for j in 0..n {
                col[j] = x[j * d + k];
            }
            dens *= law.density(&col);
            if k == 0 {
                dens *= law.derivative_factor(&col, &deriv_set).abs();
            }
        }
        let mut expo = 0.0;
        for j in 0..n {
            let sq: f64 = (0..d)
                .map(|k| {
                    let prev = if j == 0 { 0.0 } else { x[(j - 1) * d + k] };
                    (x[j * d + k] - prev).powi(2)
                })
                .sum();
            expo -= sq / (4.0 * g[j].powf(2.0 * hurst));
        }
        let ratio = dens / (log_pre + expo).exp();
        if ratio > best.0 {
            best = (ratio, x.clone());
        }
    }
    rep.constant(best.0, best.1).value("lattice_points", total as f64);
    let ok = best.0.is_finite();
    Ok(rep.finish(pass_if(ok)))
}

/// Density constants for times t_1 + k·gap across `gap_set`; stable when
/// max/min − 1 ≤ `tol`.
pub fn density_gap_sweep(
    hurst: f64,
    d: usize,
    t1: f64,
    gap_set: &[f64],
    half_width: f64,
    resolution: usize,
    orders: &[u8],
    tol: f64,
) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("density_gap_sweep");
    let n = orders.len();
    let mut sweep = Sweep::new(&["gap", "constant"]);
    let mut cs = Vec::new();
    let mut worst = (f64::NEG_INFINITY, Vec::new());
    for &gap in gap_set {
        let times: Vec<f64> = (0..n).map(|k| t1 + k as f64 * gap).collect();
        let r = check_density_bound(&times, hurst, d, half_width, resolution, orders)?;
        sweep.push(vec![gap, r.implied_constant]);
        cs.push(r.implied_constant);
        if r.implied_constant > worst.0 {
            let mut at = vec![gap];
            at.extend(r.worst_point);
            worst = (r.implied_constant, at);
        }
    }
    let spread = relative_spread(&cs);
    rep.tol("relative_spread", tol).value("relative_spread", spread).constant(worst.0, worst.1).sweep(sweep);
    Ok(rep.finish(stable_if(spread <= tol)))
}

/// Scalar field amp · exp(−|x − c·1|² / width²) on ℝ^d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussBump {
    pub amp: f64,
    pub width: f64,
    pub center: f64,
}

impl GaussBump {
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| (v - self.center).powi(2)).sum();
        self.amp * (-r2 / (self.width * self.width)).exp()
    }

    /// ∂^α along coordinate 0, α ∈ {0, 1}.
    fn deriv(&self, x: &[f64], order: u8) -> f64 {
        let v = self.value(x);
        if order == 0 {
            v
        } else {
            -2.0 * (x[0] - self.center) / (self.width * self.width) * v
        }
    }
}

/// ‖b‖_{L^p(ℝ^d)} = amp (π w² / p)^{d/(2p)}, amp for p = ∞.
pub fn bump_lp_norm(b: &GaussBump, d: usize, p: f64) -> f64 {
    if p.is_infinite() {
        return b.amp.abs();
    }
    b.amp.abs() * (std::f64::consts::PI * b.width * b.width / p).powf(d as f64 / (2.0 * p))
}

/// |E ∏_j ∂^{α_j} b_j(B_{s_j})| divided by ∏_j ‖b_j‖_{L^p} g_j^{−H|α_j| − Hd/p}.
///
/// The expectation is a tensor Gauss–Kronrod integral against the joint
/// density in the variables x_j − c_j; m·d ≤ 3.
pub fn check_product_moment(
    times: &[f64],
    bumps: &[GaussBump],
    orders: &[u8],
    hurst: f64,
    d: usize,
    p: f64,
) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("product_moment");
    validate_times(times)?;
    let m = times.len();
    validate_orders(orders, m)?;
    if bumps.len() != m {
        return Err(Error::domain(format!("{} bumps for {m} times", bumps.len())));
    }
    let dims = m * d;
    if dims > 3 {
        return Err(Error::Usage(format!("m·d = {dims} exceeds the quadrature limit of 3")));
    }
    let law = JointGaussian::new(times, hurst)?;
    let g = gaps(times);
    let wmax = bumps.iter().map(|b| b.width).fold(0.0, f64::max);
    let half = 6.5 * wmax;
    // resolve the narrowest conditional spread of the joint law
    let sigma_min = g.iter().map(|gj| gj.powf(hurst)).fold(f64::INFINITY, f64::min).min(wmax);
    let cap = [0, 400, 60, 24][dims];
    let panels = ((2.0 * half / (0.5 * sigma_min)).ceil() as usize).clamp(8, cap);
    let mut col = vec![0.0; m];
    let mut xj = vec![0.0; d];
    let lhs = tensor_gk15(
        |y: &[f64]| {
            let mut prod = 1.0;
            for j in 0..m {
                for k in 0..d {
                    xj[k] = y[j * d + k] + bumps[j].center;
                }
                prod *= bumps[j].deriv(&xj, orders[j]);
            }
            let mut dens = 1.0;
            for k in 0..d {
                for j in 0..m {
                    col[j] = y[j * d + k] + bumps[j].center;
                }
                dens *= law.density(&col);
            }
            prod * dens
        },
        dims,
        -half,
        half,
        panels,
    )
    .abs();
    let rhs: f64 = (0..m)
        .map(|j| bump_lp_norm(&bumps[j], d, p) * g[j].powf(-hurst * orders[j] as f64 - hurst * d as f64 / p))
        .product();
    let c = lhs / rhs;
    rep.value("lhs", lhs).value("rhs_without_constant", rhs).value("panels", panels as f64);
    rep.constant(c, times.to_vec());
    Ok(rep.finish(pass_if(c.is_finite())))
}

/// Implied constants for times s_1 + k·gap across `gap_set`; stable when
/// max/min − 1 ≤ `tol`.
#[allow(clippy::too_many_arguments)]
pub fn product_moment_gap_sweep(
    s1: f64,
    gap_set: &[f64],
    bumps: &[GaussBump],
    orders: &[u8],
    hurst: f64,
    d: usize,
    p: f64,
    tol: f64,
) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("product_moment_gap_sweep");
    let m = orders.len();
    let mut sweep = Sweep::new(&["gap", "lhs", "constant"]);
    let mut cs = Vec::new();
    let mut worst = (f64::NEG_INFINITY, Vec::new());
    for &gap in gap_set {
        let times: Vec<f64> = (0..m).map(|k| s1 + k as f64 * gap).collect();
        let r = check_product_moment(&times, bumps, orders, hurst, d, p)?;
        sweep.push(vec![gap, r.value("lhs"), r.implied_constant]);
        cs.push(r.implied_constant);
        if r.implied_constant > worst.0 {
            worst = (r.implied_constant, vec![gap]);
        }
    }
    let spread = relative_spread(&cs);
    rep.tol("relative_spread", tol).value("relative_spread", spread).constant(worst.0, worst.1).sweep(sweep);
    Ok(rep.finish(stable_if(spread <= tol)))
}

/// E b′(B_s) two ways for d = 1: direct quadrature, and the Gaussian
/// integration-by-parts form E[b(B_s) B_s] / s^{2H}.
pub fn product_moment_ibp(bump: &GaussBump, s: f64, hurst: f64, tol: f64) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("product_moment_ibp");
    if !(s > 0.0) {
        return Err(Error::domain(format!("time {s} must be positive")));
    }
    let var = s.powf(2.0 * hurst);
    let sd = var.sqrt();
    let phi = |x: f64| (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let spec = QuadSpec::with_tol(1e-15, 1e-13);
    let lo = (bump.center - 12.0 * bump.width).min(-12.0 * sd);
    let hi = (bump.center + 12.0 * bump.width).max(12.0 * sd);
    let split = |f: &dyn Fn(f64) -> f64| {
        let mut cuts = vec![lo, hi];
        for c in [0.0, bump.center] {
            if c > lo && c < hi {
                cuts.push(c);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2).map(|w| integrate(f, w[0], w[1], &spec).value).sum::<f64>()
    };
    let direct = split(&|x| bump.deriv(&[x], 1) * phi(x));
    let ibp = split(&|x| bump.value(&[x]) * x * phi(x)) / var;
    let err = (direct - ibp).abs();
    rep.tol("abs_error", tol).value("quadrature", direct).value("ibp", ibp).value("abs_error", err);
    rep.constant(err, vec![s]);
    Ok(rep.finish(pass_if(err <= tol)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_time_constant() {
        let r = check_density_bound(&[0.7], 0.3, 1, 3.0, 61, &[0]).unwrap();
        assert!((r.implied_constant - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert_eq!(r.worst_point, vec![0.0]);
    }

    #[test]
    fn brownian_factorizes() {
        let one = check_density_bound(&[0.4], 0.5, 1, 3.0, 41, &[0]).unwrap().implied_constant;
        let two = check_density_bound(&[0.4, 0.9], 0.5, 1, 3.0, 41, &[0, 0]).unwrap().implied_constant;
        assert!((two - one * one).abs() < 1e-6);
    }

    #[test]
    fn derivative_factor_matches_difference() {
        let law = JointGaussian::new(&[0.3, 0.5, 0.8], 0.3).unwrap();
        let x = [0.2, -0.1, 0.4];
        let h = 1e-4;
        let shift = |i: usize, s: f64| {
            let mut y = x;
            y[i] += s;
            y
        };
        // ∂_0 ∂_2 p by central differences
        let fd = (law.density(&shift_two(&x, 0, 2, h, h)) - law.density(&shift_two(&x, 0, 2, h, -h))
            - law.density(&shift_two(&x, 0, 2, -h, h))
            + law.density(&shift_two(&x, 0, 2, -h, -h)))
            / (4.0 * h * h);
        let exact = law.derivative_factor(&x, &[0, 2]) * law.density(&x);
        assert!((fd - exact).abs() < 1e-5 * exact.abs().max(1.0));
        let fd1 = (law.density(&shift(1, h)) - law.density(&shift(1, -h))) / (2.0 * h);
        assert!((fd1 - law.derivative_factor(&x, &[1]) * law.density(&x)).abs() < 1e-6);
    }

    fn shift_two(x: &[f64; 3], i: usize, j: usize, a: f64, b: f64) -> [f64; 3] {
        let mut y = *x;
        y[i] += a;
        y[j] += b;
        y
    }

    #[test]
    fn sup_bound_for_single_bump() {
        let b = GaussBump { amp: 1.0, width: 0.5, center: 0.2 };
        let r = check_product_moment(&[0.6], &[b], &[0], 0.3, 1, f64::INFINITY).unwrap();
        assert!(r.implied_constant <= 1.0);
        // E b(B_s) has the closed form amp · w / √(w² + 2σ²) · exp(−c²/(w² + 2σ²))
        let v = 0.6f64.powf(0.6);
        let want = 0.5 / (0.25 + 2.0 * v).sqrt() * (-0.04 / (0.25 + 2.0 * v)).exp();
        assert!((r.value("lhs") - want).abs() < 1e-10, "{} vs {want}", r.value("lhs"));
    }
}
