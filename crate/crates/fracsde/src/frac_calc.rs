//! Riemann–Liouville operators on uniform grids, the fBm operator K_H, its
//! inverse, and the transfer operator K_H* linking the two Malliavin
//! derivatives.
//!
//! Everything works column by column on piecewise-linear data, with the
//! power kernels integrated exactly on each cell (product integration).

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::FbmKernel;
use crate::special::gamma;

/// Vector-valued samples on a uniform grid over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub horizon: f64,
    pub n_steps: usize,
    pub dim: usize,
    /// Node-major values, `(n_steps + 1) * dim` entries.
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(horizon: f64, n_steps: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0) || n_steps == 0 || dim == 0 {
            return Err(Error::domain("grid function needs positive horizon, steps and dimension"));
        }
        if values.len() != (n_steps + 1) * dim {
            return Err(Error::domain(format!(
                "expected {} values, got {}",
                (n_steps + 1) * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("grid function values must be finite"));
        }
        Ok(Self { horizon, n_steps, dim, values })
    }

    /// Scalar function sampled at the nodes.
    pub fn from_fn(horizon: f64, n_steps: usize, f: impl Fn(f64) -> f64) -> Self {
        let h = horizon / n_steps as f64;
        let values = (0..=n_steps).map(|i| f(i as f64 * h)).collect();
        Self { horizon, n_steps, dim: 1, values }
    }

    pub fn zeros(horizon: f64, n_steps: usize, dim: usize) -> Self {
        Self { horizon, n_steps, dim, values: vec![0.0; (n_steps + 1) * dim] }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.dim + k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.get(i, k)).collect()
    }

    fn from_columns(&self, cols: Vec<Vec<f64>>) -> Self {
        let dim = cols.len();
        let mut values = vec![0.0; (self.n_steps + 1) * dim];
        for (k, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                values[i * dim + k] = *v;
            }
        }
        Self { horizon: self.horizon, n_steps: self.n_steps, dim, values }
    }

    fn map_columns(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        self.from_columns((0..self.dim).map(|k| f(&self.column(k))).collect())
    }

    /// a·self + b·other.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self { values, ..self.clone() }
    }

    /// Maximum absolute difference over nodes `from..`.
    pub fn sup_diff_from(&self, other: &Self, from: usize) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .skip(from * self.dim)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Product-trapezoid weights of I^alpha for piecewise-linear data at node n,
/// unit step, without the 1/Γ(α+2) factor: (a_0, a_1..a_{n-1}, a_n).
fn trapezoid_row(pw: &[f64], alpha: f64, n: usize, f: &[f64]) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let mut acc = (pw[n - 1] - (nf - 1.0 - alpha) * nf.powf(alpha)) * f[0] + f[n];
    for j in 1..n {
        let m = n - j;
        acc += (pw[m + 1] - 2.0 * pw[m] + pw[m - 1]) * f[j];
    }
    acc
}

fn rl_integral_col(f: &[f64], alpha: f64, h: f64) -> Vec<f64> {
    let n = f.len() - 1;
    let pw: Vec<f64> = (0..=n + 1).map(|k| (k as f64).powf(alpha + 1.0)).collect();
    let c = h.powf(alpha) / gamma(alpha + 2.0);
    (0..=n).map(|i| c * trapezoid_row(&pw, alpha, i, f)).collect()
}

/// Left-sided Riemann–Liouville integral of order alpha ∈ (0, 1].
pub fn rl_integral(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("integral order {alpha} outside (0, 1]")));
    }
    let h = f.dt();
    Ok(f.map_columns(|c| rl_integral_col(c, alpha, h)))
}

/// Coefficients of the interpolant Σ c_l (t/h)^{σ_l} through nodes 0..=3,
/// σ = (0, 1, α, α+1). Data in this span is differentiated exactly.
fn local_fit(f: &[f64], alpha: f64) -> Option<([f64; 4], [f64; 4])> {
    let sig = [0.0, 1.0, alpha, alpha + 1.0];
    let v = Matrix4::from_fn(|k, l| if k == 0 { if l == 0 { 1.0 } else { 0.0 } } else { (k as f64).powf(sig[l]) });
    let c = v.lu().solve(&Vector4::new(f[0], f[1], f[2], f[3]))?;
    Some(([c[0], c[1], c[2], c[3]], sig))
}

fn centred_derivative(g: &[f64], h: f64) -> Vec<f64> {
    let n = g.len() - 1;
    let mut d = vec![0.0; n + 1];
    if n == 1 {
        d[0] = (g[1] - g[0]) / h;
        d[1] = d[0];
        return d;
    }
    d[0] = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h);
    for i in 1..n {
        d[i] = (g[i + 1] - g[i - 1]) / (2.0 * h);
    }
    d[n] = (3.0 * g[n] - 4.0 * g[n - 1] + g[n - 2]) / (2.0 * h);
    d
}

fn rl_derivative_col(f: &[f64], alpha: f64, h: f64) -> Vec<f64> {
    let n = f.len() - 1;
    let fit = if n >= 3 { local_fit(f, alpha) } else { None };
    let Some((c, sig)) = fit else {
        return centred_derivative(&rl_integral_col(f, 1.0 - alpha, h), h);
    };
    // Near the origin I^{1−α}f behaves like t^{1−α}, t^{2−α}, which finite
    // differences resolve poorly; those components come from the fit.
    let rest: Vec<f64> = f
        .iter()
        .enumerate()
        .map(|(i, v)| v - (0..4).map(|l| c[l] * (i as f64).powf(sig[l])).sum::<f64>())
        .collect();
    let mut d = centred_derivative(&rl_integral_col(&rest, 1.0 - alpha, h), h);
    let ha = h.powf(-alpha);
    for l in 0..4 {
        if c[l] == 0.0 {
            continue;
        }
        let k = ha * c[l] * gamma(sig[l] + 1.0) / gamma(sig[l] + 1.0 - alpha);
        let e = sig[l] - alpha;
        for (i, di) in d.iter_mut().enumerate() {
            *di += k * if i == 0 {
                match e.partial_cmp(&0.0) {
                    Some(std::cmp::Ordering::Less) => f64::INFINITY,
                    Some(std::cmp::Ordering::Equal) => 1.0,
                    _ => 0.0,
                }
            } else {
                (i as f64).powf(e)
            };
        }
    }
    d
}

/// Left-sided Riemann–Liouville derivative of order alpha ∈ (0, 1): the
/// derivative of I^{1−alpha} f by centred differences (second-order
/// one-sided at the ends), after removing a local fit on 1, t, t^α, t^{α+1}
/// whose derivative is known in closed form. If f(0) ≠ 0 the value at node 0
/// is the signed infinity of the t^{−α} singularity.
pub fn rl_derivative(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("derivative order {alpha} outside (0, 1)")));
    }
    let h = f.dt();
    Ok(f.map_columns(|c| rl_derivative_col(c, alpha, h)))
}

fn check_hurst(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 0.5) {
        return Err(Error::UnsupportedRegime(format!("operator needs H in (0, 1/2), got {h}")));
    }
    Ok(())
}

/// Multiplies by s^e; node 0 is set to zero.
fn weight_power(c: &[f64], e: f64, h: f64) -> Vec<f64> {
    c.iter().enumerate().map(|(i, v)| if i == 0 { 0.0 } else { v * (i as f64 * h).powf(e) }).collect()
}

/// Factor relating the fractional-operator composition to the kernel
/// integral: ∫_0^t K_H(t,s) φ(s) ds = C_H Γ(H+½) · I^{2H} s^{½−H} I^{½−H} s^{H−½} φ.
pub fn kh_operator_scale(hurst: f64) -> Result<f64> {
    Ok(FbmKernel::new(hurst)?.c_h * gamma(hurst + 0.5))
}

/// (K_H φ)(t) = ∫_0^t K_H(t,s) φ(s) ds, evaluated as the scaled composition
/// C_H Γ(H+½) · I^{2H} s^{½−H} I^{½−H} s^{H−½} φ.
pub fn apply_kh(phi: &GridFunction, hurst: f64) -> Result<GridFunction> {
    check_hurst(hurst)?;
    let scale = kh_operator_scale(hurst)?;
    let h = phi.dt();
    Ok(phi.map_columns(|c| {
        let a = weight_power(c, hurst - 0.5, h);
        let b = rl_integral_col(&a, 0.5 - hurst, h);
        let c2 = weight_power(&b, 0.5 - hurst, h);
        rl_integral_col(&c2, 2.0 * hurst, h).into_iter().map(|v| scale * v).collect()
    }))
}

/// Inverse of [`apply_kh`]: s^{½−H} D^{½−H} s^{H−½} D^{2H} φ / (C_H Γ(H+½)),
/// for φ(0) = 0.
pub fn apply_kh_inverse(phi: &GridFunction, hurst: f64) -> Result<GridFunction> {
    check_hurst(hurst)?;
    let scale = kh_operator_scale(hurst)?;
    let h = phi.dt();
    Ok(phi.map_columns(|c| {
        let a = rl_derivative_col(c, 2.0 * hurst, h);
        let b = weight_power(&a, hurst - 0.5, h);
        let c2 = rl_derivative_col(&b, 0.5 - hurst, h);
        weight_power(&c2, 0.5 - hurst, h).into_iter().map(|v| v / scale).collect()
    }))
}

/// (K_H* φ)(s) = K_H(T,s) φ(s) + ∫_s^T (φ(t) − φ(s)) ∂K_H/∂t(t,s) dt.
///
/// The grid of `phi` runs over `[0, horizon]`. The integral uses
/// g(u) = (φ(u) − φ(s)) u^{H−½}, linear between nodes, against the exact
/// cell integrals of (u − s)^{H−3/2}; g vanishes at u = s, which keeps the
/// first cell finite. The endpoints carry no value (the kernel is singular
/// there) and are returned as zero, except that the last node is exact
/// zero whenever φ(T) = 0.
pub fn transfer_khstar(phi: &GridFunction, hurst: f64) -> Result<GridFunction> {
    KhStar::new(hurst, phi.horizon, phi.n_steps)?.apply(phi)
}

/// Precomputed [`transfer_khstar`] for a fixed grid, for repeated use
/// across paths.
#[derive(Debug, Clone, PartialEq)]
pub struct KhStar {
    hurst: f64,
    horizon: f64,
    n: usize,
    wl: Vec<f64>,
    wr: Vec<f64>,
    kt: Vec<f64>,
    tpow: Vec<f64>,
    /// C_H (H − ½) s^{½−H} h^{H−½} per node.
    pre: Vec<f64>,
}

impl KhStar {
    pub fn new(hurst: f64, horizon: f64, n: usize) -> Result<Self> {
        check_hurst(hurst)?;
        let kernel = FbmKernel::new(hurst)?;
        let h = horizon / n as f64;
        let (e0, e1) = (hurst - 1.5, hurst - 0.5);
        // Toeplitz cell weights in units of the step.
        let p0 = |lo: f64, hi: f64| (hi.powf(e1) - lo.powf(e1)) / e1;
        let p1 = |lo: f64, hi: f64| (hi.powf(hurst + 0.5) - lo.powf(hurst + 0.5)) / (hurst + 0.5);
        let mut wl = vec![0.0; n + 1];
        let mut wr = vec![0.0; n + 1];
        for a in 0..n {
            let (lo, hi) = (a as f64, a as f64 + 1.0);
            wr[a] = p1(lo, hi) - lo * if a == 0 { 0.0 } else { p0(lo, hi) };
            wl[a] = if a == 0 { 0.0 } else { hi * p0(lo, hi) - p1(lo, hi) };
        }
        let step_scale = h.powf(e0 + 1.0);
        let kt = (0..=n).map(|i| if i == 0 || i == n { 0.0 } else { kernel.eval(horizon, i as f64 * h) }).collect();
        let tpow = (0..=n).map(|i| (i as f64 * h).powf(e1)).collect();
        let coef = kernel.c_h * (hurst - 0.5);
        let pre = (0..=n).map(|i| coef * (i as f64 * h).powf(0.5 - hurst) * step_scale).collect();
        Ok(Self { hurst, horizon, n, wl, wr, kt, tpow, pre })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    /// K_H(T, s_i) at the interior nodes, zero at both ends.
    pub fn kernel_at_horizon(&self) -> &[f64] {
        &self.kt
    }

    pub fn apply_col(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n + 1];
        for i in 1..n {
            let mut acc = 0.0;
            for a in 0..(n - i) {
                let (m0, m1) = (i + a, i + a + 1);
                acc += self.wl[a] * (c[m0] - c[i]) * self.tpow[m0] + self.wr[a] * (c[m1] - c[i]) * self.tpow[m1];
            }
            out[i] = self.kt[i] * c[i] + self.pre[i] * acc;
        }
        out
    }

    pub fn apply(&self, phi: &GridFunction) -> Result<GridFunction> {
        if phi.n_steps != self.n || (phi.horizon - self.horizon).abs() > 1e-12 * self.horizon {
            return Err(Error::Usage(format!(
                "grid ({}, {}) does not match the transfer grid ({}, {})",
                phi.horizon, phi.n_steps, self.horizon, self.n
            )));
        }
        Ok(phi.map_columns(|c| self.apply_col(c)))
    }
}

/// ∫_0^T f g with power-law behaviour s^{e_left} in the first cell and
/// (T−s)^{e_right} in the last one, trapezoid in between. Node values at
/// the two ends are ignored.
pub fn singular_dot(f: &[f64], g: &[f64], h: f64, e_left: f64, e_right: f64) -> f64 {
    let n = f.len() - 1;
    if n < 2 {
        return 0.0;
    }
    let fg = |i: usize| f[i] * g[i];
    let mut acc = fg(1) * h / (1.0 + e_left) + fg(n - 1) * h / (1.0 + e_right);
    for i in 1..n - 1 {
        acc += 0.5 * h * (fg(i) + fg(i + 1));
    }
    acc
}
