//! Drift fields b(t, x): analytic, singular and mollified kinds, their mixed
//! L^p_x L^q_t norms, and the solvers driven by them.

mod profile;
mod solve;

pub use solve::{
    bump_response, convergence_study, euler_solve, holder_table, loglog_slope, jacobian_all_theta, jacobian_ode, malliavin_transfer, picard_series,
    solve_flow, solve_path, ConvergenceTable, FlowTable, JacobianSlice, PicardCheck, SolutionPaths,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, QuadSpec};
use crate::special;
use profile::{Geometry, Profile, Shape};

/// Drift families. Vector-valued kinds put the same scalar in every
/// component except `Linear` and `Peano`, which act coordinatewise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftKind {
    Zero,
    Constant { value: f64 },
    /// b(x) = −λx.
    Linear { lambda: f64 },
    /// amp · exp(−|x − c·1|² / width²).
    Bump { amp: f64, width: f64, center: f64 },
    /// |x|^{−γ} 1_{|x| ≤ R}.
    SingularPower { gamma: f64, radius: f64 },
    /// sign(x_i) |x_i|^α.
    Peano { alpha: f64 },
    /// Gaussian convolution of `base` at scale `eps`.
    Mollified { base: Box<DriftKind>, eps: f64 },
}

/// Serialized form of a drift field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub drift: DriftKind,
    pub dim: usize,
    /// Half-width L of the cube [−L, L]^d used for norms.
    pub box_half_width: f64,
}

/// A time-homogeneous drift on ℝ^d with its norm domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DriftSpec", into = "DriftSpec")]
pub struct DriftField {
    kind: DriftKind,
    dim: usize,
    box_half_width: f64,
    profile: Option<Arc<Profile>>,
}

impl From<DriftField> for DriftSpec {
    fn from(b: DriftField) -> Self {
        DriftSpec { drift: b.kind, dim: b.dim, box_half_width: b.box_half_width }
    }
}

impl TryFrom<DriftSpec> for DriftField {
    type Error = Error;
    fn try_from(s: DriftSpec) -> Result<Self> {
        DriftField::new(s.drift, s.dim, s.box_half_width)
    }
}

fn check_params(kind: &DriftKind) -> Result<()> {
    let bad = |m: String| Err(Error::domain(m));
    match kind {
        DriftKind::Bump { width, .. } if !(*width > 0.0) => bad(format!("bump width {width} must be positive")),
        DriftKind::SingularPower { gamma, radius } if !(*gamma > 0.0 && *radius > 0.0) => {
            bad(format!("singular power needs gamma > 0 and radius > 0, got ({gamma}, {radius})"))
        }
        DriftKind::Peano { alpha } if !(*alpha > 0.0 && *alpha < 1.0) => {
            bad(format!("Peano exponent {alpha} outside (0, 1)"))
        }
        DriftKind::Mollified { base, eps } => {
            if !(*eps > 0.0) {
                return bad(format!("mollification scale {eps} must be positive"));
            }
            if matches!(**base, DriftKind::Mollified { .. }) {
                return bad("nested mollification; combine the scales instead".into());
            }
            check_params(base)
        }
        _ => Ok(()),
    }
}

impl DriftField {
    pub fn new(kind: DriftKind, dim: usize, box_half_width: f64) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(Error::domain(format!("drift dimension {dim} outside 1..=3")));
        }
        if !(box_half_width > 0.0) {
            return Err(Error::domain("box half-width must be positive"));
        }
        check_params(&kind)?;
        let profile = match &kind {
            DriftKind::Mollified { base, eps } => match **base {
                DriftKind::SingularPower { gamma, radius } => {
                    let geom = if dim == 1 { Geometry::Even } else { Geometry::Radial(dim) };
                    Some(Arc::new(Profile::build(Shape::Truncated { gamma, radius }, geom, *eps, radius)?))
                }
                DriftKind::Peano { alpha } => {
                    let extent = 2.0 * box_half_width.max(1.0);
                    Some(Arc::new(Profile::build(Shape::Power { alpha }, Geometry::Odd, *eps, extent)?))
                }
                _ => None,
            },
            _ => None,
        };
        Ok(Self { kind, dim, box_half_width, profile })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(DriftKind::Zero, dim, 1.0).expect("valid")
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn box_half_width(&self) -> f64 {
        self.box_half_width
    }

    /// Raw singular kinds; these must be mollified before entering a solver.
    pub fn is_singular(&self) -> bool {
        matches!(self.kind, DriftKind::SingularPower { .. } | DriftKind::Peano { .. })
    }

    pub fn has_grad(&self) -> bool {
        !self.is_singular()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, DriftKind::Zero)
    }

    /// Gaussian convolution at scale `eps`; mollifying a mollified field
    /// combines the scales in quadrature.
    pub fn mollify(&self, eps: f64) -> Result<Self> {
        let kind = match &self.kind {
            DriftKind::Mollified { base, eps: e0 } => {
                DriftKind::Mollified { base: base.clone(), eps: (e0 * e0 + eps * eps).sqrt() }
            }
            k => DriftKind::Mollified { base: Box::new(k.clone()), eps },
        };
        Self::new(kind, self.dim, self.box_half_width)
    }

    /// Evaluates b(t, x) into `out`.
    pub fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            DriftKind::Mollified { base, eps } => self.eval_mollified(base, *eps, x, out),
            k => eval_plain(k, x, out),
        }
    }

    pub fn eval_vec(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval(t, x, &mut out);
        out
    }

    fn eval_mollified(&self, base: &DriftKind, eps: f64, x: &[f64], out: &mut [f64]) {
        match base {
            DriftKind::Bump { amp, width, center } => {
                let s2 = width * width + 2.0 * eps * eps;
                let pre = (width * width / s2).powf(0.5 * self.dim as f64);
                let r2: f64 = x.iter().map(|v| (v - center).powi(2)).sum();
                out.fill(amp * pre * (-r2 / s2).exp());
            }
            DriftKind::SingularPower { .. } => {
                let p = self.profile.as_ref().expect("profile built");
                out.fill(p.eval(norm(x)).0);
            }
            DriftKind::Peano { .. } => {
                let p = self.profile.as_ref().expect("profile built");
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.signum() * p.eval(v.abs()).0;
                }
            }
            k => eval_plain(k, x, out),
        }
    }

    /// Row-major d×d Jacobian ∂b_i/∂x_j.
    pub fn grad(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        out.fill(0.0);
        let fill_rows = |out: &mut [f64], g: &[f64]| {
            for i in 0..d {
                out[i * d..(i + 1) * d].copy_from_slice(g);
            }
        };
        let bump_grad = |out: &mut [f64], amp: f64, s2: f64, pre: f64, center: f64| {
            let r2: f64 = x.iter().map(|v| (v - center).powi(2)).sum();
            let v = amp * pre * (-r2 / s2).exp();
            let g: Vec<f64> = x.iter().map(|xi| -2.0 * (xi - center) / s2 * v).collect();
            fill_rows(out, &g);
        };
        match &self.kind {
            DriftKind::Zero | DriftKind::Constant { .. } => {}
            DriftKind::Linear { lambda } => {
                for i in 0..d {
                    out[i * d + i] = -lambda;
                }
            }
            DriftKind::Bump { amp, width, center } => bump_grad(out, *amp, width * width, 1.0, *center),
            DriftKind::SingularPower { .. } | DriftKind::Peano { .. } => {
                return Err(Error::Usage("gradient of a raw singular drift; mollify first".into()))
            }
            DriftKind::Mollified { base, eps } => match &**base {
                DriftKind::Bump { amp, width, center } => {
                    let s2 = width * width + 2.0 * eps * eps;
                    let pre = (width * width / s2).powf(0.5 * d as f64);
                    bump_grad(out, *amp, s2, pre, *center);
                }
                DriftKind::SingularPower { .. } => {
                    let r = norm(x);
                    if r > 0.0 {
                        let dv = self.profile.as_ref().expect("profile built").eval(r).1;
                        let g: Vec<f64> = x.iter().map(|xi| dv * xi / r).collect();
                        fill_rows(out, &g);
                    }
                }
                DriftKind::Peano { .. } => {
                    let p = self.profile.as_ref().expect("profile built");
                    for i in 0..d {
                        out[i * d + i] = p.eval(x[i].abs()).1;
                    }
                }
                DriftKind::Linear { lambda } => {
                    for i in 0..d {
                        out[i * d + i] = -lambda;
                    }
                }
                _ => {}
            },
        }
        Ok(())
    }

    /// ‖b‖_{L^p_x L^q_t} over the box × [0, horizon]; p, q may be infinite.
    ///
    /// The field is time-homogeneous, so the time norm contributes the factor
    /// horizon^{1/q}. `resolution` is the number of panels per axis of the
    /// tensor rule used in dimension ≥ 2 (and of the sup lattice for p = ∞).
    pub fn lpq_norm(&self, p: f64, q: f64, horizon: f64, resolution: usize) -> Result<f64> {
        if !(p >= 1.0) || !(q >= 1.0) {
            return Err(Error::domain(format!("norm exponents need p, q >= 1, got ({p}, {q})")));
        }
        let space = self.space_norm(p, resolution)?;
        let time = if q.is_infinite() { 1.0 } else { horizon.powf(1.0 / q) };
        Ok(space * time)
    }

    fn space_norm(&self, p: f64, resolution: usize) -> Result<f64> {
        let d = self.dim;
        let l = self.box_half_width;
        if let DriftKind::SingularPower { gamma, radius } = self.kind {
            if p.is_infinite() {
                return Err(Error::InfiniteNorm(format!("|x|^(-{gamma}) is unbounded, so p = inf fails")));
            }
            let df = d as f64;
            if gamma * p >= df {
                return Err(Error::InfiniteNorm(format!(
                    "gamma*p = {} >= d = {d}: |x|^(-gamma*p) not integrable at 0",
                    gamma * p
                )));
            }
            let r = if d == 1 {
                radius.min(l)
            } else if l >= radius {
                radius
            } else {
                return Err(Error::domain("norm box must contain the support ball when d > 1"));
            };
            let omega = 2.0 * std::f64::consts::PI.powf(0.5 * df) / special::gamma(0.5 * df);
            let integral = df.powf(0.5 * p) * omega * r.powf(df - gamma * p) / (df - gamma * p);
            return Ok(integral.powf(1.0 / p));
        }
        let mut buf = vec![0.0; d];
        let mut mag = |x: &[f64]| {
            self.eval(0.0, x, &mut buf);
            norm(&buf)
        };
        if p.is_infinite() {
            let m = resolution.max(2) * 2 + 1;
            let mut best: f64 = 0.0;
            let mut x = vec![0.0; d];
            for flat in 0..m.pow(d as u32) {
                let mut k = flat;
                for xi in x.iter_mut() {
                    *xi = -l + 2.0 * l * (k % m) as f64 / (m - 1) as f64;
                    k /= m;
                }
                best = best.max(mag(&x));
            }
            return Ok(best);
        }
        let integral = if d == 1 {
            let spec = QuadSpec::with_tol(1e-13, 1e-10);
            let mut f = |x: f64| mag(&[x]).powf(p);
            quad::integrate(&mut f, -l, 0.0, &spec).value + quad::integrate(&mut f, 0.0, l, &spec).value
        } else {
            quad::tensor_gk15(|x| mag(x).powf(p), d, -l, l, resolution.max(1))
        };
        Ok(integral.powf(1.0 / p))
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn eval_plain(kind: &DriftKind, x: &[f64], out: &mut [f64]) {
    match *kind {
        DriftKind::Zero => out.fill(0.0),
        DriftKind::Constant { value } => out.fill(value),
        DriftKind::Linear { lambda } => {
            for (o, v) in out.iter_mut().zip(x) {
                *o = -lambda * v;
            }
        }
        DriftKind::Bump { amp, width, center } => {
            let r2: f64 = x.iter().map(|v| (v - center).powi(2)).sum();
            out.fill(amp * (-r2 / (width * width)).exp());
        }
        DriftKind::SingularPower { gamma, radius } => {
            let r = norm(x);
            let v = if r == 0.0 {
                f64::INFINITY
            } else if r <= radius {
                r.powf(-gamma)
            } else {
                0.0
            };
            out.fill(v);
        }
        DriftKind::Peano { alpha } => {
            for (o, v) in out.iter_mut().zip(x) {
                *o = v.signum() * v.abs().powf(alpha);
            }
        }
        DriftKind::Mollified { .. } => unreachable!("handled by eval_mollified"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_field_norm() {
        let b = DriftField::new(DriftKind::Constant { value: 1.0 }, 1, 1.0).unwrap();
        for &p in &[1.0, 2.0, 3.5] {
            assert!((b.lpq_norm(p, 2.0, 1.0, 8).unwrap() - 2f64.powf(1.0 / p)).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_norm_closed_form() {
        let b = DriftField::new(DriftKind::SingularPower { gamma: 0.3, radius: 1.0 }, 1, 2.0).unwrap();
        assert!((b.lpq_norm(2.0, f64::INFINITY, 1.0, 8).unwrap() - 5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(b.lpq_norm(4.0, f64::INFINITY, 1.0, 8), Err(Error::InfiniteNorm(_))));
    }

    #[test]
    fn raw_singular_has_no_gradient() {
        let b = DriftField::new(DriftKind::Peano { alpha: 0.5 }, 1, 1.0).unwrap();
        assert!(b.grad(0.0, &[0.3], &mut [0.0]).is_err());
        assert!(b.mollify(0.1).unwrap().grad(0.0, &[0.3], &mut [0.0]).is_ok());
    }

    #[test]
    fn mollified_gradient_matches_difference() {
        let base = DriftField::new(DriftKind::SingularPower { gamma: 0.3, radius: 1.0 }, 2, 2.0).unwrap();
        let b = base.mollify(0.1).unwrap();
        let x = [0.31, -0.22];
        let mut g = [0.0; 4];
        b.grad(0.0, &x, &mut g).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (b.eval_vec(0.0, &xp)[0] - b.eval_vec(0.0, &xm)[0]) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g[j]);
        }
    }

    #[test]
    fn spec_round_trip() {
        let b = DriftField::new(DriftKind::Bump { amp: 0.5, width: 1.0, center: 0.0 }, 2, 3.0)
            .unwrap()
            .mollify(0.1)
            .unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let back: DriftField = serde_json::from_str(&s).unwrap();
        assert_eq!(b, back);
    }
}
