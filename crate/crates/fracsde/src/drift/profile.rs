//! Tabulated Gaussian mollifications of radial and odd 1-D power profiles.

use crate::error::Result;
use crate::mc::par_map;
use crate::quad::{self, QuadSpec};
use crate::special::bessel_i01_scaled;

/// Base shape h(ρ) on ρ ≥ 0 with its behaviour past the table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Shape {
    /// ρ^{−γ} on [0, R], zero beyond.
    Truncated { gamma: f64, radius: f64 },
    /// ρ^α on [0, ∞).
    Power { alpha: f64 },
}

impl Shape {
    fn h(&self, r: f64) -> f64 {
        match *self {
            Shape::Truncated { gamma, radius } => {
                if r <= radius {
                    r.powf(-gamma)
                } else {
                    0.0
                }
            }
            Shape::Power { alpha } => r.powf(alpha),
        }
    }

    fn exponent(&self) -> f64 {
        match *self {
            Shape::Truncated { gamma, .. } => -gamma,
            Shape::Power { alpha } => alpha,
        }
    }

    fn end(&self) -> f64 {
        match *self {
            Shape::Truncated { radius, .. } => radius,
            Shape::Power { .. } => f64::INFINITY,
        }
    }
}

/// How a profile is laid out in space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Geometry {
    /// Even 1-D extension h(|x|).
    Even,
    /// Odd 1-D extension sign(x) h(|x|).
    Odd,
    /// Radial h(|x|) in dimension 2 or 3.
    Radial(usize),
}

/// Values and first derivatives of the mollified profile on a uniform
/// radial grid, interpolated by cubic Hermite splines.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Profile {
    shape: Shape,
    step: f64,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

const REACH: f64 = 10.0;

fn gauss(u: f64, eps: f64) -> f64 {
    (-0.5 * (u / eps).powi(2)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * eps)
}

impl Profile {
    pub(crate) fn build(shape: Shape, geometry: Geometry, eps: f64, extent: f64) -> Result<Self> {
        let step = eps / 10.0;
        let r_max = match shape {
            Shape::Truncated { radius, .. } => radius + REACH * eps,
            Shape::Power { .. } => extent + REACH * eps,
        };
        let n = (r_max / step).ceil() as usize + 1;
        let pairs = par_map(n, 16, |i| value_and_derivative(shape, geometry, eps, i as f64 * step));
        let (values, derivs) = pairs.into_iter().unzip();
        Ok(Self { shape, step, values, derivs })
    }

    fn r_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }

    /// Mollified value and radial derivative at r ≥ 0.
    pub(crate) fn eval(&self, r: f64) -> (f64, f64) {
        if r >= self.r_max() {
            return match self.shape {
                Shape::Truncated { .. } => (0.0, 0.0),
                Shape::Power { alpha } => (r.powf(alpha), alpha * r.powf(alpha - 1.0)),
            };
        }
        let u = r / self.step;
        let i = (u.floor() as usize).min(self.values.len() - 2);
        let t = u - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.derivs[i] * self.step, self.derivs[i + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let dv = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1)
            / self.step;
        (v, dv)
    }
}

/// ∫ over [lo, hi] ∩ [0, end] split at `peak`, with the power-law start at 0
/// handled by substitution.
fn integrate_around(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, peak: f64, e0: f64) -> f64 {
    let spec = QuadSpec::with_tol(1e-14, 1e-11);
    if hi <= lo {
        return 0.0;
    }
    let mut cuts = vec![lo];
    if peak > lo && peak < hi {
        cuts.push(peak);
    }
    cuts.push(hi);
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        acc += if w[0] == 0.0 {
            quad::integrate_sing_left(&mut f, 0.0, w[1], e0, &spec).value
        } else {
            quad::integrate(&mut f, w[0], w[1], &spec).value
        };
    }
    acc
}

fn value_and_derivative(shape: Shape, geometry: Geometry, eps: f64, r: f64) -> (f64, f64) {
    let lo = (r - REACH * eps).max(0.0);
    let hi = (r + REACH * eps).min(shape.end());
    let h = |y: f64| shape.h(y);
    let dg = |u: f64| -u / (eps * eps) * gauss(u, eps);
    match geometry {
        Geometry::Even | Geometry::Odd => {
            let s = if geometry == Geometry::Even { 1.0 } else { -1.0 };
            let e0 = shape.exponent();
            let v = integrate_around(|y| h(y) * (gauss(r - y, eps) + s * gauss(r + y, eps)), lo, hi, r, e0);
            let d = integrate_around(|y| h(y) * (dg(r - y) + s * dg(r + y)), lo, hi, r, e0);
            (v, d)
        }
        Geometry::Radial(3) => {
            let e0 = shape.exponent() + 1.0;
            if r == 0.0 {
                let v = integrate_around(|p| h(p) * p * 2.0 * p / (eps * eps) * gauss(p, eps), lo, hi, r, e0 + 1.0);
                return (v, 0.0);
            }
            let g = integrate_around(|p| h(p) * p * (gauss(r - p, eps) - gauss(r + p, eps)), lo, hi, r, e0);
            let gd = integrate_around(|p| h(p) * p * (dg(r - p) - dg(r + p)), lo, hi, r, e0);
            (g / r, gd / r - g / (r * r))
        }
        Geometry::Radial(_) => {
            let e0 = shape.exponent() + 1.0;
            let e2 = eps * eps;
            let v = integrate_around(
                |p| {
                    let (i0, _) = bessel_i01_scaled(r * p / e2);
                    h(p) * p * (-(r - p).powi(2) / (2.0 * e2)).exp() * i0
                },
                lo,
                hi,
                r,
                e0,
            ) / e2;
            let d = integrate_around(
                |p| {
                    let (i0, i1) = bessel_i01_scaled(r * p / e2);
                    h(p) * p * (-(r - p).powi(2) / (2.0 * e2)).exp() * (p * i1 - r * i0)
                },
                lo,
                hi,
                r,
                e0,
            ) / (e2 * e2);
            (v, d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn far_field_matches_power() {
        let p = Profile::build(Shape::Power { alpha: 0.5 }, Geometry::Odd, 0.05, 2.0).unwrap();
        // Gaussian smoothing of x^α: x^α + ½ε²f'' + ⅛ε⁴f'''' + O(ε⁶)
        let (x, e2, a): (f64, f64, f64) = (1.5, 0.0025, 0.5);
        let want = x.powf(a)
            + 0.5 * e2 * a * (a - 1.0) * x.powf(a - 2.0)
            + e2 * e2 / 8.0 * a * (a - 1.0) * (a - 2.0) * (a - 3.0) * x.powf(a - 4.0);
        assert!((p.eval(x).0 - want).abs() < 2e-9, "{:?} vs {want}", p.eval(x));
    }

    #[test]
    fn radial_forms_agree_on_mass() {
        // mollification preserves ∫ over space; compare the radial masses
        let shape = Shape::Truncated { gamma: 0.3, radius: 1.0 };
        for (d, omega) in [(2usize, 2.0 * std::f64::consts::PI), (3, 4.0 * std::f64::consts::PI)] {
            let p = Profile::build(shape, Geometry::Radial(d), 0.1, 1.0).unwrap();
            let mass = quad::integrate(|r| omega * r.powi(d as i32 - 1) * p.eval(r).0, 0.0, 2.5, &QuadSpec::default()).value;
            let want = omega / (d as f64 - 0.3);
            assert!((mass - want).abs() < 1e-5 * want, "d={d}: {mass} vs {want}");
        }
    }
}
