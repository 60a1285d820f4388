use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::quad::{self, QuadSpec};

/// Volterra kernel K_H of fBm with its normalizing constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmKernel {
    pub hurst: f64,
    pub c_h: f64,
}

fn c_h_cache() -> &'static Mutex<HashMap<u64, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl FbmKernel {
    /// Kernel for `hurst`, with C_H fixed by ∫_0^1 K(1,s)² ds = 1.
    ///
    /// K is linear in C_H, so the normalization is solved directly from the
    /// quadrature value of the unnormalized kernel. Cached per H.
    pub fn new(hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst <= 0.5) {
            return Err(Error::UnsupportedRegime(format!("kernel needs H in (0, 1/2], got {hurst}")));
        }
        if hurst == 0.5 {
            return Ok(Self { hurst, c_h: 1.0 });
        }
        if let Some(&c) = c_h_cache().lock().unwrap().get(&hurst.to_bits()) {
            return Ok(Self { hurst, c_h: c });
        }
        let raw = Self { hurst, c_h: 1.0 };
        let spec = QuadSpec::with_tol(1e-13, 1e-11);
        let e = 2.0 * hurst - 1.0;
        let norm = quad::integrate_sing_both(|s, gap| raw.eval_gap(s, gap).powi(2), 0.0, 1.0, e, e, &spec).value;
        let c_h = norm.sqrt().recip();
        c_h_cache().lock().unwrap().insert(hurst.to_bits(), c_h);
        Ok(Self { hurst, c_h })
    }

    /// ∫_s^t r^{H−3/2}(r−s)^{H−1/2} dr after u = (r−s)^{H+1/2}, which turns
    /// the endpoint singularity into a smooth integrand.
    pub fn inner_integral(&self, t: f64, s: f64, spec: &QuadSpec) -> f64 {
        self.inner_gap(s, t - s, spec)
    }

    fn inner_gap(&self, s: f64, gap: f64, spec: &QuadSpec) -> f64 {
        let h = self.hurst;
        let a = h + 0.5;
        let k = 1.0 / a;
        let upper = gap.powf(a);
        // Split where the integrand turns over so the adaptive rule sees the
        // s^{H+1/2} feature scale directly.
        let knee = s.powf(a).min(upper);
        let f = |u: f64| (s + u.powf(k)).powf(h - 1.5);
        let lo = quad::integrate(f, 0.0, knee, spec).value;
        // Past the knee the integrand decays like a power over many decades;
        // integrate that stretch in log u.
        let hi = if upper > knee {
            quad::integrate(|v: f64| f(v.exp()) * v.exp(), knee.ln(), upper.ln(), spec).value
        } else {
            0.0
        };
        (lo + hi) / a
    }

    /// K_H(t, s) with the default quadrature settings.
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        self.eval_with(t, s, &INNER_SPEC)
    }

    pub fn eval_with(&self, t: f64, s: f64, spec: &QuadSpec) -> f64 {
        if s >= t {
            return 0.0;
        }
        self.eval_gap_with(s, t - s, spec)
    }

    /// K_H(s + gap, s), taking the gap directly so that points next to the
    /// diagonal are not rounded onto it.
    pub fn eval_gap(&self, s: f64, gap: f64) -> f64 {
        self.eval_gap_with(s, gap, &INNER_SPEC)
    }

    fn eval_gap_with(&self, s: f64, gap: f64, spec: &QuadSpec) -> f64 {
        if gap <= 0.0 {
            return 0.0;
        }
        let h = self.hurst;
        if h == 0.5 {
            return self.c_h;
        }
        let t = s + gap;
        let first = (t / s).powf(h - 0.5) * gap.powf(h - 0.5);
        let second = (0.5 - h) * s.powf(0.5 - h) * self.inner_gap(s, gap, spec);
        self.c_h * (first + second)
    }

    /// ∂K_H/∂t(t, s) = C_H (H − ½) s^{½−H} t^{H−½} (t−s)^{H−3/2}.
    pub fn d_dt(&self, t: f64, s: f64) -> f64 {
        let h = self.hurst;
        if s >= t {
            return 0.0;
        }
        self.c_h * (h - 0.5) * s.powf(0.5 - h) * t.powf(h - 0.5) * (t - s).powf(h - 1.5)
    }
}

const INNER_SPEC: QuadSpec = QuadSpec { abs_tol: 1e-13, rel_tol: 1e-11, max_subdiv: 200 };

/// K_H(t, s) for 0 < s < t, zero for s ≥ t.
pub fn kernel_k(t: f64, s: f64, hurst: f64, spec: &QuadSpec) -> Result<f64> {
    if s <= 0.0 {
        return Err(Error::domain(format!("kernel needs s > 0, got {s}")));
    }
    if s >= t {
        return Ok(0.0);
    }
    Ok(FbmKernel::new(hurst)?.eval_with(t, s, spec))
}

/// Var(B_t | F_s) = ∫_s^t K_H(t,u)² du.
pub fn conditional_variance(t: f64, s: f64, hurst: f64) -> Result<f64> {
    if !(s >= 0.0 && s < t) {
        return Err(Error::domain(format!("conditional variance needs 0 <= s < t, got ({s}, {t})")));
    }
    if hurst == 0.5 {
        return Ok(t - s);
    }
    let k = FbmKernel::new(hurst)?;
    let spec = QuadSpec::with_tol(1e-13, 1e-10);
    let e = 2.0 * hurst - 1.0;
    let v = if s == 0.0 {
        quad::integrate_sing_both(|u, gap| k.eval_gap(u, gap).powi(2), 0.0, t, e, e, &spec)
    } else {
        quad::integrate_sing_right(|gap| k.eval_gap(t - gap, gap).powi(2), s, t, e, &spec)
    };
    Ok(v.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{beta, beta_reg_upper};

    /// Closed form of the inner integral through the incomplete beta function.
    fn inner_closed(h: f64, t: f64, s: f64) -> f64 {
        let (a, b) = (1.0 - 2.0 * h, h + 0.5);
        s.powf(2.0 * h - 1.0) * beta(a, b) * beta_reg_upper(a, b, s / t)
    }

    #[test]
    fn inner_integral_matches_incomplete_beta() {
        for &h in &[0.1, 0.3, 0.45] {
            let k = FbmKernel { hurst: h, c_h: 1.0 };
            for &(t, s) in &[(1.0, 0.5), (1.0, 1e-4), (2.0, 1.999), (0.5, 0.1)] {
                let q = k.inner_integral(t, s, &INNER_SPEC);
                let c = inner_closed(h, t, s);
                assert!((q - c).abs() < 1e-9 * c.abs(), "h={h} t={t} s={s}: {q} vs {c}");
            }
        }
    }

    #[test]
    fn inner_integral_near_origin() {
        // 30-digit reference values at t = 1, s = 1e-12
        for &(h, want) in &[(0.1, 7779231125.7112628), (0.3, 177460.96442338022), (0.45, 149.75423947134438)] {
            let k = FbmKernel { hurst: h, c_h: 1.0 };
            let q = k.inner_integral(1.0, 1e-12, &INNER_SPEC);
            assert!((q - want).abs() < 1e-9 * want, "h={h}: {q}");
        }
    }

    #[test]
    fn c_h_matches_beta_closed_form() {
        // C_H² = 2H / ((1−2H) B(1−2H, H+½))
        for &h in &[0.1, 0.25, 0.3, 0.45] {
            let want = (2.0 * h / ((1.0 - 2.0 * h) * beta(1.0 - 2.0 * h, h + 0.5))).sqrt();
            let got = FbmKernel::new(h).unwrap().c_h;
            assert!((got - want).abs() < 1e-8 * want, "h={h}: {got} vs {want}");
        }
    }

    #[test]
    fn support_and_domain() {
        let spec = QuadSpec::default();
        assert_eq!(kernel_k(1.0, 1.5, 0.3, &spec).unwrap(), 0.0);
        assert!(kernel_k(1.0, 0.0, 0.3, &spec).is_err());
        assert!(kernel_k(1.0, 0.5, 0.7, &spec).is_err());
        assert!(conditional_variance(1.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn brownian_limit() {
        assert_eq!(kernel_k(1.0, 0.5, 0.5, &QuadSpec::default()).unwrap(), 1.0);
        assert!((conditional_variance(1.0, 0.25, 0.5).unwrap() - 0.75).abs() < 1e-15);
        // K(1, ½)/C_H → 1 as H → ½
        let mut prev = f64::INFINITY;
        for &h in &[0.4, 0.45, 0.49, 0.499] {
            let k = FbmKernel::new(h).unwrap();
            let dev = (k.eval(1.0, 0.5) / k.c_h - 1.0).abs();
            assert!(dev < prev);
            prev = dev;
        }
        assert!(prev < 2e-3);
    }

    #[test]
    fn diagonal_divergence_rate() {
        let k = FbmKernel::new(0.3).unwrap();
        let scaled: Vec<f64> =
            [0.99, 0.999, 0.9999].iter().map(|&s: &f64| k.eval(1.0, s) * (1.0 - s).powf(0.2)).collect();
        // dominant term tends to C_H
        for w in scaled.windows(2) {
            assert!((w[1] - k.c_h).abs() < (w[0] - k.c_h).abs());
        }
        assert!((scaled[2] / k.c_h - 1.0).abs() < 1e-2);
    }
}
