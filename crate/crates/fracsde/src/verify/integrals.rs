//! Simplex, taming, kernel-increment and shuffle integrals.

use rand_distr::{Distribution, Gamma};

use super::{pass_if, stable_if, CheckReport, ReportBuilder, Sweep};
use crate::error::{Error, Result};
use crate::fbm::FbmKernel;
use crate::mc::{par_map, path_rng, Estimate};
use crate::quad::{integrate, integrate_sing_both, integrate_sing_left, integrate_sing_right, QuadSpec};
use crate::special::{beta, beta_reg_upper, gamma, ln_gamma};

/// (s_end − s_0)^{Σα} ∏Γ(α_j) / Γ(Σα + 1).
pub fn simplex_closed_form(alphas: &[f64], s0: f64, s_end: f64) -> f64 {
    let sum: f64 = alphas.iter().sum();
    let lg: f64 = alphas.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(sum + 1.0);
    (s_end - s0).powf(sum) * lg.exp()
}

const SIMPLEX_CHUNK: usize = 4096;

/// ∫_{s_0<s_1<…<s_m<s_end} ∏_j (s_j − s_{j−1})^{α_j−1} ds against its closed
/// form. Nested quadrature for m ≤ 2 (pass when |error| ≤ `abs_tol`);
/// importance-sampled Monte Carlo for m = 3, 4 (pass within `k_se`
/// standard errors).
///
/// The Monte Carlo proposal draws the gaps from a Dirichlet law with
/// parameters a_j = α_j + (1 − α_j)/4 for α_j < 1 and 1 otherwise, which
/// keeps the weight variance finite for α_j > 1/5; uniform sampling has
/// infinite variance once some α_j ≤ ½.
pub fn check_simplex_identity(
    alphas: &[f64],
    s0: f64,
    s_end: f64,
    n_samples: usize,
    seed: u64,
    abs_tol: f64,
    k_se: f64,
) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("simplex_identity");
    let m = alphas.len();
    if m == 0 || m > 4 || alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::domain(format!("need 1 to 4 positive exponents, got {alphas:?}")));
    }
    if !(s_end > s0) {
        return Err(Error::domain(format!("empty interval [{s0}, {s_end}]")));
    }
    let closed = simplex_closed_form(alphas, s0, s_end);
    let len = s_end - s0;
    let spec = QuadSpec::with_tol(1e-15, 1e-13);
    if m <= 2 {
        let numeric = if m == 1 {
            integrate_sing_left(|u| u.powf(alphas[0] - 1.0), 0.0, len, alphas[0] - 1.0, &spec).value
        } else {
            let (a1, a2) = (alphas[0] - 1.0, alphas[1] - 1.0);
            // inner ∫_0^v u^{a1}(v − u)^{a2} du, outer over v = s_2 − s_0
            let inner = |v: f64| {
                integrate_sing_both(|u, rest| u.powf(a1) * rest.powf(a2), 0.0, v, a1, a2, &spec).value
            };
            integrate_sing_left(inner, 0.0, len, a1 + a2 + 1.0, &spec).value
        };
        let err = (numeric - closed).abs();
        rep.tol("abs_error", abs_tol).value("numeric", numeric).value("closed_form", closed).value("abs_error", err);
        rep.constant(err, alphas.to_vec());
        return Ok(rep.finish(pass_if(err <= abs_tol)));
    }
    let mut a: Vec<f64> = alphas.iter().map(|&x| if x < 1.0 { x + (1.0 - x) / 4.0 } else { 1.0 }).collect();
    a.push(1.0);
    let a_sum: f64 = a.iter().sum();
    let sum_alpha: f64 = alphas.iter().sum();
    let log_const =
        sum_alpha * len.ln() + a.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(a_sum);
    let gammas: Vec<Gamma<f64>> =
        a.iter().map(|&x| Gamma::new(x, 1.0).map_err(|e| Error::Numeric(e.to_string()))).collect::<Result<_>>()?;
    let n_chunks = n_samples.div_ceil(SIMPLEX_CHUNK);
    let chunks = par_map(n_chunks, 1, |c| {
        let mut rng = path_rng(seed, c as u64);
        let count = SIMPLEX_CHUNK.min(n_samples - c * SIMPLEX_CHUNK);
        let mut out = Vec::with_capacity(count);
        let mut g = vec![0.0; m + 1];
        for _ in 0..count {
            for (gj, dist) in g.iter_mut().zip(&gammas) {
                *gj = dist.sample(&mut rng);
            }
            let total: f64 = g.iter().sum();
            let log_w: f64 = (0..m).map(|j| (alphas[j] - a[j]) * (g[j] / total).ln()).sum();
            out.push((log_const + log_w).exp());
        }
        out
    });
    let values: Vec<f64> = chunks.into_iter().flatten().collect();
    let est = Estimate::from_values(&values);
    let z = est.z_score(closed);
    rep.tol("k_se", k_se)
        .value("numeric", est.mean)
        .value("standard_error", est.se)
        .value("closed_form", closed)
        .value("abs_error", (est.mean - closed).abs())
        .value("z_score", z);
    rep.constant(z.abs(), alphas.to_vec());
    Ok(rep.finish(pass_if(z.abs() <= k_se)))
}

/// ∫_s^t r^{−β}(t−r)^α dr: incomplete Beta for β < 1, quadrature otherwise.
pub fn taming_integral(alpha: f64, beta_exp: f64, s: f64, t: f64) -> f64 {
    if beta_exp < 1.0 {
        let (a, b) = (1.0 - beta_exp, alpha + 1.0);
        t.powf(alpha + 1.0 - beta_exp) * beta(a, b) * beta_reg_upper(a, b, s / t)
    } else {
        taming_quadrature(alpha, beta_exp, s, t)
    }
}

fn taming_quadrature(alpha: f64, beta_exp: f64, s: f64, t: f64) -> f64 {
    let spec = QuadSpec::with_tol(1e-15, 1e-13);
    integrate_sing_right(|w| (t - w).powf(-beta_exp) * w.powf(alpha), s, t, alpha, &spec).value
}

/// Sup over s ∈ [s_min·t, t) of ∫_s^t r^{−β}(t−r)^α dr divided by
/// s^{−β+γ}(t−s)^{α+1−γ} (α < 0) or s^{−β+γ}(t−s)^{α+1−γ−ε} (α ≥ 0).
///
/// Bounded means the sup over the last decade toward 0 exceeds the sup
/// over the rest by at most a factor 1 + `growth_tol`.
pub fn check_taming_bound(
    alpha: f64,
    beta_exp: f64,
    gamma_exp: f64,
    eps: f64,
    t: f64,
    s_min: f64,
    n_s: usize,
    growth_tol: f64,
) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("taming_bound");
    if !(gamma_exp > 0.0 && gamma_exp <= beta_exp.min(1.0) && gamma_exp < alpha + 1.0) {
        return Err(Error::domain(format!(
            "need 0 < γ ≤ min(β, 1) and γ < α + 1, got α={alpha}, β={beta_exp}, γ={gamma_exp}"
        )));
    }
    if alpha >= 0.0 && !(eps > 0.0) {
        return Err(Error::domain("the α ≥ 0 branch needs ε > 0"));
    }
    let e_right = alpha + 1.0 - gamma_exp - if alpha >= 0.0 { eps } else { 0.0 };
    let (lo, hi) = (s_min.log10(), (1.0 - 1e-6f64).log10());
    let mut sweep = Sweep::new(&["s", "integral", "bound", "ratio"]);
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut sup_far = f64::NEG_INFINITY;
    let mut sup_near = f64::NEG_INFINITY;
    let cut = 10.0 * s_min;
    for k in 0..n_s {
        let s = t * 10f64.powf(lo + (hi - lo) * k as f64 / (n_s - 1) as f64);
        let integral = taming_integral(alpha, beta_exp, s, t);
        let bound = s.powf(-beta_exp + gamma_exp) * (t - s).powf(e_right);
        let ratio = integral / bound;
        sweep.push(vec![s, integral, bound, ratio]);
        if ratio > best.0 {
            best = (ratio, s);
        }
        if s < cut * t {
            sup_near = sup_near.max(ratio);
        } else {
            sup_far = sup_far.max(ratio);
        }
    }
    let growth = sup_near / sup_far;
    rep.tol("growth", growth_tol).value("growth", growth).value("bound_exponent", e_right);
    rep.constant(best.0, vec![best.1]).sweep(sweep);
    let ok = best.0.is_finite() && growth <= 1.0 + growth_tol;
    Ok(rep.finish(stable_if(ok)))
}

/// ∫_0^s (t−r)^{−β} r^α dr directly against the taming integral at t − s
/// (the substitution u = t − r).
pub fn check_taming_mirror(alpha: f64, beta_exp: f64, s: f64, t: f64, tol: f64) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("taming_mirror");
    if !(s > 0.0 && s < t) {
        return Err(Error::domain(format!("need 0 < s < t, got s={s}, t={t}")));
    }
    let spec = QuadSpec::with_tol(1e-15, 1e-13);
    let direct = integrate_sing_both(
        |r, rest| (t - s + rest).powf(-beta_exp) * r.powf(alpha),
        0.0,
        s,
        alpha,
        0.0,
        &spec,
    )
    .value;
    let mirrored = taming_integral(alpha, beta_exp, t - s, t);
    let err = (direct - mirrored).abs();
    rep.tol("abs_error", tol).value("direct", direct).value("mirrored", mirrored).value("abs_error", err);
    rep.constant(err, vec![s, t]);
    Ok(rep.finish(pass_if(err <= tol)))
}

fn kernel_sups(kernel: &FbmKernel, hurst: f64, horizon: f64, n: usize, gamma_exp: f64) -> ((f64, Vec<f64>), (f64, Vec<f64>)) {
    let h = horizon / n as f64;
    // k[i][j] = K(t_i, s_j) for 0 < s_j < t_i
    let rows = par_map(n + 1, 1, |i| {
        (0..i).map(|j| if j == 0 { f64::NAN } else { kernel.eval_gap(j as f64 * h, (i - j) as f64 * h) }).collect::<Vec<_>>()
    });
    let e = hurst - 0.5;
    let mut one = (f64::NEG_INFINITY, Vec::new());
    let mut two = (f64::NEG_INFINITY, Vec::new());
    for i in 2..=n {
        let t = i as f64 * h;
        for j in 1..i {
            let s = j as f64 * h;
            let r = rows[i][j] / (s.powf(e) * (t - s).powf(e));
            if r > one.0 {
                one = (r, vec![t, s]);
            }
            for j2 in (j + 1)..i {
                let s2 = j2 as f64 * h;
                let bound = ((s2 - s) / (s * s2)).powf(gamma_exp)
                    * s2.powf(e - gamma_exp)
                    * (t - s2).powf(e - gamma_exp);
                let r2 = (rows[i][j2] - rows[i][j]).abs() / bound;
                if r2 > two.0 {
                    two = (r2, vec![t, s, s2]);
                }
            }
        }
    }
    (one, two)
}

/// Sups over (s, t) and (s_1, s_2, t) lattices of
/// K_H(t,s) / (s^{H−½}(t−s)^{H−½}) and
/// |K_H(t,s_2) − K_H(t,s_1)| / (((s_2−s_1)/(s_1 s_2))^γ s_2^{H−½−γ}(t−s_2)^{H−½−γ}),
/// at `n` and `2n` steps. Bounded means neither sup grows by more than a
/// factor 1 + `growth_tol` under refinement.
pub fn check_kernel_bounds(hurst: f64, horizon: f64, n: usize, gamma_exp: f64, growth_tol: f64) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("kernel_bounds");
    if !(gamma_exp > 0.0 && gamma_exp < hurst) {
        return Err(Error::domain(format!("increment exponent γ = {gamma_exp} must lie in (0, H)")));
    }
    let kernel = FbmKernel::new(hurst)?;
    let (c1, i1) = kernel_sups(&kernel, hurst, horizon, n, gamma_exp);
    let (f1, f2) = kernel_sups(&kernel, hurst, horizon, 2 * n, gamma_exp);
    let g1 = f1.0 / c1.0;
    let g2 = if i1.0 > 0.0 { f2.0 / i1.0 } else { 1.0 };
    rep.tol("growth", growth_tol)
        .value("kernel_ratio_sup", f1.0)
        .value("increment_ratio_sup", f2.0)
        .value("kernel_growth", g1)
        .value("increment_growth", g2);
    let mut witness = f1.1.clone();
    witness.extend(&f2.1);
    rep.constant(f1.0.max(f2.0), witness);
    let ok = f1.0.is_finite() && f2.0.is_finite() && g1 <= 1.0 + growth_tol && g2 <= 1.0 + growth_tol;
    Ok(rep.finish(stable_if(ok)))
}

/// ∫_0^t∫_0^t |K_H(t,s_2) − K_H(t,s_1)| / |s_2 − s_1|^{1+2β} ds_1 ds_2 at a
/// sequence of relative quadrature tolerances; converged when successive
/// estimates agree within `rel_tol`.
pub fn kernel_double_integral(hurst: f64, t: f64, two_beta: f64, quad_tols: &[f64], rel_tol: f64) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("kernel_double_integral");
    if !(two_beta > 0.0 && two_beta < 2.0 * hurst) {
        return Err(Error::domain(format!("2β = {two_beta} must lie in (0, 2H)")));
    }
    let kernel = FbmKernel::new(hurst)?;
    let e = hurst - 0.5;
    let mut sweep = Sweep::new(&["quad_rel_tol", "value"]);
    let mut vals = Vec::new();
    for &qt in quad_tols {
        let spec = QuadSpec { abs_tol: 0.0, rel_tol: qt, max_subdiv: 2000 };
        let outer = integrate_sing_both(
            |s1, rem1| {
                let k1 = kernel.eval_gap(s1, rem1);
                integrate_sing_both(
                    |h, rem2| (kernel.eval_gap(s1 + h, rem2) - k1).abs() * h.powf(-1.0 - two_beta),
                    0.0,
                    rem1,
                    -two_beta,
                    e,
                    &spec,
                )
                .value
            },
            0.0,
            t,
            e - two_beta,
            e - two_beta,
            &spec,
        )
        .value;
        let v = 2.0 * outer;
        sweep.push(vec![qt, v]);
        vals.push(v);
    }
    let worst = vals.windows(2).map(|w| ((w[1] - w[0]) / w[1]).abs()).fold(0.0, f64::max);
    rep.tol("successive_rel_change", rel_tol).value("successive_rel_change", worst).value("value", *vals.last().unwrap_or(&f64::NAN));
    rep.constant(*vals.last().unwrap_or(&f64::NAN), vec![two_beta]).sweep(sweep);
    Ok(rep.finish(stable_if(vals.iter().all(|v| v.is_finite()) && worst <= rel_tol)))
}

const SHUFFLE_STEPS: usize = 4096;

/// (∫_{Δ^m_{θ,t}} ∏ f)^r against the shuffle expansion
/// (rm)!/(m!)^r · ∫_{Δ^{rm}_{θ,t}} ∏ f.
///
/// The left side is nested adaptive quadrature; the iterated integral on
/// the right is the solution of y_k′ = f y_{k−1}, y_0 = 1, by classical RK4.
pub fn check_shuffle_identity(
    f: &dyn Fn(f64) -> f64,
    theta: f64,
    t: f64,
    r: usize,
    m: usize,
    tol: f64,
) -> Result<CheckReport> {
    let mut rep = ReportBuilder::new("shuffle_identity");
    if !(2..=3).contains(&r) || !(1..=2).contains(&m) || !(t > theta) {
        return Err(Error::domain(format!("need r ∈ {{2,3}}, m ∈ {{1,2}}, θ < t; got r={r}, m={m}, [{theta}, {t}]")));
    }
    let spec = QuadSpec::with_tol(1e-15, 1e-14);
    let single = if m == 1 {
        integrate(f, theta, t, &spec).value
    } else {
        integrate(|s2| f(s2) * integrate(f, theta, s2, &spec).value, theta, t, &spec).value
    };
    let lhs = single.powi(r as i32);
    let k = r * m;
    let h = (t - theta) / SHUFFLE_STEPS as f64;
    let mut y = vec![0.0; k + 1];
    y[0] = 1.0;
    let rhs_fn = |s: f64, y: &[f64]| -> Vec<f64> {
        let fs = f(s);
        (0..=k).map(|i| if i == 0 { 0.0 } else { fs * y[i - 1] }).collect()
    };
    for step in 0..SHUFFLE_STEPS {
        let s = theta + step as f64 * h;
        let k1 = rhs_fn(s, &y);
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
        let k2 = rhs_fn(s + 0.5 * h, &y2);
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
        let k3 = rhs_fn(s + 0.5 * h, &y3);
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        let k4 = rhs_fn(s + h, &y4);
        for i in 0..=k {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    let count = gamma(k as f64 + 1.0) / gamma(m as f64 + 1.0).powi(r as i32);
    let rhs = count * y[k];
    let err = (lhs - rhs).abs();
    rep.tol("abs_error", tol)
        .value("lhs", lhs)
        .value("rhs", rhs)
        .value("abs_error", err)
        .value("terms", count.round())
        .value("term_limit", (r as f64).powi(k as i32));
    rep.constant(err, vec![theta, t, r as f64, m as f64]);
    let ok = err <= tol && count <= (r as f64).powi(k as i32);
    Ok(rep.finish(pass_if(ok)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_small_cases() {
        let r = check_simplex_identity(&[1.0], 0.0, 1.0, 0, 0, 1e-12, 3.0).unwrap();
        assert!((r.value("numeric") - 1.0).abs() < 1e-12);
        let r = check_simplex_identity(&[1.0, 1.0], 0.0, 1.0, 0, 0, 1e-12, 3.0).unwrap();
        assert!((r.value("numeric") - 0.5).abs() < 1e-12);
        let r = check_simplex_identity(&[0.4, 0.7], 0.5, 2.0, 0, 0, 1e-9, 3.0).unwrap();
        assert!(r.passed(), "{:?}", r.values);
    }

    #[test]
    fn taming_closed_form_matches_quadrature() {
        for (a, b, s) in [(-0.5, 0.3, 0.01), (0.4, 0.8, 0.3), (-0.2, 0.5, 0.999)] {
            let c = taming_integral(a, b, s, 1.3);
            let q = taming_quadrature(a, b, s, 1.3);
            assert!((c - q).abs() < 1e-11 * c.abs().max(1.0), "{a} {b} {s}: {c} vs {q}");
        }
    }

    #[test]
    fn shuffle_by_hand() {
        let r = check_shuffle_identity(&|_| 1.0, 0.0, 1.0, 2, 1, 1e-12).unwrap();
        assert!((r.value("lhs") - 1.0).abs() < 1e-13 && r.passed());
        let r = check_shuffle_identity(&|s| s, 0.0, 1.0, 2, 1, 1e-12).unwrap();
        assert!((r.value("lhs") - 0.25).abs() < 1e-13 && r.passed());
    }

    #[test]
    fn brownian_kernel_is_flat() {
        let r = check_kernel_bounds(0.5 - 1e-9, 1.0, 8, 0.2, 0.01).unwrap();
        assert!((r.value("kernel_ratio_sup") - 1.0).abs() < 1e-6);
    }
}
