//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Tolerances and time budgets are pinned below.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta;
use statrs::function::gamma::gamma;

use fracsde::drift::{convergence_study, solve_flow, DriftField, DriftKind};
use fracsde::fbm::{conditional_variance, covariance, sample_cholesky, sample_volterra, FbmKernel, HurstGrid};
use fracsde::frac_calc::{apply_kh, apply_kh_inverse, rl_derivative, rl_integral, GridFunction};
use fracsde::girsanov::{girsanov_weight, reweighted_expectation, shifted_path, WeightMode};
use fracsde::mc::Estimate;
use fracsde::quad::{integrate_sing_both, QuadSpec};
use fracsde::regimes::{
    check_h1, check_h2, check_weak_lps, classify, half_reduction, holder_exponents, table_rows, Applicability,
    RegimeParams,
};
use fracsde::verify::{
    check_kernel_bounds, check_shuffle_identity, check_simplex_identity, check_taming_bound, check_taming_mirror,
    compactness_beta, compactness_quantities, density_gap_sweep, empirical_flow_regularity, jacobian_bump_check,
    kernel_double_integral, picard_check, sobolev_level_stability,
};

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn all(checks: &[(bool, String)]) -> (bool, String) {
    let ok = checks.iter().all(|c| c.0);
    let detail: Vec<String> = checks.iter().map(|c| format!("{}{}", if c.0 { "" } else { "[x] " }, c.1)).collect();
    (ok, detail.join("; "))
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// (2H / ((1−2H) B(1−2H, H+½)))^{1/2}.
fn c_h_closed(h: f64) -> f64 {
    (2.0 * h / ((1.0 - 2.0 * h) * beta(1.0 - 2.0 * h, h + 0.5))).sqrt()
}

// 1. ∫_0^t K_H(t,s)² ds = t^{2H}.
fn kernel_normalization() -> Outcome {
    const TOL: f64 = 1e-4;
    let mut worst: f64 = 0.0;
    for h in [0.1, 0.3, 0.45] {
        // independent route: the kernel rebuilt with the closed-form constant
        let closed = FbmKernel { hurst: h, c_h: c_h_closed(h) };
        for t in [0.5f64, 1.0, 2.0] {
            let target = t.powf(2.0 * h);
            let lib = conditional_variance(t, 0.0, h).map_err(e)?;
            let spec = QuadSpec::with_tol(1e-13, 1e-10);
            let e_edge = 2.0 * h - 1.0;
            let direct = integrate_sing_both(|s, gap| closed.eval_gap(s, gap).powi(2), 0.0, t, e_edge, e_edge, &spec).value;
            worst = worst.max((lib - target).abs() / target).max((direct - target).abs() / target);
        }
    }
    Ok((worst < TOL, format!("max relative error {worst:.2e} (tol {TOL:.0e})")))
}

// 2. Empirical covariance of the generators against R(t,s).
fn generator_covariance() -> Outcome {
    const K_SE: f64 = 4.0;
    const VOLTERRA_REL: f64 = 0.02;
    let mut worst_z: f64 = 0.0;
    let mut checks = Vec::new();
    for (h, seed) in [(0.1, 11), (0.3, 12)] {
        let g = HurstGrid::new(h, 1.0, 32).map_err(e)?;
        let ens = sample_cholesky(&g, 1, 200_000, seed).map_err(e)?;
        for i in [4, 8, 16, 24, 32] {
            for j in [4, 8, 16, 24, 32].into_iter().filter(|&j| j >= i) {
                let target = covariance(g.time(i), g.time(j), h).map_err(e)?;
                let est = ens.empirical_cov(i, j, 0);
                worst_z = worst_z.max(est.z_score(target).abs());
            }
        }
    }
    checks.push((worst_z <= K_SE, format!("cholesky max |z| {worst_z:.2} (<= {K_SE})")));
    for (h, seed) in [(0.1, 21), (0.3, 22)] {
        let g = HurstGrid::new(h, 1.0, 128).map_err(e)?;
        let ens = sample_volterra(&g, 1, 20_000, seed).map_err(e)?;
        let (mut ok, mut worst) = (true, 0.0f64);
        for i in [16, 32, 64, 96, 128] {
            for j in [16, 32, 64, 96, 128].into_iter().filter(|&j| j >= i) {
                let target = covariance(g.time(i), g.time(j), h).map_err(e)?;
                let est = ens.empirical_cov(i, j, 0);
                ok &= (est.mean - target).abs() <= (K_SE * est.se).max(VOLTERRA_REL * target);
                worst = worst.max((est.mean - target).abs() / target);
            }
        }
        checks.push((ok, format!("volterra H={h} n=128 max relative deviation {worst:.3} (<= max(4 SE, {VOLTERRA_REL}))")));
    }
    Ok(all(&checks))
}

// 3. Fractional calculus round trips and power-function closed forms.
fn operator_roundtrips() -> Outcome {
    const ROUNDTRIP_TOL: f64 = 1e-3;
    const KH_TOL: f64 = 2e-2;
    const POWER_TOL: f64 = 1e-4;
    let n = 1024;
    let f = GridFunction::from_fn(1.0, n, |t| t * t);
    let mut rt: f64 = 0.0;
    let mut pw: f64 = 0.0;
    for k in 1..=9 {
        let a = k as f64 / 10.0;
        let ia = rl_integral(&f, a).map_err(e)?;
        rt = rt.max(rl_derivative(&ia, a).map_err(e)?.sup_diff_from(&f, 0));
        for b in [1.0, 2.0] {
            let g = GridFunction::from_fn(1.0, n, |t| t.powf(b));
            let ci = gamma(b + 1.0) / gamma(b + a + 1.0);
            let cd = gamma(b + 1.0) / gamma(b - a + 1.0);
            let want_i = GridFunction::from_fn(1.0, n, |t| ci * t.powf(b + a));
            let want_d = GridFunction::from_fn(1.0, n, |t| cd * t.powf(b - a));
            pw = pw.max(rl_integral(&g, a).map_err(e)?.sup_diff_from(&want_i, 1) / ci);
            pw = pw.max(rl_derivative(&g, a).map_err(e)?.sup_diff_from(&want_d, 1) / cd);
        }
    }
    let s = GridFunction::from_fn(1.0, n, |t| (2.0 * std::f64::consts::PI * t).sin());
    let mut kh: f64 = 0.0;
    for h in [0.2, 0.3, 0.4] {
        let back = apply_kh_inverse(&apply_kh(&s, h).map_err(e)?, h).map_err(e)?;
        kh = kh.max(back.sup_diff_from(&s, 1));
    }
    Ok(all(&[
        (rt <= ROUNDTRIP_TOL, format!("D∘I sup error {rt:.2e} (<= {ROUNDTRIP_TOL:.0e})")),
        (kh <= KH_TOL, format!("K⁻¹∘K sup error {kh:.2e} (<= {KH_TOL:.0e})")),
        (pw <= POWER_TOL, format!("power closed forms relative error {pw:.2e} (<= {POWER_TOL:.0e})")),
    ]))
}

fn ks_normal(xs: &[f64], mean: f64, sd: f64) -> f64 {
    let mut v: Vec<f64> = xs.iter().map(|x| (x - mean) / sd).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    v.iter().enumerate().fold(0.0f64, |m, (i, x)| {
        let c = z.cdf(*x);
        m.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs())
    })
}

// 4. Girsanov weights: unit mean, reweighted covariance, log-normal law.
fn girsanov() -> Outcome {
    const K_SE: f64 = 4.0;
    let h = 0.3;
    let g = HurstGrid::new(h, 1.0, 256).map_err(e)?;
    let ens = sample_volterra(&g, 1, 100_000, 41).map_err(e)?;
    let bump = DriftField::new(DriftKind::Bump { amp: 0.5, width: 1.0, center: 0.0 }, 1, 3.0).map_err(e)?;
    let rec = girsanov_weight(&ens, &bump).map_err(e)?;
    let m = rec.mean_xi();
    let mut checks = vec![(m.covers(1.0, K_SE, 0.0), format!("E xi = {:.4} ± {:.4}", m.mean, m.se))];

    let nodes = [64, 128, 192, 256];
    let shifted: Vec<Vec<f64>> = (0..ens.n_paths)
        .map(|p| {
            let b = shifted_path(&ens, &bump, p);
            nodes.iter().map(|&i| b[i]).collect()
        })
        .collect();
    let mut worst_z: f64 = 0.0;
    for (a, &i) in nodes.iter().enumerate() {
        for (c, &j) in nodes.iter().enumerate().skip(a) {
            let vals: Vec<f64> = shifted.iter().map(|b| b[a] * b[c]).collect();
            let est = reweighted_expectation(&rec, &vals, WeightMode::Weight).map_err(e)?;
            worst_z = worst_z.max(est.z_score(covariance(g.time(i), g.time(j), h).map_err(e)?).abs());
        }
    }
    checks.push((worst_z <= K_SE, format!("reweighted covariance max |z| {worst_z:.2}")));

    // constant drift c: v_s = c κ s^{½−H} with κ = Γ(3/2−H) / (Γ(2−2H) C_H Γ(H+½))
    let c = 0.8;
    let ens = sample_volterra(&g, 1, 20_000, 42).map_err(e)?;
    let konst = DriftField::new(DriftKind::Constant { value: c }, 1, 3.0).map_err(e)?;
    let rec = girsanov_weight(&ens, &konst).map_err(e)?;
    let kappa = gamma(1.5 - h) / (gamma(2.0 - 2.0 * h) * c_h_closed(h) * gamma(h + 0.5));
    let energy = c * c * kappa * kappa / (2.0 - 2.0 * h);
    let logs: Vec<f64> = rec.kept().map(|p| rec.xi[p].ln()).collect();
    let est = Estimate::from_values(&logs);
    let n = logs.len() as f64;
    let var = logs.iter().map(|x| (x - est.mean).powi(2)).sum::<f64>() / (n - 1.0);
    let var_se = energy * (2.0 / (n - 1.0)).sqrt();
    let ks = ks_normal(&logs, -0.5 * energy, energy.sqrt());
    let ks_crit = 1.63 / n.sqrt();
    checks.push((est.covers(-0.5 * energy, K_SE, 0.0), format!("E log xi {:.4} vs {:.4}", est.mean, -0.5 * energy)));
    checks.push(((var - energy).abs() <= K_SE * var_se, format!("Var log xi {var:.4} vs {energy:.4}")));
    checks.push((ks <= ks_crit, format!("KS {ks:.4} (<= {ks_crit:.4})")));
    Ok(all(&checks))
}

// 5. Integral identities and kernel bounds.
fn integral_identities() -> Outcome {
    let mut checks = Vec::new();
    let mut push = |label: &str, r: fracsde::verify::CheckReport| {
        checks.push((r.passed(), format!("{label} {:?} C={:.3e}", r.verdict, r.implied_constant)));
    };
    push("simplex m=1", check_simplex_identity(&[0.5], 0.0, 2.0, 1, 1, 1e-6, 3.0).map_err(e)?);
    push("simplex m=2", check_simplex_identity(&[0.5, 1.3], 0.0, 2.0, 1, 1, 1e-6, 3.0).map_err(e)?);
    push("simplex m=3", check_simplex_identity(&[0.5, 1.3, 0.7], 0.0, 2.0, 1_000_000, 51, 1e-6, 3.0).map_err(e)?);
    push("simplex m=4", check_simplex_identity(&[0.5, 1.3, 0.7, 0.4], 0.0, 2.0, 1_000_000, 52, 1e-6, 3.0).map_err(e)?);
    for (r, m) in [(2, 1), (2, 2), (3, 1), (3, 2)] {
        push(&format!("shuffle r={r} m={m}"), check_shuffle_identity(&|s: f64| s.cos(), 0.0, 1.0, r, m, 1e-8).map_err(e)?);
    }
    push("taming", check_taming_bound(-0.3, 0.4, 0.2, 0.1, 1.0, 1e-6, 200, 0.1).map_err(e)?);
    push("taming mirror", check_taming_mirror(-0.3, 0.4, 0.5, 1.0, 1e-8).map_err(e)?);
    push("kernel bounds", check_kernel_bounds(0.3, 1.0, 64, 0.15, 0.1).map_err(e)?);
    push("double integral", kernel_double_integral(0.3, 1.0, 0.1, &[1e-3, 1e-4, 1e-5], 0.02).map_err(e)?);
    Ok(all(&checks))
}

// 6. Density bound constant stable across gap scales.
fn density_constant() -> Outcome {
    const SPREAD_TOL: f64 = 0.1;
    let r = density_gap_sweep(0.3, 1, 0.5, &[0.1, 0.2, 0.4], 3.0, 81, &[0, 1], SPREAD_TOL).map_err(e)?;
    Ok((r.passed(), format!("relative spread {:.4} (<= {SPREAD_TOL})", r.value("relative_spread"))))
}

// 7. Regime classifier.
fn regimes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let exponent = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.1) { f64::INFINITY } else { rng.gen_range(1.0..40.0) };
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let (p, q, d) = (exponent(&mut rng), exponent(&mut rng), rng.gen_range(1..=3));
        let (lhs, rhs) = half_reduction(p, q, d);
        mismatches += usize::from(lhs != rhs);
    }
    let mut violations = 0;
    for _ in 0..10_000 {
        let h = rng.gen_range(0.01..0.99);
        let r = RegimeParams::new(h, rng.gen_range(1..=3), exponent(&mut rng), exponent(&mut rng)).map_err(e)?;
        if check_h1(&r).holds && check_h2(&r) && !check_weak_lps(&r).holds {
            violations += 1;
        }
    }
    // (H, d, p, q, row, weak, strong) with hand-evaluated verdicts
    use Applicability::{Applies as A, Fails as F, NotClaimed as N};
    let spots = [
        (0.5, 1, 4.0, 8.0, 1, N, A),
        (0.5, 2, 4.0, 4.0, 1, N, F),
        (0.2, 1, 4.0, f64::INFINITY, 8, A, A),
        (0.2, 2, 2.0, 4.0, 8, A, F),
        (0.25, 1, 2.0, f64::INFINITY, 5, A, N),
        (0.3, 1, 2.0, 4.0, 3, A, N),
    ];
    let mut spot_bad = Vec::new();
    for (h, d, p, q, row, weak, strong) in spots {
        let r = RegimeParams::new(h, d, p, q).map_err(e)?;
        let v = table_rows(&r).into_iter().find(|v| v.row == row).ok_or("missing row")?;
        if v.weak.status != weak || v.strong.status != strong {
            spot_bad.push(format!("row {row} at ({h},{d},{p},{q})"));
        }
    }
    let strong = [(0.25, 1, 2.0, f64::INFINITY, true), (0.45, 1, 100.0, 2.0, false), (0.3, 1, 1.5, 10.0, false)];
    for (h, d, p, q, want) in strong {
        if classify(&RegimeParams::new(h, d, p, q).map_err(e)?).strong != want {
            spot_bad.push(format!("strong at ({h},{d},{p},{q})"));
        }
    }
    Ok(all(&[
        (mismatches == 0, format!("H=1/2 reduction mismatches {mismatches}/10000")),
        (violations == 0, format!("strong-not-weak violations {violations}/10000")),
        (spot_bad.is_empty(), format!("spot rows wrong: {spot_bad:?}")),
    ]))
}

// 8. Strong convergence for b(x) = |x|^{−0.3} 1_{|x|≤1}.
fn strong_convergence() -> Outcome {
    const MIN_RATIO: f64 = 1.5;
    let h = 0.3;
    let g = HurstGrid::new(h, 1.0, 512).map_err(e)?;
    let ens = sample_volterra(&g, 1, 10_000, 81).map_err(e)?;
    let b = DriftField::new(DriftKind::SingularPower { gamma: 0.3, radius: 1.0 }, 1, 3.0).map_err(e)?;
    let reg = RegimeParams::new(h, 1, 4.0, f64::INFINITY).map_err(e)?;
    let levels: Vec<f64> = (1..=6).map(|k| 0.5f64.powi(k)).collect();
    let t = convergence_study(&ens, &b, &levels, &[4, 2, 1], &reg, &[0.0]).map_err(e)?;
    let lvl: Vec<f64> = t.level_distances.iter().map(|d| d.mean).collect();
    let steps: Vec<f64> = t.step_distances.iter().map(|d| d.mean).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let geo = t.level_ratios.iter().map(|r| r.ln()).sum::<f64>() / t.level_ratios.len() as f64;
    let geo = geo.exp();
    Ok(all(&[
        (decreasing(&lvl), format!("level distances {lvl:.4?}")),
        (geo >= MIN_RATIO, format!("geometric mean ratio {geo:.3} (>= {MIN_RATIO})")),
        (decreasing(&steps), format!("step distances {steps:.4?}")),
    ]))
}

// 9. Malliavin derivative checks.
fn malliavin() -> Outcome {
    let g = HurstGrid::new(0.3, 1.0, 256).map_err(e)?;
    let ens = sample_volterra(&g, 1, 1000, 5).map_err(e)?;
    let smooth = DriftField::new(DriftKind::Bump { amp: 0.5, width: 1.0, center: 0.0 }, 1, 3.0).map_err(e)?;
    let bump = jacobian_bump_check(&ens, &smooth, &[0.1], 0.25, &[1e-1, 1e-2, 1e-3, 1e-4], 50).map_err(e)?;
    let picard = picard_check(&ens, &smooth, &[0.1], 64, 3, 50).map_err(e)?;
    let b = DriftField::new(DriftKind::SingularPower { gamma: 0.3, radius: 1.0 }, 1, 3.0).map_err(e)?;
    let reg = RegimeParams::new(0.3, 1, 4.0, f64::INFINITY).map_err(e)?;
    let fields: Vec<(f64, DriftField)> =
        (1..=5).map(|k| 0.5f64.powi(k)).map(|l| b.mollify(l).map(|f| (l, f))).collect::<Result<_, _>>().map_err(e)?;
    let (_, compact) = compactness_quantities(&ens, &fields, &[0.0], compactness_beta(&reg), 2.0).map_err(e)?;
    Ok(all(&[
        (bump.passed(), format!("bump slope {:.3}", bump.value("slope"))),
        (picard.passed(), format!("picard {:?}", picard.verdict)),
        (compact.passed(), format!("compactness {:?}", compact.verdict)),
    ]))
}

// 10. Flow regularity.
fn flow() -> Outcome {
    const P1: f64 = 2.0;
    const TOL: f64 = 0.1;
    let h = 0.3;
    let g = HurstGrid::new(h, 1.0, 256).map_err(e)?;
    let ens = sample_volterra(&g, 1, 1000, 5).map_err(e)?;
    let xs: Vec<Vec<f64>> = (0..33).map(|k| vec![-1.0 + k as f64 / 16.0]).collect();
    let s_nodes = [0, 8, 16, 32, 64, 128];
    let zero = solve_flow(&ens, &DriftField::zero(1), &s_nodes, &xs).map_err(e)?;
    let (fz, _) = empirical_flow_regularity(&zero, P1, h, TOL).map_err(e)?;
    let smooth = DriftField::new(DriftKind::Bump { amp: 0.5, width: 1.0, center: 0.0 }, 1, 3.0).map_err(e)?;
    let smooth_reg = RegimeParams::new(h, 1, f64::INFINITY, f64::INFINITY).map_err(e)?;
    let exponent = holder_exponents(&smooth_reg).time_bound.ok_or("no time bound")?;
    let fl = solve_flow(&ens, &smooth, &s_nodes, &xs).map_err(e)?;
    let (fs, _) = empirical_flow_regularity(&fl, P1, exponent, TOL).map_err(e)?;
    let floor = 0.9 * P1 * exponent;

    let b = DriftField::new(DriftKind::SingularPower { gamma: 0.3, radius: 1.0 }, 1, 3.0).map_err(e)?;
    let reg = RegimeParams::new(h, 1, 4.0, f64::INFINITY).map_err(e)?;
    let time_bound = holder_exponents(&reg).time_bound.ok_or("no time bound")?;
    let mut norms = Vec::new();
    for k in 1..=5 {
        let l = 0.5f64.powi(k);
        let fl = solve_flow(&ens, &b.mollify(l).map_err(e)?, &s_nodes[..1], &xs).map_err(e)?;
        norms.push((l, empirical_flow_regularity(&fl, P1, time_bound, TOL).map_err(e)?.0.sobolev_norm));
    }
    let sob = sobolev_level_stability(&norms, 2.0);
    Ok(all(&[
        ((fz.time_slope - 2.0 * h).abs() <= 0.05, format!("b=0 time slope {:.3} vs {:.1}", fz.time_slope, 2.0 * h)),
        ((fz.spatial_slope - P1).abs() <= 1e-9, format!("b=0 spatial slope {:.6}", fz.spatial_slope)),
        (fs.time_slope >= floor, format!("smooth time slope {:.3} (>= {floor:.3})", fs.time_slope)),
        (sob.passed(), format!("Sobolev spread {:.3} (<= 2)", sob.value("median_spread"))),
    ]))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "kernel normalization", budget: secs(5), run: kernel_normalization },
        Criterion { id: 2, name: "generator covariance", budget: secs(60), run: generator_covariance },
        Criterion { id: 3, name: "operator round trips", budget: secs(30), run: operator_roundtrips },
        Criterion { id: 4, name: "girsanov weights", budget: secs(300), run: girsanov },
        Criterion { id: 5, name: "integral identities", budget: secs(120), run: integral_identities },
        Criterion { id: 6, name: "density constant", budget: secs(30), run: density_constant },
        Criterion { id: 7, name: "regime classifier", budget: secs(5), run: regimes },
        Criterion { id: 8, name: "strong convergence", budget: secs(600), run: strong_convergence },
        Criterion { id: 9, name: "malliavin derivative", budget: secs(300), run: malliavin },
        Criterion { id: 10, name: "flow regularity", budget: secs(300), run: flow },
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.map_or(true, |o| o == c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (ok && took <= c.budget, d),
            Err(msg) => (false, format!("error: {msg}")),
        };
        failed += usize::from(!ok);
        let tag = if ok { "PASS" } else { "FAIL" };
        println!(
            "{tag} criterion {}: {} [{:.1}s of {}s] {detail}",
            c.id,
            c.name,
            took.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
