use proptest::prelude::*;

use fracsde::config::{Experiment, RunConfig};
use fracsde::drift::{DriftField, DriftKind};
use fracsde::fbm::{sample_volterra, HurstGrid};
use fracsde::frac_calc::{rl_derivative, rl_integral, transfer_khstar, GridFunction};
use fracsde::girsanov::drift_to_v;
use fracsde::mc::mc_batch;
use fracsde::regimes::{check_h1, check_h2, check_weak_lps, classify, half_reduction, RegimeParams};
use rand::Rng;

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![4 => 1.0f64..64.0, 1 => Just(f64::INFINITY)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn strong_conditions_imply_weak(h in 0.01f64..0.99, d in 1usize..4, p in exponent(), q in exponent()) {
        let r = RegimeParams::new(h, d, p, q).unwrap();
        if check_h1(&r).holds && check_h2(&r) {
            prop_assert!(check_weak_lps(&r).holds);
        }
        let rep = classify(&r);
        prop_assert_eq!(rep.strong, rep.h1.holds && rep.h2);
    }

    #[test]
    fn brownian_reduction(d in 1usize..4, p in exponent(), q in exponent()) {
        let (lhs, rhs) = half_reduction(p, q, d);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn fractional_integral_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, alpha in 0.1f64..0.9) {
        let n = 64;
        let f = GridFunction::from_fn(1.0, n, |t| (3.0 * t).sin());
        let g = GridFunction::from_fn(1.0, n, |t| t * t - 0.5);
        let lhs = rl_integral(&f.axpby(a, &g, b), alpha).unwrap();
        let rhs = rl_integral(&f, alpha).unwrap().axpby(a, &rl_integral(&g, alpha).unwrap(), b);
        prop_assert!(lhs.sup_diff_from(&rhs, 0) <= 1e-12 * (1.0 + a.abs() + b.abs()));
        let dl = rl_derivative(&f.axpby(a, &g, b), alpha).unwrap();
        let dr = rl_derivative(&f, alpha).unwrap().axpby(a, &rl_derivative(&g, alpha).unwrap(), b);
        prop_assert!(dl.sup_diff_from(&dr, 1) <= 1e-9 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn adjoint_transfer_is_linear(a in -2.0f64..2.0, h in 0.15f64..0.45) {
        let f = GridFunction::from_fn(1.0, 32, |t| 1.0 + t);
        let g = GridFunction::from_fn(1.0, 32, |t| (2.0 * t).cos());
        let lhs = transfer_khstar(&f.axpby(a, &g, 1.0), h).unwrap();
        let rhs = transfer_khstar(&f, h).unwrap().axpby(a, &transfer_khstar(&g, h).unwrap(), 1.0);
        prop_assert!(lhs.sup_diff_from(&rhs, 0) <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn config_roundtrips(
        h in 0.05f64..0.95,
        n in 1usize..2000,
        seed in 0..=i64::MAX as u64,
        p in exponent(),
        amp in -5.0f64..5.0,
        levels in prop::collection::vec(1e-4f64..1.0, 0..5),
    ) {
        let c = RunConfig {
            experiment: Experiment::Flow,
            hurst: h,
            n_steps: n,
            seed,
            p,
            drift: DriftKind::Bump { amp, width: 0.7, center: -0.1 },
            mollification_levels: levels,
            step_factors: vec![1],
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn oversized_seed_is_rejected(seed in (i64::MAX as u64 + 1)..=u64::MAX) {
        let c = RunConfig { seed, ..RunConfig::default() };
        let e = c.validate().unwrap_err();
        prop_assert!(e.to_string().contains("`seed`"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn batch_size_does_not_change_estimates(seed in any::<u64>(), n in 1usize..300) {
        let task = |_: usize, rng: &mut rand_chacha::ChaCha8Rng| Ok(Some(rng.gen::<f64>().powi(2)));
        let a = mc_batch(task, n, seed, 1).unwrap();
        for bs in [7, 64, 4096] {
            let b = mc_batch(task, n, seed, bs).unwrap();
            prop_assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
            prop_assert_eq!(a.standard_error.to_bits(), b.standard_error.to_bits());
        }
    }
}

#[test]
fn drift_to_v_is_linear_in_the_drift() {
    let g = HurstGrid::new(0.3, 1.0, 32).unwrap();
    let ens = sample_volterra(&g, 1, 4, 3).unwrap();
    let b1 = DriftField::new(DriftKind::Constant { value: 1.0 }, 1, 3.0).unwrap();
    let b2 = DriftField::new(DriftKind::Constant { value: -2.5 }, 1, 3.0).unwrap();
    let v1 = drift_to_v(&ens, &b1).unwrap();
    let v2 = drift_to_v(&ens, &b2).unwrap();
    for (a, b) in v1.iter().zip(&v2) {
        assert!(a.axpby(-2.5, b, -1.0).sup_diff_from(&GridFunction::zeros(1.0, 32, 1), 0) < 1e-12);
    }
}

#[test]
fn zero_paths_is_an_error() {
    assert!(mc_batch(|_, _| Ok(Some(0.0)), 0, 1, 8).is_err());
}
