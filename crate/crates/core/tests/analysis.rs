use std::collections::BTreeMap;

use opent_core::analysis::*;
use proptest::prelude::*;

fn gaussian_map(delta: f64, max_sz: i64) -> BTreeMap<i64, f64> {
    (-max_sz..=max_sz)
        .map(|sz| {
            let x = sz as f64;
            (2 * sz, (-x * x / (2.0 * delta * delta)).exp() / (2.0 * std::f64::consts::PI * delta * delta).sqrt())
        })
        .collect()
}

#[test]
fn log_tangent_recovers_exact_line() {
    let series: Vec<(f64, f64)> = (1..=40).map(|k| {
        let t = 0.5 * k as f64;
        (t, 0.3 * t.log2() + 1.0)
    }).collect();
    let fit = fit_log_tangent(&series, 10.0, 0.5).unwrap();
    assert!((fit.param("eta").unwrap() - 0.3).abs() < 1e-12);
    assert!((fit.param("s0").unwrap() - 1.0).abs() < 1e-12);
    assert!(fit.residual < 1e-12);
}

#[test]
fn log_tangent_of_constant_is_flat() {
    let series: Vec<(f64, f64)> = (1..=10).map(|k| (k as f64, 2.5)).collect();
    let fit = fit_log_tangent(&series, 5.0, 1.0).unwrap();
    assert!(fit.param("eta").unwrap().abs() < 1e-14);
    assert!((fit.param("s0").unwrap() - 2.5).abs() < 1e-14);
}

#[test]
fn log_tangent_errors() {
    let series = vec![(1.0, 0.0), (2.0, 1.0)];
    assert_eq!(fit_log_tangent(&series, 1.0, 1.0).unwrap_err(), AnalysisError::TangentTooEarly { t0: 1.0, dt: 1.0 });
    assert_eq!(fit_log_tangent(&series, 2.0, 1.0).unwrap_err(), AnalysisError::MissingSample(3.0));
}

#[test]
fn gaussian_fit_recovers_width() {
    let fit = fit_gaussian(&gaussian_map(2.0, 6)).unwrap();
    assert!((fit.param("delta").unwrap() - 2.0).abs() < 1e-6, "{fit:?}");
    assert!(fit.residual < 1e-6);
}

#[test]
fn gaussian_fit_rejects_single_sector() {
    let p: BTreeMap<i64, f64> = [(0, 1.0)].into();
    assert!(matches!(fit_gaussian(&p), Err(AnalysisError::TooFewPoints { need: 3, got: 1 })));
}

#[test]
fn trial_distribution_value_at_unit_width() {
    // (1/√(2π))(1 − e^{−1/2})
    let expected = (1.0 - (-0.5f64).exp()) / (2.0 * std::f64::consts::PI).sqrt();
    assert!((trial_spin_probability(0.0, 1.0) - expected).abs() < 1e-15);
    assert!((trial_spin_probability(0.0, 1.0) - 0.15697).abs() < 1e-5);
}

#[test]
fn trial_fit_recovers_width() {
    let p: BTreeMap<i64, f64> = (0..12).map(|s| (2 * s, trial_spin_probability(s as f64, 3.0))).collect();
    let fit = fit_trial_ps(&p).unwrap();
    assert!((fit.param("delta").unwrap() - 3.0).abs() < 1e-6, "{fit:?}");
}

#[test]
fn trial_and_gaussian_widths_agree_on_consistent_data() {
    // Build p_Sz from a Gaussian, derive p_S = (2S+1)(p_{Sz=S} − p_{Sz=S+1}).
    let delta = 2.5;
    let psz = gaussian_map(delta, 20);
    let ps: BTreeMap<i64, f64> = (0..20)
        .map(|s| (2 * s, (2 * s + 1) as f64 * (psz[&(2 * s)] - psz[&(2 * s + 2)])))
        .collect();
    let g = fit_gaussian(&psz).unwrap().param("delta").unwrap();
    let t = fit_trial_ps(&ps).unwrap().param("delta").unwrap();
    assert!((g - t).abs() / g < 0.05);
}

#[test]
fn power_law_exact_and_flat() {
    let series: Vec<(f64, f64)> = (1..=20).map(|k| {
        let t = 3.0 * k as f64;
        (t, 2.0 * t.powf(0.25))
    }).collect();
    let fit = fit_power_law(&series, (10.0, 60.0)).unwrap();
    assert!((fit.param("alpha").unwrap() - 0.25).abs() < 1e-12);
    let flat: Vec<(f64, f64)> = (1..=10).map(|k| (k as f64, 1.7)).collect();
    assert!(fit_power_law(&flat, (1.0, 10.0)).unwrap().param("alpha").unwrap().abs() < 1e-14);
}

#[test]
fn power_law_errors() {
    let series: Vec<(f64, f64)> = (1..=10).map(|k| (k as f64, k as f64 - 3.0)).collect();
    assert!(matches!(fit_power_law(&series, (1.0, 10.0)), Err(AnalysisError::NonPositive { .. })));
    assert!(matches!(fit_power_law(&series, (8.0, 9.0)), Err(AnalysisError::TooFewPoints { .. })));
    assert!(matches!(fit_power_law(&series, (5.0, 1.0)), Err(AnalysisError::BadWindow(..))));
}

#[test]
fn decay_fit_recovers_reference_triple() {
    let (a, b, c) = (2.4964, 0.2554, 1.1228);
    let series: Vec<(f64, f64)> = (0..=30).map(|k| {
        let t = 5.0 * k as f64;
        (t, (a + b * t).powf(-c))
    }).collect();
    let fit = fit_decay(&series).unwrap();
    assert!(fit.converged && !fit.degenerate);
    assert!((fit.param("a").unwrap() - a).abs() < 1e-4, "{fit:?}");
    assert!((fit.param("b").unwrap() - b).abs() < 1e-4, "{fit:?}");
    assert!((fit.param("c").unwrap() - c).abs() < 1e-4, "{fit:?}");
}

#[test]
fn decay_reference_value_at_zero() {
    let v: f64 = 2.4964f64.powf(-1.1228);
    assert!((v - 0.358010).abs() < 1e-6);
}

#[test]
fn decay_fit_flags_flat_series() {
    let series: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 0.4)).collect();
    let fit = fit_decay(&series).unwrap();
    assert!(fit.degenerate);
    assert_eq!(fit.param("c"), Some(0.0));
}

#[test]
fn decay_fit_errors() {
    assert!(matches!(fit_decay(&[(0.0, 1.0); 3]), Err(AnalysisError::TooFewPoints { need: 5, got: 3 })));
    let bad: Vec<(f64, f64)> = (0..6).map(|k| (k as f64, 1.0 - k as f64 * 0.5)).collect();
    assert!(matches!(fit_decay(&bad), Err(AnalysisError::NonPositive { .. })));
}

#[test]
fn gaussian_entropy_formula() {
    assert!((shannon_entropy_gaussian_check(1.0) - 2.0471).abs() < 1e-4);
    assert!((shannon_entropy_gaussian_check(2.0) - shannon_entropy_gaussian_check(1.0) - 1.0).abs() < 1e-14);
    // Direct sum over a discretized Gaussian of width 4.
    let p = gaussian_map(4.0, 60);
    let direct: f64 = -p.values().map(|&x| x * x.log2()).sum::<f64>();
    assert!((direct - shannon_entropy_gaussian_check(4.0)).abs() < 0.01);
}

proptest! {
    #[test]
    fn log_tangent_is_affine_equivariant(eta in -1.0f64..1.0, s0 in -3.0f64..3.0, shift in -2.0f64..2.0, scale in 0.5f64..4.0) {
        let ts: Vec<f64> = (1..=30).map(|k| k as f64).collect();
        let base: Vec<(f64, f64)> = ts.iter().map(|&t| (t, eta * t.log2() + s0 + 0.01 * (t * 1.3).sin())).collect();
        let f0 = fit_log_tangent(&base, 10.0, 1.0).unwrap();
        let shifted: Vec<(f64, f64)> = base.iter().map(|&(t, s)| (t, s + shift)).collect();
        let f1 = fit_log_tangent(&shifted, 10.0, 1.0).unwrap();
        prop_assert!((f1.param("eta").unwrap() - f0.param("eta").unwrap()).abs() < 1e-10);
        prop_assert!((f1.param("s0").unwrap() - f0.param("s0").unwrap() - shift).abs() < 1e-10);
        let scaled: Vec<(f64, f64)> = base.iter().map(|&(t, s)| (t * scale, s)).collect();
        let f2 = fit_log_tangent(&scaled, 10.0 * scale, scale).unwrap();
        let e0 = f0.param("eta").unwrap();
        prop_assert!((f2.param("eta").unwrap() - e0).abs() < 1e-9);
        prop_assert!((f2.param("s0").unwrap() - (f0.param("s0").unwrap() - e0 * scale.log2())).abs() < 1e-9);
    }

    #[test]
    fn gaussian_fit_self_consistent(delta in 0.8f64..6.0) {
        let fit = fit_gaussian(&gaussian_map(delta, 40)).unwrap();
        prop_assert!((fit.param("delta").unwrap() - delta).abs() < 1e-6);
    }

    #[test]
    fn decay_fit_self_consistent(a in 0.5f64..5.0, b in 0.05f64..1.0, c in 0.3f64..2.0) {
        let series: Vec<(f64, f64)> = (0..=24).map(|k| {
            let t = 4.0 * k as f64;
            (t, (a + b * t).powf(-c))
        }).collect();
        let fit = fit_decay(&series).unwrap();
        prop_assert!((fit.param("a").unwrap() - a).abs() < 1e-4 * a.max(1.0));
        prop_assert!((fit.param("b").unwrap() - b).abs() < 1e-4 * b.max(1.0));
        prop_assert!((fit.param("c").unwrap() - c).abs() < 1e-4 * c.max(1.0));
    }
}
