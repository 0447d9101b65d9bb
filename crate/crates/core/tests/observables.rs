use std::collections::BTreeMap;

use opent_core::observables::*;
use proptest::prelude::*;

fn snapshot(entries: Vec<(i64, i64, f64)>) -> SpectrumSnapshot {
    let norm: f64 = entries.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt();
    SpectrumSnapshot::new(
        0.0,
        1,
        entries.into_iter().map(|(qk, qb, l)| SpectrumEntry { qk, qb, lambda: l / norm }).collect(),
        Diagnostics::default(),
    )
    .unwrap()
}

/// Spectrum made of full SU(2) multiplets, `(2S, λ)` each.
fn multiplet_spectrum(mults: &[(i64, f64)]) -> SpectrumSnapshot {
    let mut entries = Vec::new();
    for &(s2, lam) in mults {
        let mut m = -s2;
        while m <= s2 {
            entries.push((m, 0, lam));
            m += 2;
        }
    }
    snapshot(entries)
}

#[test]
fn sector_probabilities_example() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = snapshot(vec![(0, 0, h), (2, 0, 0.5), (-2, 0, 0.5)]);
    let p = sector_probabilities(&s, SectorLabel::Ket);
    assert!((p[&0] - 0.5).abs() < 1e-15 && (p[&2] - 0.25).abs() < 1e-15 && (p[&-2] - 0.25).abs() < 1e-15);
}

#[test]
fn decomposition_example() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = snapshot(vec![(0, 0, h), (2, 0, 0.5), (2, 0, 0.5)]);
    assert!((operator_entanglement(&s).unwrap() - 1.5).abs() < 1e-14);
    assert!(check_decomposition(&s).unwrap() < 1e-14);
}

#[test]
fn two_multiplet_relations_hold() {
    let s = multiplet_spectrum(&[(2, 0.6), (0, 0.3), (4, 0.2), (2, 0.1)]);
    let spin = detect_multiplets(&s, 1e-9);
    assert_eq!(spin.table.residual, 0.0);
    let p_sz = sector_probabilities(&s, SectorLabel::Ket);
    let from_sz = spin_from_magnetization(&p_sz);
    for (s2, p) in &spin.probabilities {
        assert!((from_sz[s2] - p).abs() < 1e-14);
    }
    let r = check_sector_relations(&spin.probabilities, &spin.entropies, &s);
    assert!(r.probability < 1e-12 && r.entropy < 1e-12, "{r:?}");
}

#[test]
fn single_singlet_relations_are_trivial() {
    let s = multiplet_spectrum(&[(0, 1.0)]);
    let spin = detect_multiplets(&s, 1e-9);
    let r = check_sector_relations(&spin.probabilities, &spin.entropies, &s);
    assert_eq!((r.probability, r.entropy), (0.0, 0.0));
}

#[test]
fn shannon_of_uniform_table() {
    let p: BTreeMap<i64, f64> = (0..8).map(|k| (k, 0.125)).collect();
    assert!((shannon(&p) - 3.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn decomposition_holds_for_any_spectrum(raw in prop::collection::vec((-4i64..=4, -4i64..=4, 1e-6f64..1.0), 1..40)) {
        let s = snapshot(raw);
        prop_assert!(check_decomposition(&s).unwrap() < 1e-12);
        let p = sector_probabilities(&s, SectorLabel::Ket);
        prop_assert!((p.values().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(operator_entanglement(&s).unwrap() >= shannon(&p) - 1e-12);
    }

    #[test]
    fn su2_spectra_satisfy_the_sector_relations(
        mults in prop::collection::vec((0i64..5, 0.01f64..1.0), 1..8)
    ) {
        let mults: Vec<(i64, f64)> = mults.into_iter().map(|(s, l)| (2 * s, l)).collect();
        let s = multiplet_spectrum(&mults);
        let spin = detect_multiplets(&s, 1e-9);
        prop_assert!(spin.table.residual < 1e-12);
        let r = check_sector_relations(&spin.probabilities, &spin.entropies, &s);
        prop_assert!(r.probability < 1e-12 && r.entropy < 1e-10, "{:?}", r);
        let from_sz = spin_from_magnetization(&sector_probabilities(&s, SectorLabel::Ket));
        for (s2, p) in &spin.probabilities {
            prop_assert!((from_sz[s2] - p).abs() < 1e-12);
        }
        let resolved = resolved_entanglement(&s, SectorLabel::Ket);
        let delta = delta_resolved(&[(1.0, resolved)]).unwrap();
        for (m, d) in &delta[0].1 {
            prop_assert!((d - delta[0].1[&-m]).abs() < 1e-12);
        }
    }
}
