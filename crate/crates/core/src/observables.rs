//! Full and symmetry-resolved operator entanglement from charge-labelled
//! Schmidt spectra.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symtensor::SchmidtValues;

/// Sectors at or below this probability are left out of resolved reports.
pub const REPORT_THRESHOLD: f64 = 1e-4;

const NORM_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum ObservableError {
    #[error("spectrum is not normalized: sum of squares is {0}")]
    Unnormalized(f64),
    #[error("spectrum contains a negative or non-finite value")]
    BadValue,
    #[error("no Sz = 0 sector at time {0}")]
    MissingZeroSector(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub qk: i64,
    pub qb: i64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub trace_dev: f64,
    pub herm_dev: f64,
    pub trunc_weight: f64,
    pub chi_used: usize,
}

/// Charge-labelled Schmidt spectrum of one bond at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSnapshot {
    pub time: f64,
    pub bond: usize,
    entries: Vec<SpectrumEntry>,
    pub diagnostics: Diagnostics,
}

impl SpectrumSnapshot {
    /// Entries are sorted by descending `lambda` (ties by charge).
    pub fn new(
        time: f64,
        bond: usize,
        mut entries: Vec<SpectrumEntry>,
        diagnostics: Diagnostics,
    ) -> Result<Self, ObservableError> {
        if entries.iter().any(|e| !e.lambda.is_finite() || e.lambda < 0.0) {
            return Err(ObservableError::BadValue);
        }
        entries.sort_by(|a, b| {
            b.lambda.total_cmp(&a.lambda).then(a.qk.cmp(&b.qk)).then(a.qb.cmp(&b.qb))
        });
        Ok(Self { time, bond, entries, diagnostics })
    }

    pub fn from_schmidt(
        time: f64,
        bond: usize,
        values: &SchmidtValues,
        diagnostics: Diagnostics,
    ) -> Result<Self, ObservableError> {
        let entries = values
            .sectors()
            .iter()
            .flat_map(|(q, v)| v.iter().map(move |&x| SpectrumEntry { qk: q.qk, qb: q.qb, lambda: x }))
            .collect();
        Self::new(time, bond, entries, diagnostics)
    }

    pub fn entries(&self) -> &[SpectrumEntry] {
        &self.entries
    }

    pub fn weight(&self) -> f64 {
        self.entries.iter().map(|e| e.lambda * e.lambda).sum()
    }

    fn require_normalized(&self) -> Result<(), ObservableError> {
        let w = self.weight();
        if (w - 1.0).abs() > NORM_TOL {
            return Err(ObservableError::Unnormalized(w));
        }
        Ok(())
    }
}

/// Which magnetization labels a Schmidt vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectorLabel {
    /// Left multiplication (`qk`).
    #[default]
    Ket,
    /// Right multiplication (`qb`).
    Bra,
}

impl SectorLabel {
    fn of(self, e: &SpectrumEntry) -> i64 {
        match self {
            SectorLabel::Ket => e.qk,
            SectorLabel::Bra => e.qb,
        }
    }
}

fn xlog2x(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Shannon entropy in bits of a probability table.
pub fn shannon<K>(probs: &BTreeMap<K, f64>) -> f64 {
    -probs.values().map(|&p| xlog2x(p)).sum::<f64>()
}

/// `−Σ λ² log₂ λ²` in bits.
pub fn operator_entanglement(snap: &SpectrumSnapshot) -> Result<f64, ObservableError> {
    snap.require_normalized()?;
    Ok(-snap.entries.iter().map(|e| xlog2x(e.lambda * e.lambda)).sum::<f64>())
}

/// Weight per magnetization sector, keyed by the doubled magnetization.
pub fn sector_probabilities(snap: &SpectrumSnapshot, label: SectorLabel) -> BTreeMap<i64, f64> {
    let mut out = BTreeMap::new();
    for e in &snap.entries {
        *out.entry(label.of(e)).or_insert(0.0) += e.lambda * e.lambda;
    }
    out
}

/// Entropy of the renormalized spectrum within each magnetization sector.
pub fn resolved_entanglement(snap: &SpectrumSnapshot, label: SectorLabel) -> BTreeMap<i64, f64> {
    let probs = sector_probabilities(snap, label);
    let mut out: BTreeMap<i64, f64> = BTreeMap::new();
    for e in &snap.entries {
        let p = probs[&label.of(e)];
        if p > 0.0 {
            *out.entry(label.of(e)).or_insert(0.0) -= xlog2x(e.lambda * e.lambda / p);
        }
    }
    out.retain(|q, _| probs[q] > 0.0);
    out
}

/// `|S_op − Σ_q p_q S_q − H(p)|`.
pub fn check_decomposition(snap: &SpectrumSnapshot) -> Result<f64, ObservableError> {
    let total = operator_entanglement(snap)?;
    let probs = sector_probabilities(snap, SectorLabel::Ket);
    let resolved = resolved_entanglement(snap, SectorLabel::Ket);
    let assembled: f64 =
        resolved.iter().map(|(q, s)| probs[q] * s).sum::<f64>() + shannon(&probs);
    Ok((total - assembled).abs())
}

/// Matching tolerance for multiplet detection at a given truncation weight.
pub fn eps_mult(trunc_weight: f64) -> f64 {
    1e-6f64.max(10.0 * trunc_weight.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multiplet {
    /// Doubled total spin `2S`.
    pub spin2: i64,
    /// Value of the seeding entry.
    pub lambda: f64,
    /// Positions in [`SpectrumSnapshot::entries`], from `qk = 2S` down.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipletTable {
    pub multiplets: Vec<Multiplet>,
    /// Worst relative mismatch inside a multiplet; infinite when some
    /// entries could not be grouped.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpinSectors {
    pub table: MultipletTable,
    /// `p_S`, keyed by `2S`.
    pub probabilities: BTreeMap<i64, f64>,
    /// `S_op,S`, keyed by `2S`.
    pub entropies: BTreeMap<i64, f64>,
}

/// Groups the `qk`-labelled spectrum into SU(2) multiplets.
///
/// Sectors are visited from the largest `qk` down. Every entry still free at
/// `qk = m ≥ 0` seeds a multiplet with `2S = m` and claims, at each of
/// `m − 2, …, −m`, the free entry closest in value (first in sort order on
/// ties). A claim further than `eps_mult` (relative) from the seed, a
/// missing partner, or a free entry left at negative `qk` makes the grouping
/// inconsistent.
pub fn detect_multiplets(snap: &SpectrumSnapshot, eps_mult: f64) -> SpinSectors {
    let mut pools: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, e) in snap.entries.iter().enumerate() {
        pools.entry(e.qk).or_default().push(i);
    }
    let mut used = vec![false; snap.entries.len()];
    let mut multiplets = Vec::new();
    let mut residual: f64 = 0.0;
    let mut consistent = true;
    let charges: Vec<i64> = pools.keys().rev().copied().collect();
    for &m in &charges {
        for &seed in &pools[&m] {
            if used[seed] {
                continue;
            }
            if m < 0 {
                consistent = false;
                continue;
            }
            used[seed] = true;
            let lam = snap.entries[seed].lambda;
            let mut members = vec![seed];
            let mut q = m - 2;
            while q >= -m {
                let best = pools.get(&q).and_then(|pool| {
                    pool.iter()
                        .copied()
                        .filter(|&i| !used[i])
                        .min_by(|&a, &b| {
                            let da = (snap.entries[a].lambda - lam).abs();
                            let db = (snap.entries[b].lambda - lam).abs();
                            da.total_cmp(&db).then(a.cmp(&b))
                        })
                });
                match best {
                    Some(i) => {
                        let rel = if lam > 0.0 { (snap.entries[i].lambda - lam).abs() / lam } else { 0.0 };
                        if rel > eps_mult {
                            consistent = false;
                        } else {
                            residual = residual.max(rel);
                            used[i] = true;
                            members.push(i);
                        }
                    }
                    None => consistent = false,
                }
                q -= 2;
            }
            multiplets.push(Multiplet { spin2: m, lambda: lam, members });
        }
    }
    if !consistent {
        residual = f64::INFINITY;
    }

    let mut probabilities: BTreeMap<i64, f64> = BTreeMap::new();
    for mlt in &multiplets {
        let w: f64 = mlt.members.iter().map(|&i| snap.entries[i].lambda.powi(2)).sum();
        *probabilities.entry(mlt.spin2).or_insert(0.0) += w;
    }
    let mut entropies: BTreeMap<i64, f64> = BTreeMap::new();
    for mlt in &multiplets {
        let p = probabilities[&mlt.spin2];
        if p > 0.0 {
            let s: f64 =
                mlt.members.iter().map(|&i| xlog2x(snap.entries[i].lambda.powi(2) / p)).sum();
            *entropies.entry(mlt.spin2).or_insert(0.0) -= s;
        }
    }
    entropies.retain(|k, _| probabilities[k] > 0.0);
    SpinSectors { table: MultipletTable { multiplets, residual }, probabilities, entropies }
}

/// `p_S = (2S+1)(p_{Sz=S} − p_{Sz=S+1})` for every `S` with `p_{Sz=S}`
/// present, keyed by `2S`.
pub fn spin_from_magnetization(p_sz: &BTreeMap<i64, f64>) -> BTreeMap<i64, f64> {
    p_sz.iter()
        .filter(|(m, _)| **m >= 0)
        .map(|(&m, &p)| {
            let above = p_sz.get(&(m + 2)).copied().unwrap_or(0.0);
            (m, (m + 1) as f64 * (p - above))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelationResiduals {
    /// Worst `|p_Sz − Σ_{S≥|Sz|} p_S/(2S+1)|`.
    pub probability: f64,
    /// Worst mismatch of the resolved-entropy relation over sectors with
    /// `p_Sz > 0`.
    pub entropy: f64,
}

/// Checks the magnetization-sector data of `snap` against what the spin
/// sectors predict.
pub fn check_sector_relations(
    p_spin: &BTreeMap<i64, f64>,
    s_spin: &BTreeMap<i64, f64>,
    snap: &SpectrumSnapshot,
) -> RelationResiduals {
    let p_sz = sector_probabilities(snap, SectorLabel::Ket);
    let s_sz = resolved_entanglement(snap, SectorLabel::Ket);
    let mut prob: f64 = 0.0;
    let mut ent: f64 = 0.0;
    for (&m, &p) in &p_sz {
        let terms = p_spin.iter().filter(|(s2, _)| **s2 >= m.abs() && (*s2 - m) % 2 == 0);
        let predicted: f64 = terms.clone().map(|(s2, ps)| ps / (s2 + 1) as f64).sum();
        prob = prob.max((p - predicted).abs());
        if p > 0.0 {
            let sum: f64 = terms
                .filter(|(_, ps)| **ps > 0.0)
                .map(|(s2, ps)| ps * (s_spin.get(s2).copied().unwrap_or(0.0) - ps.log2()) / (s2 + 1) as f64)
                .sum();
            let predicted_s = sum / p + p.log2();
            ent = ent.max((s_sz.get(&m).copied().unwrap_or(0.0) - predicted_s).abs());
        }
    }
    RelationResiduals { probability: prob, entropy: ent }
}

/// `S_op,Sz(t) − S_op,0(t)` for every sector and time.
pub fn delta_resolved(
    series: &[(f64, BTreeMap<i64, f64>)],
) -> Result<Vec<(f64, BTreeMap<i64, f64>)>, ObservableError> {
    series
        .iter()
        .map(|(t, sectors)| {
            let zero = *sectors.get(&0).ok_or(ObservableError::MissingZeroSector(*t))?;
            Ok((*t, sectors.iter().map(|(&q, &s)| (q, s - zero)).collect()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(entries: &[(i64, i64, f64)]) -> SpectrumSnapshot {
        SpectrumSnapshot::new(
            0.0,
            1,
            entries.iter().map(|&(qk, qb, lambda)| SpectrumEntry { qk, qb, lambda }).collect(),
            Diagnostics::default(),
        )
        .unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(operator_entanglement(&snap(&[(0, 0, 1.0)])).unwrap(), 0.0);
        let four = snap(&[(0, 0, 0.5), (0, 0, 0.5), (2, -2, 0.5), (-2, 2, 0.5)]);
        assert!((operator_entanglement(&four).unwrap() - 2.0).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let three = snap(&[(0, 0, h), (2, 0, 0.5), (-2, 0, 0.5)]);
        assert!((operator_entanglement(&three).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(
            operator_entanglement(&snap(&[(0, 0, 0.5)])),
            Err(ObservableError::Unnormalized(_))
        ));
    }

    #[test]
    fn probabilities_and_resolved() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = snap(&[(0, 0, h), (2, 0, 0.5), (-2, 0, 0.5)]);
        let p = sector_probabilities(&s, SectorLabel::Ket);
        let expected = BTreeMap::from([(-2, 0.25), (0, 0.5), (2, 0.25)]);
        assert!(p.keys().eq(expected.keys()));
        assert!(p.iter().all(|(m, v)| (v - expected[m]).abs() < 1e-15));
        assert!(resolved_entanglement(&s, SectorLabel::Ket).values().all(|&x| x == 0.0));

        let pair = snap(&[(0, 0, h), (2, 0, 0.5), (2, 0, 0.5)]);
        let r = resolved_entanglement(&pair, SectorLabel::Ket);
        assert!((r[&2] - 1.0).abs() < 1e-15);
        assert!(check_decomposition(&pair).unwrap() < 1e-15);
        assert!(check_decomposition(&snap(&[(0, 0, 1.0)])).unwrap() == 0.0);
    }

    #[test]
    fn triplet_plus_singlet() {
        let (a, b) = (0.5f64, 0.5f64);
        let s = snap(&[(-2, 0, a), (0, 0, a), (2, 0, a), (0, 0, b)]);
        let spin = detect_multiplets(&s, 1e-6);
        assert_eq!(spin.table.multiplets.len(), 2);
        assert!((spin.probabilities[&2] - 3.0 * a * a).abs() < 1e-15);
        assert!((spin.probabilities[&0] - b * b).abs() < 1e-15);
        assert_eq!(spin.table.residual, 0.0);
    }

    #[test]
    fn unmatched_entries_flag_the_table() {
        let s = snap(&[(2, 0, 0.8), (0, 0, 0.6)]);
        assert!(detect_multiplets(&s, 1e-6).table.residual.is_infinite());
    }

    #[test]
    fn delta_needs_zero_sector() {
        let series = vec![(1.0, BTreeMap::from([(0, 1.0), (2, 1.5), (-2, 1.5)]))];
        let d = delta_resolved(&series).unwrap();
        assert_eq!(d[0].1[&2], 0.5);
        let bad = vec![(2.0, BTreeMap::from([(1, 1.0)]))];
        assert_eq!(delta_resolved(&bad), Err(ObservableError::MissingZeroSector(2.0)));
    }

    #[test]
    fn eps_mult_widens_with_truncation() {
        assert_eq!(eps_mult(0.0), 1e-6);
        assert!((eps_mult(1e-6) - 1e-2).abs() < 1e-15);
    }
}
