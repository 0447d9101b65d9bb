//! Exact evolution of short open chains in superket form.
//!
//! Coefficients are stored for the product basis `e_{s_0} ⊗ … ⊗ e_{s_{N−1}}`
//! with flat index `Σ s_i · 4^{N−1−i}`; site `0` is the most significant digit.

use std::collections::BTreeMap;

use faer::Mat;
use thiserror::Error;

use crate::impdo::StateKind;
use crate::lindblad::{pair_coefficients, Grading, ModelError, ModelParams};
use crate::observables::{Diagnostics, ObservableError, SpectrumEntry, SpectrumSnapshot};
use crate::symtensor::Charge;
use crate::C64;

pub const MIN_SITES: usize = 2;
pub const MAX_SITES: usize = 8;

const MAX_TERMS: usize = 60;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("chain length {0} outside {MIN_SITES}..={MAX_SITES}")]
    SitesOutOfRange(usize),
    #[error("pair states need an even number of sites, got {0}")]
    OddLength(usize),
    #[error("cut {cut} invalid for {sites} sites")]
    BadCut { cut: usize, sites: usize },
    #[error("superket is not in a single charge sector")]
    MixedCharge,
    #[error("Taylor series did not reach tolerance {0:e}")]
    Tolerance(f64),
    #[error("singular value decomposition failed")]
    Svd,
    #[error("negative evolution time {0}")]
    NegativeTime(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
}

fn check_sites(n: usize) -> Result<(), OracleError> {
    if (MIN_SITES..=MAX_SITES).contains(&n) {
        Ok(())
    } else {
        Err(OracleError::SitesOutOfRange(n))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseSuperket {
    n_sites: usize,
    data: Vec<C64>,
}

impl DenseSuperket {
    pub fn new(n_sites: usize, data: Vec<C64>) -> Result<Self, OracleError> {
        check_sites(n_sites)?;
        assert_eq!(data.len(), 1 << (2 * n_sites), "coefficient count");
        Ok(Self { n_sites, data })
    }

    /// Product of identical pair density matrices on sites `(0,1), (2,3), …`.
    pub fn pair_product(kind: StateKind, n_sites: usize) -> Result<Self, OracleError> {
        check_sites(n_sites)?;
        if n_sites % 2 != 0 {
            return Err(OracleError::OddLength(n_sites));
        }
        let pair = pair_coefficients(&kind.pair_density());
        let mut data = vec![C64::new(1.0, 0.0)];
        for _ in 0..n_sites / 2 {
            let mut next = Vec::with_capacity(data.len() * 16);
            for &a in &data {
                for &b in &pair {
                    next.push(a * b);
                }
            }
            data = next;
        }
        Ok(Self { n_sites, data })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// `Tr ρ`; each site identity contributes `√2` per unit coefficient.
    pub fn trace(&self) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        'outer: for (idx, c) in self.data.iter().enumerate() {
            for i in 0..self.n_sites {
                let s = (idx >> (2 * i)) & 3;
                if s != 0 && s != 3 {
                    continue 'outer;
                }
            }
            acc += c;
        }
        acc * 2f64.powf(self.n_sites as f64 / 2.0)
    }

    /// Largest `|c − c†|` entry, where `†` swaps ket and bra on every site.
    pub fn hermiticity_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (idx, c) in self.data.iter().enumerate() {
            let mut adj = 0;
            for i in 0..self.n_sites {
                let s = (idx >> (2 * i)) & 3;
                let t = ((s & 1) << 1) | (s >> 1);
                adj |= t << (2 * i);
            }
            worst = worst.max((c - self.data[adj].conj()).norm());
        }
        worst
    }

    /// Total `(qk, qb)` under `grading`, if every nonzero coefficient agrees.
    pub fn total_charge(&self, grading: Grading) -> Result<Charge, OracleError> {
        let mut found: Option<Charge> = None;
        for (idx, c) in self.data.iter().enumerate() {
            if c.norm() == 0.0 {
                continue;
            }
            let q = digits_charge(idx, 0, self.n_sites, self.n_sites, grading);
            match found {
                None => found = Some(q),
                Some(f) if f != q => return Err(OracleError::MixedCharge),
                _ => {}
            }
        }
        Ok(found.unwrap_or(Charge::ZERO))
    }

    pub fn max_abs_diff(&self, other: &DenseSuperket) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Charge of sites `from..to` in a flat index of an `n`-site superket.
fn digits_charge(idx: usize, from: usize, to: usize, n: usize, grading: Grading) -> Charge {
    (from..to).fold(Charge::ZERO, |acc, i| acc + grading.site_charge((idx >> (2 * (n - 1 - i))) & 3))
}

/// Open-chain Liouvillian applied without forming a matrix.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    n_sites: usize,
    params: ModelParams,
}

impl Liouvillian {
    pub fn new(n_sites: usize, params: ModelParams) -> Result<Self, OracleError> {
        check_sites(n_sites)?;
        params.validate()?;
        Ok(Self { n_sites, params })
    }

    /// Upper bound on the operator norm, `(N−1)(2J + 2γ)`.
    pub fn norm_bound(&self) -> f64 {
        (self.n_sites - 1) as f64 * 2.0 * (self.params.coupling + self.params.gamma)
    }

    /// `out = L c`. On bond `(i, i+1)` the swap permutes ket bits
    /// (left multiplication), bra bits (right multiplication) or both.
    pub fn apply(&self, c: &[C64], out: &mut [C64]) {
        let n = self.n_sites;
        let (j, g) = (self.params.coupling, self.params.gamma);
        let minus_ij = C64::new(0.0, -j);
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for bond in 0..n - 1 {
            let sh_l = 2 * (n - 1 - bond);
            let sh_r = sh_l - 2;
            for (idx, o) in out.iter_mut().enumerate() {
                let sl = (idx >> sh_l) & 3;
                let sr = (idx >> sh_r) & 3;
                let base = idx & !((3 << sh_l) | (3 << sh_r));
                let (kl, bl, kr, br) = (sl >> 1, sl & 1, sr >> 1, sr & 1);
                let pack = |kl: usize, bl: usize, kr: usize, br: usize| {
                    base | (((kl << 1) | bl) << sh_l) | (((kr << 1) | br) << sh_r)
                };
                let swap_ket = c[pack(kr, bl, kl, br)];
                let swap_bra = c[pack(kl, br, kr, bl)];
                let swap_both = c[pack(kr, br, kl, bl)];
                *o += minus_ij * (swap_ket - swap_bra) + (swap_both - c[idx]) * g;
            }
        }
    }

    /// `exp(L t) c` by a Taylor series on substeps with `h·‖L‖ ≤ 1`; each
    /// substep sums terms until they drop below `tol` relative to the
    /// partial sum.
    pub fn evolve(&self, rho: &DenseSuperket, t: f64, tol: f64) -> Result<DenseSuperket, OracleError> {
        if t < 0.0 {
            return Err(OracleError::NegativeTime(t));
        }
        if t == 0.0 {
            return Ok(rho.clone());
        }
        let substeps = (t * self.norm_bound()).ceil().max(1.0) as usize;
        let h = t / substeps as f64;
        let mut cur = rho.data.clone();
        let mut term = vec![C64::new(0.0, 0.0); cur.len()];
        let mut next = vec![C64::new(0.0, 0.0); cur.len()];
        for _ in 0..substeps {
            term.copy_from_slice(&cur);
            let mut sum = cur.clone();
            let mut done = false;
            for k in 1..=MAX_TERMS {
                self.apply(&term, &mut next);
                let f = h / k as f64;
                for (tz, nz) in term.iter_mut().zip(&next) {
                    *tz = nz * f;
                }
                let mut tn: f64 = 0.0;
                let mut sn: f64 = 0.0;
                for (s, tz) in sum.iter_mut().zip(&term) {
                    *s += tz;
                    tn += tz.norm_sqr();
                    sn += s.norm_sqr();
                }
                if tn.sqrt() <= tol * sn.sqrt() {
                    done = true;
                    break;
                }
            }
            if !done {
                return Err(OracleError::Tolerance(tol));
            }
            cur = sum;
        }
        Ok(DenseSuperket { n_sites: rho.n_sites, data: cur })
    }
}

/// Operator Schmidt spectrum across the cut after `cut` sites, labelled by
/// the charge of the left part.
pub fn exact_operator_schmidt(
    rho: &DenseSuperket,
    cut: usize,
    grading: Grading,
    time: f64,
) -> Result<SpectrumSnapshot, OracleError> {
    let n = rho.n_sites;
    if cut == 0 || cut >= n {
        return Err(OracleError::BadCut { cut, sites: n });
    }
    let total = rho.total_charge(grading)?;
    let cols = 1usize << (2 * (n - cut));
    let rows = 1usize << (2 * cut);
    let mut row_groups: BTreeMap<Charge, Vec<usize>> = BTreeMap::new();
    for r in 0..rows {
        row_groups.entry(digits_charge(r, 0, cut, cut, grading)).or_default().push(r);
    }
    let mut col_groups: BTreeMap<Charge, Vec<usize>> = BTreeMap::new();
    for c in 0..cols {
        col_groups.entry(digits_charge(c, 0, n - cut, n - cut, grading)).or_default().push(c);
    }
    let mut entries = Vec::new();
    for (q, rs) in &row_groups {
        let Some(cs) = col_groups.get(&(total - *q)) else { continue };
        let m = Mat::from_fn(rs.len(), cs.len(), |i, j| rho.data[rs[i] * cols + cs[j]]);
        let s = m.singular_values().map_err(|_| OracleError::Svd)?;
        entries.extend(s.into_iter().filter(|&x| x > 0.0).map(|x| SpectrumEntry { qk: q.qk, qb: q.qb, lambda: x }));
    }
    let norm: f64 = entries.iter().map(|e| e.lambda * e.lambda).sum::<f64>().sqrt();
    let cutoff = 1e-14 * entries.iter().map(|e| e.lambda).fold(0.0, f64::max);
    let entries: Vec<SpectrumEntry> = entries
        .into_iter()
        .filter(|e| e.lambda > cutoff)
        .map(|e| SpectrumEntry { lambda: e.lambda / norm, ..e })
        .collect();
    let herm = hermiticity_of(&entries);
    let diag = Diagnostics {
        trace_dev: (rho.trace().re - 1.0).abs(),
        herm_dev: herm,
        trunc_weight: 0.0,
        chi_used: entries.len(),
    };
    Ok(SpectrumSnapshot::new(time, cut, entries, diag)?)
}

fn hermiticity_of(entries: &[SpectrumEntry]) -> f64 {
    let mut by: BTreeMap<(i64, i64), Vec<f64>> = BTreeMap::new();
    for e in entries {
        by.entry((e.qk, e.qb)).or_default().push(e.lambda);
    }
    for v in by.values_mut() {
        v.sort_by(|a, b| b.total_cmp(a));
    }
    let mut worst: f64 = 0.0;
    for ((qk, qb), v) in &by {
        let w = by.get(&(*qb, *qk)).map(|x| x.as_slice()).unwrap_or(&[]);
        for i in 0..v.len().max(w.len()) {
            let a = v.get(i).copied().unwrap_or(0.0);
            let b = w.get(i).copied().unwrap_or(0.0);
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
