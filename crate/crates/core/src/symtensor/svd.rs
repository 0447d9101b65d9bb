use std::collections::BTreeMap;

use faer::Mat;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::charge::{Charge, Direction, GradedIndex};
use super::flip::{check_legs, flat_image, parity_svd, LegFlip, Parity};
use super::tensor::{BlockKey, ChargeTensor};
use super::TensorError;
use crate::C64;

/// Singular values grouped by the charge of the bond sector they live in.
/// Each sector is sorted in descending order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchmidtValues {
    sectors: BTreeMap<Charge, Vec<f64>>,
}

impl SchmidtValues {
    pub fn new(sectors: BTreeMap<Charge, Vec<f64>>) -> Result<Self, TensorError> {
        let mut out = BTreeMap::new();
        for (q, mut v) in sectors {
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(TensorError::NonFinite);
            }
            if v.is_empty() {
                continue;
            }
            v.sort_by(|a, b| b.total_cmp(a));
            out.insert(q, v);
        }
        Ok(Self { sectors: out })
    }

    /// A single value `1` in sector `charge`.
    pub fn trivial(charge: Charge) -> Self {
        Self { sectors: BTreeMap::from([(charge, vec![1.0])]) }
    }

    pub fn sectors(&self) -> &BTreeMap<Charge, Vec<f64>> {
        &self.sectors
    }

    pub fn get(&self, q: Charge) -> Option<&[f64]> {
        self.sectors.get(&q).map(|v| v.as_slice())
    }

    pub fn dim(&self) -> usize {
        self.sectors.values().map(|v| v.len()).sum()
    }

    pub fn weight(&self) -> f64 {
        self.sectors.values().flatten().map(|x| x * x).sum()
    }

    /// Rescales so that `Σ s² = 1`; returns the previous norm.
    pub fn normalize(&mut self) -> f64 {
        let n = self.weight().sqrt();
        if n > 0.0 {
            for v in self.sectors.values_mut() {
                for x in v.iter_mut() {
                    *x /= n;
                }
            }
        }
        n
    }

    /// All `(charge, value)` pairs sorted by descending value; ties keep
    /// charge order.
    pub fn sorted_entries(&self) -> Vec<(Charge, f64)> {
        let mut out: Vec<(Charge, f64)> =
            self.sectors.iter().flat_map(|(q, v)| v.iter().map(move |x| (*q, *x))).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    /// Bond leg matching this spectrum.
    pub fn index(&self, dir: Direction) -> GradedIndex {
        GradedIndex::new(self.sectors.iter().map(|(q, v)| (*q, v.len())), dir)
            .expect("sectors are unique and nonempty")
    }

    /// Elementwise `f(s)` per sector, for use with [`ChargeTensor::scale_axis`].
    pub fn map(&self, f: impl Fn(f64) -> f64) -> BTreeMap<Charge, Vec<f64>> {
        self.sectors.iter().map(|(q, v)| (*q, v.iter().map(|x| f(*x)).collect())).collect()
    }

    pub fn max_abs_diff(&self, other: &SchmidtValues) -> f64 {
        let mut keys: Vec<Charge> = self.sectors.keys().chain(other.sectors.keys()).copied().collect();
        keys.sort();
        keys.dedup();
        let mut worst: f64 = 0.0;
        for q in keys {
            let a = self.get(q).unwrap_or(&[]);
            let b = other.get(q).unwrap_or(&[]);
            for i in 0..a.len().max(b.len()) {
                let x = a.get(i).copied().unwrap_or(0.0);
                let y = b.get(i).copied().unwrap_or(0.0);
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationParams {
    pub chi_max: usize,
    /// Values with `s² < eps_trunc · Σ s²` are discarded.
    pub eps_trunc: f64,
    /// Rescale the kept values to unit norm.
    pub normalize: bool,
    /// Width, in units of the largest singular value, within which values
    /// count as one degenerate group.
    pub degeneracy_tol: f64,
}

impl Default for TruncationParams {
    fn default() -> Self {
        Self { chi_max: usize::MAX, eps_trunc: 1e-12, normalize: true, degeneracy_tol: 1e-8 }
    }
}

impl TruncationParams {
    pub fn with_chi(chi_max: usize) -> Self {
        Self { chi_max, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct SvdOutput {
    /// Row legs followed by the new bond leg (outgoing).
    pub u: ChargeTensor,
    pub s: SchmidtValues,
    /// New bond leg (incoming) followed by the column legs.
    pub v: ChargeTensor,
    /// Discarded `Σ s²` relative to the full `Σ s²`.
    pub trunc_weight: f64,
    /// Norm of the kept values before normalization.
    pub norm: f64,
    /// Number of degenerate groups dropped whole because they straddled
    /// `chi_max`.
    pub split_groups: usize,
    /// Flip parities of the kept zero-sector states, flip-resolved SVD only.
    pub parity: Vec<Parity>,
}

type KeyLayout = Vec<(BlockKey, usize, Vec<usize>)>;

struct Sector {
    row_keys: KeyLayout,
    col_keys: KeyLayout,
    u: Mat<C64>,
    s: Vec<f64>,
    v: Mat<C64>,
    /// Flip parities of the columns, zero sector only.
    parity: Vec<Parity>,
}

fn with_offsets(keys: BTreeMap<BlockKey, Vec<usize>>) -> (KeyLayout, usize) {
    let mut off = 0;
    let out = keys
        .into_iter()
        .map(|(k, d)| {
            let o = off;
            off += d.iter().product::<usize>();
            (k, o, d)
        })
        .collect();
    (out, off)
}

/// Flat image under the flip of every fused index of `from` inside `to`.
fn fused_images(from: &KeyLayout, to: &KeyLayout, flips: &[&LegFlip]) -> Vec<(usize, f64)> {
    let offsets: BTreeMap<&BlockKey, usize> = to.iter().map(|(k, o, _)| (k, *o)).collect();
    let mut out = Vec::new();
    for (key, _, dims) in from {
        let image_key: BlockKey = key.iter().map(|q| -*q).collect();
        let base = offsets[&image_key];
        for flat in 0..dims.iter().product::<usize>() {
            let (j, sign) = flat_image(key, dims, flat, flips);
            out.push((base + j, sign));
        }
    }
    out
}

/// Block-wise SVD of `t` with rows = `row_axes` and columns = the remaining
/// legs, followed by a global truncation across sectors.
pub fn svd_truncate(
    t: &ChargeTensor,
    row_axes: &[usize],
    params: &TruncationParams,
) -> Result<SvdOutput, TensorError> {
    svd_impl(t, row_axes, params, None)
}

/// As [`svd_truncate`] for a flip-covariant `t`, with `flips[a]` acting on
/// leg `a`. Sectors `q` and `−q` share singular values and vectors, and
/// the zero sector is decomposed by flip parity, so the new bond is again
/// in a flip-covariant gauge. Only the sector of each pair with the larger
/// charge is read.
pub fn svd_truncate_flip(
    t: &ChargeTensor,
    row_axes: &[usize],
    params: &TruncationParams,
    flips: &[LegFlip],
) -> Result<SvdOutput, TensorError> {
    check_legs(t, flips)?;
    svd_impl(t, row_axes, params, Some(flips))
}

fn svd_impl(
    t: &ChargeTensor,
    row_axes: &[usize],
    params: &TruncationParams,
    flips: Option<&[LegFlip]>,
) -> Result<SvdOutput, TensorError> {
    if params.chi_max == 0 || params.eps_trunc.is_nan() || params.eps_trunc < 0.0 {
        return Err(TensorError::BadTruncation);
    }
    let rank = t.rank();
    let mut is_row = vec![false; rank];
    for &a in row_axes {
        if a >= rank || is_row[a] {
            return Err(TensorError::BadAxis(a));
        }
        is_row[a] = true;
    }
    if row_axes.is_empty() || row_axes.len() == rank {
        return Err(TensorError::EmptyGroup);
    }
    if !t.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let col_axes: Vec<usize> = (0..rank).filter(|&a| !is_row[a]).collect();
    let perm: Vec<usize> = row_axes.iter().chain(&col_axes).copied().collect();
    let tp = t.permute(&perm)?;
    let nr = row_axes.len();
    let row_idx: Vec<GradedIndex> = tp.indices()[..nr].to_vec();
    let col_idx: Vec<GradedIndex> = tp.indices()[nr..].to_vec();
    let pflips: Option<Vec<&LegFlip>> = flips.map(|f| perm.iter().map(|&a| &f[a]).collect());

    let row_charge = |key: &[Charge]| {
        key.iter()
            .zip(&row_idx)
            .fold(Charge::ZERO, |acc, (q, i)| acc + q.scaled(i.direction().sign()))
    };
    // Collect the row and column keys present in each sector.
    type Keys = BTreeMap<BlockKey, Vec<usize>>;
    let mut layout: BTreeMap<Charge, (Keys, Keys)> = BTreeMap::new();
    for (key, b) in tp.blocks() {
        let q = row_charge(&key[..nr]);
        let e = layout.entry(q).or_default();
        e.0.insert(key[..nr].to_vec(), b.shape()[..nr].to_vec());
        e.1.insert(key[nr..].to_vec(), b.shape()[nr..].to_vec());
    }
    if pflips.is_some() {
        // Complete every sector with the images of its partner's keys.
        let snapshot: Vec<(Charge, Keys, Keys)> =
            layout.iter().map(|(q, (r, c))| (*q, r.clone(), c.clone())).collect();
        for (q, rows, cols) in snapshot {
            let e = layout.entry(-q).or_default();
            for (k, d) in rows {
                e.0.insert(k.iter().map(|x| -*x).collect(), d);
            }
            for (k, d) in cols {
                e.1.insert(k.iter().map(|x| -*x).collect(), d);
            }
        }
    }

    let mut sectors: BTreeMap<Charge, Sector> = BTreeMap::new();
    let mut derived: Vec<(Charge, KeyLayout, KeyLayout)> = Vec::new();
    for (q, (rows, cols)) in layout {
        let (row_keys, nrows) = with_offsets(rows);
        let (col_keys, ncols) = with_offsets(cols);
        if pflips.is_some() && q < -q {
            derived.push((q, row_keys, col_keys));
            continue;
        }
        let mut m = Mat::<C64>::zeros(nrows, ncols);
        for (rk, ro, rd) in &row_keys {
            let rn: usize = rd.iter().product();
            for (ck, co, cd) in &col_keys {
                let mut key = rk.clone();
                key.extend_from_slice(ck);
                if let Some(b) = tp.block(&key) {
                    let cn: usize = cd.iter().product();
                    let data = b.as_slice().expect("standard layout");
                    for i in 0..rn {
                        for j in 0..cn {
                            m[(ro + i, co + j)] = data[i * cn + j];
                        }
                    }
                }
            }
        }
        let sector = match &pflips {
            Some(pf) if q == Charge::ZERO => {
                let ri = fused_images(&row_keys, &row_keys, &pf[..nr]);
                let ci = fused_images(&col_keys, &col_keys, &pf[nr..]);
                let ps = parity_svd(&m, &ri, &ci)?;
                Sector { row_keys, col_keys, u: ps.u, s: ps.s, v: ps.v, parity: ps.parity }
            }
            _ => {
                let svd = m.thin_svd().map_err(|_| TensorError::SvdFailed)?;
                let s: Vec<f64> = (0..svd.S().dim()).map(|i| svd.S()[i].re).collect();
                Sector { row_keys, col_keys, u: svd.U().to_owned(), s, v: svd.V().to_owned(), parity: Vec::new() }
            }
        };
        sectors.insert(q, sector);
    }
    if let Some(pf) = &pflips {
        for (q, row_keys, col_keys) in derived {
            let src = &sectors[&-q];
            let k = src.s.len();
            let mut u = Mat::<C64>::zeros(src.u.nrows(), k);
            for (r, (j, sign)) in fused_images(&src.row_keys, &row_keys, &pf[..nr]).into_iter().enumerate() {
                for c in 0..k {
                    u[(j, c)] = src.u[(r, c)] * sign;
                }
            }
            let mut v = Mat::<C64>::zeros(src.v.nrows(), k);
            for (r, (j, sign)) in fused_images(&src.col_keys, &col_keys, &pf[nr..]).into_iter().enumerate() {
                for c in 0..k {
                    v[(j, c)] = src.v[(r, c)] * sign;
                }
            }
            let s = src.s.clone();
            sectors.insert(q, Sector { row_keys, col_keys, u, s, v, parity: Vec::new() });
        }
    }

    // Global truncation over all sectors.
    let mut all: Vec<(f64, Charge, usize)> = sectors
        .iter()
        .flat_map(|(q, sec)| sec.s.iter().enumerate().map(move |(i, &x)| (x, *q, i)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let total: f64 = all.iter().map(|e| e.0 * e.0).sum();
    if !total.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let width = params.degeneracy_tol * all.first().map_or(0.0, |e| e.0);
    let mut kept = 0usize;
    let mut split_groups = 0usize;
    let mut start = 0usize;
    while start < all.len() {
        let lead = all[start].0;
        let mut end = start + 1;
        while end < all.len() && all[end - 1].0 - all[end].0 <= width {
            end += 1;
        }
        if lead <= 0.0 || lead * lead < params.eps_trunc * total {
            break;
        }
        if kept + (end - start) > params.chi_max {
            split_groups += 1;
            break;
        }
        kept = end;
        start = end;
    }
    if kept == 0 {
        return Err(TensorError::AllTruncated);
    }
    let mut counts: BTreeMap<Charge, usize> = BTreeMap::new();
    for e in &all[..kept] {
        *counts.entry(e.1).or_insert(0) += 1;
    }
    let kept_weight: f64 = all[..kept].iter().map(|e| e.0 * e.0).sum();
    let trunc_weight = if total > 0.0 { ((total - kept_weight) / total).max(0.0) } else { 0.0 };
    let norm = kept_weight.sqrt();
    let scale = if params.normalize { 1.0 / norm } else { 1.0 };

    let mut spectrum = BTreeMap::new();
    for (q, &k) in &counts {
        spectrum.insert(*q, sectors[q].s[..k].iter().map(|x| x * scale).collect::<Vec<_>>());
    }
    let s = SchmidtValues::new(spectrum)?;

    let bond_out = s.index(Direction::Out);
    let bond_in = s.index(Direction::In);
    let mut u_idx = row_idx.clone();
    u_idx.push(bond_out);
    let mut v_idx = vec![bond_in];
    v_idx.extend(col_idx.iter().cloned());
    let mut u = ChargeTensor::zeros(u_idx);
    let mut v = ChargeTensor::zeros(v_idx);
    for (q, &k) in &counts {
        let sec = &sectors[q];
        for (rk, ro, rd) in &sec.row_keys {
            let rn: usize = rd.iter().product();
            let mut data = Vec::with_capacity(rn * k);
            for i in 0..rn {
                for j in 0..k {
                    data.push(sec.u[(ro + i, j)]);
                }
            }
            let mut shape = rd.clone();
            shape.push(k);
            let mut key = rk.clone();
            key.push(*q);
            u.insert_block(key, ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape"))?;
        }
        for (ck, co, cd) in &sec.col_keys {
            let cn: usize = cd.iter().product();
            let mut data = Vec::with_capacity(cn * k);
            for j in 0..k {
                for i in 0..cn {
                    data.push(sec.v[(co + i, j)].conj());
                }
            }
            let mut shape = vec![k];
            shape.extend_from_slice(cd);
            let mut key = vec![*q];
            key.extend_from_slice(ck);
            v.insert_block(key, ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape"))?;
        }
    }
    let parity = match (sectors.get(&Charge::ZERO), counts.get(&Charge::ZERO)) {
        (Some(sec), Some(&k)) if !sec.parity.is_empty() => sec.parity[..k].to_vec(),
        _ => Vec::new(),
    };
    Ok(SvdOutput { u, s, v, trunc_weight, norm, split_groups, parity })
}
