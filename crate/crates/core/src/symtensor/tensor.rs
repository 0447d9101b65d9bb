use std::collections::{BTreeMap, HashMap};

use faer::{Mat, MatRef};
use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn, Slice};

use super::charge::{Charge, Direction, GradedIndex};
use super::dense::{gemm_acc, is_finite};
use super::TensorError;
use crate::C64;

/// Per-leg charge assignment identifying one dense block.
pub type BlockKey = Vec<Charge>;

/// Block-sparse tensor graded by [`Charge`] on every leg.
///
/// Only blocks whose key satisfies `Σ sign(dir)·q = 0` may be stored; every
/// block is kept in standard (row-major) layout with the sector
/// degeneracies as its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ChargeTensor {
    indices: Vec<GradedIndex>,
    blocks: BTreeMap<BlockKey, ArrayD<C64>>,
}

impl ChargeTensor {
    pub fn zeros(indices: Vec<GradedIndex>) -> Self {
        Self { indices, blocks: BTreeMap::new() }
    }

    pub fn from_blocks(
        indices: Vec<GradedIndex>,
        blocks: impl IntoIterator<Item = (BlockKey, ArrayD<C64>)>,
    ) -> Result<Self, TensorError> {
        let mut t = Self::zeros(indices);
        for (k, b) in blocks {
            t.insert_block(k, b)?;
        }
        Ok(t)
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[GradedIndex] {
        &self.indices
    }

    pub fn index(&self, axis: usize) -> &GradedIndex {
        &self.indices[axis]
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&BlockKey, &ArrayD<C64>)> {
        self.blocks.iter()
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = (&BlockKey, &mut ArrayD<C64>)> {
        self.blocks.iter_mut()
    }

    pub fn block(&self, key: &[Charge]) -> Option<&ArrayD<C64>> {
        self.blocks.get(key)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Net charge `Σ sign(dir)·q` of a key; zero for admissible keys.
    pub fn key_charge(&self, key: &[Charge]) -> Charge {
        key.iter()
            .zip(&self.indices)
            .fold(Charge::ZERO, |acc, (q, idx)| acc + q.scaled(idx.direction().sign()))
    }

    fn block_shape(&self, key: &[Charge]) -> Result<Vec<usize>, TensorError> {
        if key.len() != self.rank() {
            return Err(TensorError::RankMismatch { expected: self.rank(), got: key.len() });
        }
        key.iter()
            .zip(&self.indices)
            .enumerate()
            .map(|(axis, (q, idx))| {
                idx.degeneracy(*q).ok_or(TensorError::MissingSector { axis, charge: *q })
            })
            .collect()
    }

    pub fn insert_block(&mut self, key: BlockKey, data: ArrayD<C64>) -> Result<(), TensorError> {
        let shape = self.block_shape(&key)?;
        if data.shape() != shape.as_slice() {
            return Err(TensorError::BlockShape { expected: shape, got: data.shape().to_vec() });
        }
        let net = self.key_charge(&key);
        if net != Charge::ZERO {
            return Err(TensorError::ChargeViolation { key, net });
        }
        let data = if data.is_standard_layout() { data } else { data.as_standard_layout().into_owned() };
        self.blocks.insert(key, data);
        Ok(())
    }

    /// Re-checks the conservation rule and block shapes of every stored block.
    pub fn check(&self) -> Result<(), TensorError> {
        for (key, b) in &self.blocks {
            let shape = self.block_shape(key)?;
            if b.shape() != shape.as_slice() {
                return Err(TensorError::BlockShape { expected: shape, got: b.shape().to_vec() });
            }
            let net = self.key_charge(key);
            if net != Charge::ZERO {
                return Err(TensorError::ChargeViolation { key: key.clone(), net });
            }
        }
        Ok(())
    }

    /// All admissible keys, in lexicographic order.
    pub fn allowed_keys(indices: &[GradedIndex]) -> Vec<BlockKey> {
        let mut out = Vec::new();
        let mut key = Vec::with_capacity(indices.len());
        fn rec(
            indices: &[GradedIndex],
            key: &mut BlockKey,
            acc: Charge,
            out: &mut Vec<BlockKey>,
        ) {
            let d = key.len();
            if d == indices.len() {
                if acc == Charge::ZERO {
                    out.push(key.clone());
                }
                return;
            }
            let sign = indices[d].direction().sign();
            for &(q, _) in indices[d].sectors() {
                key.push(q);
                rec(indices, key, acc + q.scaled(sign), out);
                key.pop();
            }
        }
        rec(indices, &mut key, Charge::ZERO, &mut out);
        out
    }

    /// Extracts the admissible blocks of a dense array. Entries outside
    /// admissible blocks must be below `tol` in magnitude.
    pub fn from_dense(
        indices: Vec<GradedIndex>,
        dense: &ArrayViewD<'_, C64>,
        tol: f64,
    ) -> Result<Self, TensorError> {
        let dims: Vec<usize> = indices.iter().map(|i| i.dim()).collect();
        if dense.shape() != dims.as_slice() {
            return Err(TensorError::BlockShape { expected: dims, got: dense.shape().to_vec() });
        }
        if !is_finite(&dense.iter().copied().collect::<Vec<_>>()) {
            return Err(TensorError::NonFinite);
        }
        let mut t = Self::zeros(indices);
        let mut covered = ArrayD::<bool>::from_elem(IxDyn(&dims), false);
        for key in Self::allowed_keys(&t.indices) {
            let ranges: Vec<(usize, usize)> = key
                .iter()
                .zip(&t.indices)
                .map(|(q, idx)| {
                    let o = idx.offset(*q).unwrap();
                    (o, o + idx.degeneracy(*q).unwrap())
                })
                .collect();
            let view = dense.slice_each_axis(|ax| {
                let (a, b) = ranges[ax.axis.index()];
                Slice::from(a..b)
            });
            covered
                .slice_each_axis_mut(|ax| {
                    let (a, b) = ranges[ax.axis.index()];
                    Slice::from(a..b)
                })
                .fill(true);
            if view.iter().any(|z| z.norm() > 0.0) {
                t.blocks.insert(key, view.as_standard_layout().into_owned());
            }
        }
        for (z, ok) in dense.iter().zip(covered.iter()) {
            if !ok && z.norm() > tol {
                return Err(TensorError::DenseNotSymmetric(z.norm()));
            }
        }
        Ok(t)
    }

    /// Dense expansion; sectors laid out in index order.
    pub fn to_dense(&self) -> ArrayD<C64> {
        let dims: Vec<usize> = self.indices.iter().map(|i| i.dim()).collect();
        let mut out = ArrayD::<C64>::zeros(IxDyn(&dims));
        for (key, b) in &self.blocks {
            let offs: Vec<usize> =
                key.iter().zip(&self.indices).map(|(q, idx)| idx.offset(*q).unwrap()).collect();
            let mut dst = out.slice_each_axis_mut(|ax| {
                let i = ax.axis.index();
                Slice::from(offs[i]..offs[i] + b.shape()[i])
            });
            dst.assign(b);
        }
        out
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self, TensorError> {
        check_permutation(perm, self.rank())?;
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let indices = perm.iter().map(|&p| self.indices[p].clone()).collect();
        let blocks = self
            .blocks
            .iter()
            .map(|(k, b)| {
                let key: BlockKey = perm.iter().map(|&p| k[p]).collect();
                let data = b.view().permuted_axes(IxDyn(perm)).as_standard_layout().into_owned();
                (key, data)
            })
            .collect();
        Ok(Self { indices, blocks })
    }

    /// Complex conjugate with every leg reversed.
    pub fn conj(&self) -> Self {
        Self {
            indices: self.indices.iter().map(|i| i.dual()).collect(),
            blocks: self.blocks.iter().map(|(k, b)| (k.clone(), b.mapv(|z| z.conj()))).collect(),
        }
    }

    /// Reverses the direction of one leg, negating its charges.
    pub fn flip_leg(&self, axis: usize) -> Self {
        let mut indices = self.indices.clone();
        let old = &self.indices[axis];
        indices[axis] = GradedIndex::new(
            old.sectors().iter().map(|&(q, d)| (-q, d)),
            old.direction().flip(),
        )
        .expect("negation keeps sectors unique");
        let blocks = self
            .blocks
            .iter()
            .map(|(k, b)| {
                let mut k = k.clone();
                k[axis] = -k[axis];
                (k, b.clone())
            })
            .collect();
        Self { indices, blocks }
    }

    pub fn scale(&mut self, f: C64) {
        for b in self.blocks.values_mut() {
            b.mapv_inplace(|z| z * f);
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks.values().flat_map(|b| b.iter()).map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.values().all(|b| b.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    /// Multiplies every slice along `axis` by a per-sector weight vector.
    pub fn scale_axis(
        &mut self,
        axis: usize,
        weights: &BTreeMap<Charge, Vec<f64>>,
    ) -> Result<(), TensorError> {
        for (key, b) in self.blocks.iter_mut() {
            let q = key[axis];
            let w = weights.get(&q).ok_or(TensorError::MissingSector { axis, charge: q })?;
            if w.len() != b.shape()[axis] {
                return Err(TensorError::BlockShape {
                    expected: vec![b.shape()[axis]],
                    got: vec![w.len()],
                });
            }
            for (i, mut lane) in b.axis_iter_mut(Axis(axis)).enumerate() {
                let f = w[i];
                lane.mapv_inplace(|z| z * f);
            }
        }
        Ok(())
    }

    /// Applies a block-diagonal matrix to one leg: every slice along `axis`
    /// in sector `q` is replaced by `mats[q] · slice`. Sectors without a
    /// matrix are removed from the leg. Zero-row matrices are rejected.
    pub fn transform_axis(
        &self,
        axis: usize,
        mats: &BTreeMap<Charge, Mat<C64>>,
    ) -> Result<ChargeTensor, TensorError> {
        if axis >= self.rank() {
            return Err(TensorError::BadAxis(axis));
        }
        let old = &self.indices[axis];
        let mut sectors = Vec::new();
        for &(q, d) in old.sectors() {
            if let Some(m) = mats.get(&q) {
                if m.ncols() != d {
                    return Err(TensorError::BlockShape { expected: vec![d], got: vec![m.ncols()] });
                }
                if m.nrows() == 0 {
                    return Err(TensorError::EmptySector(q));
                }
                sectors.push((q, m.nrows()));
            }
        }
        let mut indices = self.indices.clone();
        indices[axis] = GradedIndex::new(sectors, old.direction())?;
        let mut out = ChargeTensor::zeros(indices);
        let rank = self.rank();
        let mut to_front: Vec<usize> = vec![axis];
        to_front.extend((0..rank).filter(|&a| a != axis));
        let mut back = vec![0; rank];
        for (i, &a) in to_front.iter().enumerate() {
            back[a] = i;
        }
        for (key, b) in &self.blocks {
            let Some(m) = mats.get(&key[axis]) else { continue };
            let moved = b.view().permuted_axes(IxDyn(&to_front)).as_standard_layout().into_owned();
            let mut shape = moved.shape().to_vec();
            let d = shape[0];
            let rest: usize = shape[1..].iter().product();
            let src = MatRef::from_row_major_slice(moved.as_slice().expect("standard"), d, rest);
            let mut dst = Mat::<C64>::zeros(m.nrows(), rest);
            gemm_acc(&mut dst, m.as_ref(), src);
            shape[0] = m.nrows();
            let data = ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
                let r = ix[0];
                let mut c = 0;
                for (k, &dim) in shape.iter().enumerate().skip(1) {
                    c = c * dim + ix[k];
                }
                dst[(r, c)]
            });
            let data = data.permuted_axes(IxDyn(&back)).as_standard_layout().into_owned();
            out.blocks.insert(key.clone(), data);
        }
        Ok(out)
    }

    /// Drops blocks whose entries are all exactly zero.
    pub fn prune(&mut self) {
        self.blocks.retain(|_, b| b.iter().any(|z| z.re != 0.0 || z.im != 0.0));
    }

    /// Elementwise sum of two tensors on identical legs.
    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        if self.indices != other.indices {
            return Err(TensorError::IndexMismatch("add: legs differ".into()));
        }
        let mut out = self.clone();
        for (k, b) in &other.blocks {
            match out.blocks.get_mut(k) {
                Some(x) => *x += b,
                None => {
                    out.blocks.insert(k.clone(), b.clone());
                }
            }
        }
        Ok(out)
    }
}

fn check_permutation(perm: &[usize], rank: usize) -> Result<(), TensorError> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(TensorError::RankMismatch { expected: rank, got: perm.len() });
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(TensorError::BadAxis(p));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Standard-layout block viewed as a `rows × cols` matrix.
fn block_matrix(b: &ArrayD<C64>, split: usize) -> MatRef<'_, C64> {
    let rows: usize = b.shape()[..split].iter().product();
    let cols: usize = b.shape()[split..].iter().product();
    MatRef::from_row_major_slice(b.as_slice().expect("standard layout"), rows, cols)
}

/// Contracts `a` and `b` over the leg pairs `(axis_of_a, axis_of_b)`.
///
/// Free legs of `a` come first in the result, followed by the free legs of
/// `b`, each in their original order.
pub fn contract(
    a: &ChargeTensor,
    b: &ChargeTensor,
    pairs: &[(usize, usize)],
) -> Result<ChargeTensor, TensorError> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(i, j) in pairs {
        if i >= a.rank() || used_a[i] {
            return Err(TensorError::BadAxis(i));
        }
        if j >= b.rank() || used_b[j] {
            return Err(TensorError::BadAxis(j));
        }
        used_a[i] = true;
        used_b[j] = true;
        if !a.index(i).pairs_with(b.index(j)) {
            return Err(TensorError::IndexMismatch(format!(
                "leg {i} of lhs cannot pair with leg {j} of rhs"
            )));
        }
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&j| !used_b[j]).collect();
    let ca: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let cb: Vec<usize> = pairs.iter().map(|p| p.1).collect();

    let perm_a: Vec<usize> = free_a.iter().chain(&ca).copied().collect();
    let perm_b: Vec<usize> = cb.iter().chain(&free_b).copied().collect();
    let ap = a.permute(&perm_a)?;
    let bp = b.permute(&perm_b)?;
    let nfa = free_a.len();
    let nc = pairs.len();

    let mut out_indices: Vec<GradedIndex> = free_a.iter().map(|&i| a.index(i).clone()).collect();
    out_indices.extend(free_b.iter().map(|&j| b.index(j).clone()));

    let mut b_by_contracted: HashMap<&[Charge], Vec<(&[Charge], &ArrayD<C64>)>> = HashMap::new();
    for (k, blk) in bp.blocks() {
        b_by_contracted.entry(&k[..nc]).or_default().push((&k[nc..], blk));
    }

    let mut acc: BTreeMap<BlockKey, Mat<C64>> = BTreeMap::new();
    let mut out_shapes: BTreeMap<BlockKey, Vec<usize>> = BTreeMap::new();
    for (ka, blk_a) in ap.blocks() {
        let Some(partners) = b_by_contracted.get(&ka[nfa..]) else { continue };
        let ma = block_matrix(blk_a, nfa);
        for (kb_free, blk_b) in partners {
            let mb = block_matrix(blk_b, nc);
            let mut key: BlockKey = ka[..nfa].to_vec();
            key.extend_from_slice(kb_free);
            let dst = acc.entry(key.clone()).or_insert_with(|| Mat::zeros(ma.nrows(), mb.ncols()));
            gemm_acc(dst, ma, mb);
            out_shapes.entry(key).or_insert_with(|| {
                let mut s = blk_a.shape()[..nfa].to_vec();
                s.extend_from_slice(&blk_b.shape()[nc..]);
                s
            });
        }
    }

    let mut out = ChargeTensor::zeros(out_indices);
    for (key, m) in acc {
        let shape = &out_shapes[&key];
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        let arr = ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches");
        out.blocks.insert(key, arr);
    }
    Ok(out)
}

/// Placement of one group of sub-sectors inside a fused sector.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedPiece {
    pub sub_key: BlockKey,
    pub offset: usize,
    pub dims: Vec<usize>,
}

/// Everything needed to undo [`fuse`].
#[derive(Clone, Debug, PartialEq)]
pub struct FusionRecord {
    /// Permutation applied before fusing (new axis `i` is old axis `perm[i]`).
    pub perm: Vec<usize>,
    /// Position of the fused leg in the fused tensor.
    pub position: usize,
    /// The legs that were fused, in fused order.
    pub group: Vec<GradedIndex>,
    pub layout: BTreeMap<Charge, Vec<FusedPiece>>,
}

impl FusionRecord {
    /// For each dense position of the fused leg, the row-major position of
    /// the same element in a plain reshape of the grouped legs.
    pub fn dense_order(&self) -> Vec<usize> {
        let dims: Vec<usize> = self.group.iter().map(|i| i.dim()).collect();
        let mut order = Vec::new();
        for pieces in self.layout.values() {
            for piece in pieces {
                let starts: Vec<usize> = piece
                    .sub_key
                    .iter()
                    .zip(&self.group)
                    .map(|(q, idx)| idx.offset(*q).unwrap())
                    .collect();
                let n: usize = piece.dims.iter().product();
                for flat in 0..n {
                    let mut rem = flat;
                    let mut local = vec![0; piece.dims.len()];
                    for ax in (0..piece.dims.len()).rev() {
                        local[ax] = rem % piece.dims[ax];
                        rem /= piece.dims[ax];
                    }
                    let mut pos = 0;
                    for ax in 0..dims.len() {
                        pos = pos * dims[ax] + starts[ax] + local[ax];
                    }
                    order.push(pos);
                }
            }
        }
        order
    }
}

/// Fuses the legs in `group` into a single leg.
///
/// The fused leg takes the direction of `group[0]` and sits where the
/// smallest grouped axis would land once the grouped legs are removed.
pub fn fuse(t: &ChargeTensor, group: &[usize]) -> Result<(ChargeTensor, FusionRecord), TensorError> {
    if group.is_empty() {
        return Err(TensorError::EmptyGroup);
    }
    let mut in_group = vec![false; t.rank()];
    for &g in group {
        if g >= t.rank() || in_group[g] {
            return Err(TensorError::BadAxis(g));
        }
        in_group[g] = true;
    }
    let rest: Vec<usize> = (0..t.rank()).filter(|&i| !in_group[i]).collect();
    let first = *group.iter().min().unwrap();
    let position = rest.iter().filter(|&&i| i < first).count();
    let mut perm: Vec<usize> = rest[..position].to_vec();
    perm.extend_from_slice(group);
    perm.extend_from_slice(&rest[position..]);
    let tp = t.permute(&perm)?;

    let group_idx: Vec<GradedIndex> = group.iter().map(|&g| t.index(g).clone()).collect();
    let fdir = group_idx[0].direction();
    let mut layout: BTreeMap<Charge, Vec<FusedPiece>> = BTreeMap::new();
    let mut degeneracy: BTreeMap<Charge, usize> = BTreeMap::new();
    let mut sub = Vec::new();
    fn rec(
        group: &[GradedIndex],
        sub: &mut BlockKey,
        fdir: Direction,
        layout: &mut BTreeMap<Charge, Vec<FusedPiece>>,
        degeneracy: &mut BTreeMap<Charge, usize>,
    ) {
        let d = sub.len();
        if d == group.len() {
            let net = sub
                .iter()
                .zip(group)
                .fold(Charge::ZERO, |acc, (q, i)| acc + q.scaled(i.direction().sign()));
            let fq = net.scaled(fdir.sign());
            let dims: Vec<usize> =
                sub.iter().zip(group).map(|(q, i)| i.degeneracy(*q).unwrap()).collect();
            let size: usize = dims.iter().product();
            let deg = degeneracy.entry(fq).or_insert(0);
            layout.entry(fq).or_default().push(FusedPiece { sub_key: sub.clone(), offset: *deg, dims });
            *deg += size;
            return;
        }
        for &(q, _) in group[d].sectors() {
            sub.push(q);
            rec(group, sub, fdir, layout, degeneracy);
            sub.pop();
        }
    }
    rec(&group_idx, &mut sub, fdir, &mut layout, &mut degeneracy);

    let fused_index = GradedIndex::new(degeneracy.iter().map(|(&q, &d)| (q, d)), fdir)?;
    let mut indices: Vec<GradedIndex> = tp.indices()[..position].to_vec();
    indices.push(fused_index);
    indices.extend_from_slice(&tp.indices()[position + group.len()..]);

    // sub_key -> (fused charge, offset)
    let mut lookup: HashMap<&[Charge], (Charge, usize)> = HashMap::new();
    for (q, pieces) in &layout {
        for p in pieces {
            lookup.insert(&p.sub_key, (*q, p.offset));
        }
    }

    let g = group.len();
    let mut out = ChargeTensor::zeros(indices);
    for (key, b) in tp.blocks() {
        let sub_key = &key[position..position + g];
        let (fq, off) = lookup[sub_key];
        let mut fkey: BlockKey = key[..position].to_vec();
        fkey.push(fq);
        fkey.extend_from_slice(&key[position + g..]);
        let shape = b.shape();
        let mut flat_shape: Vec<usize> = shape[..position].to_vec();
        let piece: usize = shape[position..position + g].iter().product();
        flat_shape.push(piece);
        flat_shape.extend_from_slice(&shape[position + g..]);
        let flat = b.view().into_shape_with_order(IxDyn(&flat_shape)).expect("contiguous block");
        let entry = out.blocks.entry(fkey).or_insert_with(|| {
            let mut full = flat_shape.clone();
            full[position] = degeneracy[&fq];
            ArrayD::zeros(IxDyn(&full))
        });
        entry.slice_axis_mut(Axis(position), Slice::from(off..off + piece)).assign(&flat);
    }
    let record = FusionRecord { perm, position, group: group_idx, layout };
    Ok((out, record))
}

/// Inverse of [`fuse`]. Sub-blocks that are identically zero are dropped.
pub fn unfuse(t: &ChargeTensor, rec: &FusionRecord) -> Result<ChargeTensor, TensorError> {
    let p = rec.position;
    if p >= t.rank() {
        return Err(TensorError::BadAxis(p));
    }
    let mut indices: Vec<GradedIndex> = t.indices()[..p].to_vec();
    indices.extend(rec.group.iter().cloned());
    indices.extend_from_slice(&t.indices()[p + 1..]);
    let mut permuted = ChargeTensor::zeros(indices);
    for (key, b) in t.blocks() {
        let Some(pieces) = rec.layout.get(&key[p]) else {
            return Err(TensorError::MissingSector { axis: p, charge: key[p] });
        };
        for piece in pieces {
            let n: usize = piece.dims.iter().product();
            let slab = b.slice_axis(Axis(p), Slice::from(piece.offset..piece.offset + n));
            if slab.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                continue;
            }
            let mut shape: Vec<usize> = b.shape()[..p].to_vec();
            shape.extend_from_slice(&piece.dims);
            shape.extend_from_slice(&b.shape()[p + 1..]);
            let data = slab.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&shape)).expect("size");
            let mut k: BlockKey = key[..p].to_vec();
            k.extend_from_slice(&piece.sub_key);
            k.extend_from_slice(&key[p + 1..]);
            permuted.insert_block(k, data)?;
        }
    }
    let mut inverse = vec![0; rec.perm.len()];
    for (new, &old) in rec.perm.iter().enumerate() {
        inverse[old] = new;
    }
    permuted.permute(&inverse)
}
