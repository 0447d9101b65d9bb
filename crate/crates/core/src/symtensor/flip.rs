//! The global spin flip `s ↦ 3 − s` acting on graded legs.
//!
//! The flip sends charge `q` to `−q`. On a leg it is a signed permutation
//! from sector `q` onto sector `−q`; composing it with itself gives the
//! identity. A tensor is flip-covariant when `t[F k] · Π signs = t[k]` for
//! every multi-index `k`.

use std::collections::BTreeMap;

use faer::Mat;

use super::charge::{Charge, GradedIndex};
use super::svd::SchmidtValues;
use super::tensor::ChargeTensor;
use super::TensorError;
use crate::C64;

/// Flip eigenvalue of one bond state in the zero-charge sector.
pub type Parity = i8;

#[derive(Clone, Debug, PartialEq)]
pub struct LegFlip {
    images: BTreeMap<Charge, Vec<(usize, f64)>>,
}

impl LegFlip {
    /// Checks that the images form a signed involution between each sector
    /// and its negative.
    pub fn new(images: BTreeMap<Charge, Vec<(usize, f64)>>) -> Result<Self, TensorError> {
        for (q, img) in &images {
            let back = images
                .get(&-*q)
                .ok_or_else(|| TensorError::FlipMismatch(format!("sector {q} has no partner")))?;
            if back.len() != img.len() {
                return Err(TensorError::FlipMismatch(format!("sectors {q} and {} differ in size", -*q)));
            }
            for (i, &(j, sign)) in img.iter().enumerate() {
                let ok = sign.abs() == 1.0 && back.get(j).is_some_and(|&(k, s2)| k == i && s2 == sign);
                if !ok {
                    return Err(TensorError::FlipMismatch(format!("sector {q} index {i} is not an involution")));
                }
            }
        }
        Ok(Self { images })
    }

    /// Bond flip in a flip-covariant gauge: index `i` of `q` maps to index
    /// `i` of `−q`, with `parity` supplying the signs on the zero sector.
    pub fn bond(spectrum: &SchmidtValues, parity: &[Parity]) -> Result<Self, TensorError> {
        let mut images = BTreeMap::new();
        for (q, v) in spectrum.sectors() {
            let img: Vec<(usize, f64)> = if *q == Charge::ZERO {
                if parity.len() != v.len() {
                    return Err(TensorError::FlipMismatch(format!(
                        "{} parities for a zero sector of size {}",
                        parity.len(),
                        v.len()
                    )));
                }
                parity.iter().enumerate().map(|(i, &p)| (i, f64::from(p))).collect()
            } else {
                (0..v.len()).map(|i| (i, 1.0)).collect()
            };
            images.insert(*q, img);
        }
        Self::new(images)
    }

    pub fn image(&self, q: Charge, i: usize) -> (usize, f64) {
        self.images[&q][i]
    }

    pub fn fits(&self, leg: &GradedIndex) -> bool {
        leg.num_sectors() == self.images.len()
            && leg.sectors().iter().all(|&(q, d)| self.images.get(&q).is_some_and(|v| v.len() == d))
    }
}

/// Sign and flat image of a row-major multi-index over legs with `keys`.
pub(crate) fn flat_image(keys: &[Charge], dims: &[usize], flat: usize, flips: &[&LegFlip]) -> (usize, f64) {
    let mut rem = flat;
    let mut digits = vec![0usize; dims.len()];
    for a in (0..dims.len()).rev() {
        digits[a] = rem % dims[a];
        rem /= dims[a];
    }
    let mut out = 0usize;
    let mut sign = 1.0;
    for a in 0..dims.len() {
        let (j, s) = flips[a].image(keys[a], digits[a]);
        out = out * dims[a] + j;
        sign *= s;
    }
    (out, sign)
}

/// The flipped tensor `(F t)[k] = sign · t[F k]`.
pub fn flip_tensor(t: &ChargeTensor, flips: &[LegFlip]) -> Result<ChargeTensor, TensorError> {
    check_legs(t, flips)?;
    let refs: Vec<&LegFlip> = flips.iter().collect();
    let mut out = ChargeTensor::zeros(t.indices().to_vec());
    for (key, b) in t.blocks() {
        let image_key: Vec<Charge> = key.iter().map(|q| -*q).collect();
        let data = b.as_slice().expect("standard layout");
        let mut flipped = vec![C64::new(0.0, 0.0); data.len()];
        for (flat, z) in data.iter().enumerate() {
            let (j, sign) = flat_image(key, b.shape(), flat, &refs);
            flipped[j] = z * sign;
        }
        let shape: Vec<usize> = image_key
            .iter()
            .zip(t.indices())
            .map(|(q, leg)| leg.degeneracy(*q).expect("flip maps onto existing sectors"))
            .collect();
        out.insert_block(image_key, ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&shape), flipped).expect("shape"))?;
    }
    Ok(out)
}

pub(crate) fn check_legs(t: &ChargeTensor, flips: &[LegFlip]) -> Result<(), TensorError> {
    if flips.len() != t.rank() {
        return Err(TensorError::RankMismatch { expected: t.rank(), got: flips.len() });
    }
    for (a, (f, leg)) in flips.iter().zip(t.indices()).enumerate() {
        if !f.fits(leg) {
            return Err(TensorError::FlipMismatch(format!("leg {a} does not match its flip")));
        }
    }
    Ok(())
}

/// Largest `|t[k] − sign · t[F k]|` over all stored entries; a missing
/// partner block counts as zero.
pub fn flip_residual(t: &ChargeTensor, flips: &[LegFlip]) -> Result<f64, TensorError> {
    check_legs(t, flips)?;
    let refs: Vec<&LegFlip> = flips.iter().collect();
    let mut worst: f64 = 0.0;
    for (key, b) in t.blocks() {
        let image_key: Vec<Charge> = key.iter().map(|q| -*q).collect();
        let partner = t.block(&image_key);
        let data = b.as_slice().expect("standard layout");
        for (flat, z) in data.iter().enumerate() {
            let (j, sign) = flat_image(key, b.shape(), flat, &refs);
            let w = partner.map_or(C64::new(0.0, 0.0), |p| p.as_slice().expect("standard layout")[j]);
            worst = worst.max((z - w * sign).norm());
        }
    }
    Ok(worst)
}

/// Sparse orthonormal basis of the `±1` eigenspaces of a signed involution
/// given by `image`, as lists of `(index, coefficient)`.
pub(crate) fn parity_basis(image: &[(usize, f64)]) -> [Vec<Vec<(usize, f64)>>; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut even = Vec::new();
    let mut odd = Vec::new();
    for (i, &(j, sign)) in image.iter().enumerate() {
        if j == i {
            if sign > 0.0 {
                even.push(vec![(i, 1.0)]);
            } else {
                odd.push(vec![(i, 1.0)]);
            }
        } else if j > i {
            even.push(vec![(i, h), (j, sign * h)]);
            odd.push(vec![(i, h), (j, -sign * h)]);
        }
    }
    [even, odd]
}

/// SVD of a matrix that commutes with a signed involution on each side,
/// resolved by flip parity. Columns of `u` and `v` are sorted by
/// descending singular value; equal values keep even before odd.
pub(crate) struct ParitySvd {
    pub u: Mat<C64>,
    pub s: Vec<f64>,
    pub v: Mat<C64>,
    pub parity: Vec<Parity>,
}

pub(crate) fn parity_svd(
    m: &Mat<C64>,
    row_image: &[(usize, f64)],
    col_image: &[(usize, f64)],
) -> Result<ParitySvd, TensorError> {
    let rows = parity_basis(row_image);
    let cols = parity_basis(col_image);
    let mut parts = Vec::new();
    for (p, (rb, cb)) in [(1i8, (&rows[0], &cols[0])), (-1i8, (&rows[1], &cols[1]))] {
        if rb.is_empty() || cb.is_empty() {
            continue;
        }
        // Bᵀ M C with B, C the sparse real bases.
        let left = Mat::from_fn(rb.len(), m.ncols(), |a, c| rb[a].iter().map(|&(r, w)| m[(r, c)] * w).sum::<C64>());
        let small = Mat::from_fn(rb.len(), cb.len(), |a, b| {
            cb[b].iter().map(|&(c, w)| left[(a, c)] * w).sum::<C64>()
        });
        let svd = small.thin_svd().map_err(|_| TensorError::SvdFailed)?;
        let k = svd.S().dim();
        let mut u = Mat::<C64>::zeros(m.nrows(), k);
        let mut v = Mat::<C64>::zeros(m.ncols(), k);
        for (a, basis) in rb.iter().enumerate() {
            for &(r, w) in basis {
                for j in 0..k {
                    u[(r, j)] += svd.U()[(a, j)] * w;
                }
            }
        }
        for (b, basis) in cb.iter().enumerate() {
            for &(c, w) in basis {
                for j in 0..k {
                    v[(c, j)] += svd.V()[(b, j)] * w;
                }
            }
        }
        let s: Vec<f64> = (0..k).map(|i| svd.S()[i].re).collect();
        parts.push((p, u, s, v));
    }
    let mut order: Vec<(f64, usize, usize)> = parts
        .iter()
        .enumerate()
        .flat_map(|(pi, part)| part.2.iter().enumerate().map(move |(j, &x)| (x, pi, j)))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut u = Mat::<C64>::zeros(m.nrows(), order.len());
    let mut v = Mat::<C64>::zeros(m.ncols(), order.len());
    for (col, &(_, pi, j)) in order.iter().enumerate() {
        u.col_mut(col).copy_from(parts[pi].1.col(j));
        v.col_mut(col).copy_from(parts[pi].3.col(j));
    }
    Ok(ParitySvd {
        u,
        s: order.iter().map(|e| e.0).collect(),
        v,
        parity: order.iter().map(|e| parts[e.1].0).collect(),
    })
}
