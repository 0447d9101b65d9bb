use std::collections::BTreeMap;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};

use super::state::{split_theta, UnitCellMPDO};
use super::StateError;
use crate::symtensor::flip::parity_svd;
use crate::symtensor::{contract, Charge, ChargeTensor, LegFlip, Parity, SchmidtValues, TensorError};
use crate::C64;

/// Block-diagonal matrix on a bond, one block per charge sector.
pub type BondMatrix = BTreeMap<Charge, Mat<C64>>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointParams {
    pub tol: f64,
    pub max_iter: usize,
    /// Eigenvalues of a fixed point below `floor · max` are raised to it
    /// before inversion.
    pub floor: f64,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 10_000, floor: 1e-14 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CanonicalReport {
    /// Dominant eigenvalue of the cell transfer map before rescaling.
    pub eta: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trunc_weight: f64,
}

const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// `(left charge, right charge, matrix)` for every physical component of a
/// three-leg tensor.
type SiteMats = Vec<(Charge, Charge, Mat<C64>)>;

fn site_mats(g: &ChargeTensor) -> SiteMats {
    let mut out = Vec::new();
    for (key, b) in g.blocks() {
        let (dl, ds, dr) = (b.shape()[0], b.shape()[1], b.shape()[2]);
        let data = b.as_slice().expect("standard layout");
        for p in 0..ds {
            let m = Mat::from_fn(dl, dr, |i, j| data[(i * ds + p) * dr + j]);
            out.push((key[0], key[2], m));
        }
    }
    out
}

fn scaled(g: &ChargeTensor, axis: usize, l: &SchmidtValues) -> Result<ChargeTensor, TensorError> {
    let mut g = g.clone();
    g.scale_axis(axis, &l.map(|x| x))?;
    Ok(g)
}

/// `Y = Σ A X A†`, mapping right-bond matrices to left-bond matrices.
fn push_right(mats: &SiteMats, x: &BondMatrix) -> BondMatrix {
    let mut y = BondMatrix::new();
    for (ql, qr, a) in mats {
        let Some(xb) = x.get(qr) else { continue };
        let tmp = a * xb;
        let dst = y.entry(*ql).or_insert_with(|| Mat::zeros(a.nrows(), a.nrows()));
        matmul(dst.as_mut(), Accum::Add, tmp.as_ref(), a.adjoint(), ONE, Par::Seq);
    }
    y
}

/// `Y = Σ A† X A`, mapping left-bond matrices to right-bond matrices.
fn push_left(mats: &SiteMats, x: &BondMatrix) -> BondMatrix {
    let mut y = BondMatrix::new();
    for (ql, qr, a) in mats {
        let Some(xb) = x.get(ql) else { continue };
        let tmp = a.adjoint() * xb;
        let dst = y.entry(*qr).or_insert_with(|| Mat::zeros(a.ncols(), a.ncols()));
        matmul(dst.as_mut(), Accum::Add, tmp.as_ref(), a.as_ref(), ONE, Par::Seq);
    }
    y
}

fn identity_on(l: &SchmidtValues) -> BondMatrix {
    l.sectors().iter().map(|(q, v)| (*q, Mat::identity(v.len(), v.len()))).collect()
}

fn frob(x: &BondMatrix) -> f64 {
    x.values().map(|m| m.norm_l2().powi(2)).sum::<f64>().sqrt()
}

fn trace(x: &BondMatrix) -> C64 {
    x.values().map(|m| (0..m.nrows()).map(|i| m[(i, i)]).sum::<C64>()).sum()
}

fn distance(a: &BondMatrix, b: &BondMatrix) -> f64 {
    let mut d = 0.0;
    for (q, m) in a {
        match b.get(q) {
            Some(n) => d += (m - n).norm_l2().powi(2),
            None => d += m.norm_l2().powi(2),
        }
    }
    for (q, n) in b {
        if !a.contains_key(q) {
            d += n.norm_l2().powi(2);
        }
    }
    d.sqrt()
}

/// Power iteration for the dominant fixed point of a completely positive map.
fn dominant(
    map: impl Fn(&BondMatrix) -> BondMatrix,
    seed: BondMatrix,
    params: &FixedPointParams,
) -> (BondMatrix, f64, usize, bool) {
    let mut x = seed;
    let n = frob(&x);
    for m in x.values_mut() {
        *m = &*m * faer::Scale(C64::new(1.0 / n, 0.0));
    }
    let mut eta = 0.0;
    for it in 1..=params.max_iter {
        let mut y = map(&x);
        eta = (trace(&y) / trace(&x)).re;
        let n = frob(&y);
        if !(n.is_finite() && n > 0.0) {
            return (x, f64::NAN, it, false);
        }
        for m in y.values_mut() {
            *m = &*m * faer::Scale(C64::new(1.0 / n, 0.0));
        }
        let d = distance(&x, &y);
        x = y;
        if d < params.tol {
            return (x, eta, it, true);
        }
    }
    (x, eta, params.max_iter, false)
}

/// Eigendecomposition of a Hermitian block. With `parity`, the block is
/// decomposed inside each flip-parity subspace and the parity of every
/// eigenvector is returned.
fn hermitian_eigen(h: &Mat<C64>, parity: Option<&[Parity]>) -> Result<(Mat<C64>, Vec<f64>, Vec<Parity>), StateError> {
    let fail = |_| StateError::BlowUp("fixed point");
    let Some(parity) = parity else {
        let e = h.self_adjoint_eigen(Side::Lower).map_err(fail)?;
        let d = (0..h.nrows()).map(|i| e.S()[i].re).collect();
        return Ok((e.U().to_owned(), d, Vec::new()));
    };
    let n = h.nrows();
    let mut w = Mat::<C64>::zeros(n, n);
    let mut d = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for p in [1, -1] {
        let idx: Vec<usize> = (0..n).filter(|&i| parity[i] == p).collect();
        if idx.is_empty() {
            continue;
        }
        let sub = Mat::from_fn(idx.len(), idx.len(), |i, j| h[(idx[i], idx[j])]);
        let e = sub.self_adjoint_eigen(Side::Lower).map_err(fail)?;
        for j in 0..idx.len() {
            let col = d.len();
            for (i, &r) in idx.iter().enumerate() {
                w[(r, col)] = e.U()[(i, j)];
            }
            d.push(e.S()[j].re);
            labels.push(p);
        }
    }
    Ok((w, d, labels))
}

/// Hermitian square-root factor `W·√D` of each block and its inverse, with
/// eigenvalues floored relative to the largest one on the bond. The third
/// output holds the parities of the zero-sector factor columns.
fn sqrt_factor(
    v: &BondMatrix,
    floor: f64,
    parity: Option<&[Parity]>,
) -> Result<(BondMatrix, BondMatrix, Vec<Parity>), StateError> {
    let mut eig = BTreeMap::new();
    let mut top: f64 = 0.0;
    let mut zero_parity = Vec::new();
    for (q, m) in v {
        let h = Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
        let par = parity.filter(|_| *q == Charge::ZERO);
        let (w, d, labels) = hermitian_eigen(&h, par)?;
        if par.is_some() {
            zero_parity = labels;
        }
        top = top.max(d.iter().copied().fold(0.0, f64::max));
        eig.insert(*q, (w, d));
    }
    if !(top.is_finite() && top > 0.0) {
        return Err(StateError::BlowUp("fixed point"));
    }
    let mut fac = BondMatrix::new();
    let mut inv = BondMatrix::new();
    for (q, (w, d)) in eig {
        let s: Vec<f64> = d.iter().map(|&x| x.max(floor * top).sqrt()).collect();
        fac.insert(q, Mat::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] * s[j]));
        inv.insert(q, Mat::from_fn(w.ncols(), w.nrows(), |i, j| w[(j, i)].conj() / s[i]));
    }
    Ok((fac, inv, zero_parity))
}

/// Projects a bond matrix onto the flip-invariant subspace: partner
/// sectors are averaged and the zero sector loses its parity-mixing part.
fn symmetrize(x: &mut BondMatrix, parity: &[Parity]) {
    let keys: Vec<Charge> = x.keys().copied().collect();
    for q in keys {
        if q == Charge::ZERO {
            let m = x.get_mut(&q).expect("key");
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if parity[i] != parity[j] {
                        m[(i, j)] = C64::new(0.0, 0.0);
                    }
                }
            }
        } else if -q < q {
            if let Some(partner) = x.get(&-q) {
                let avg = (&x[&q] + partner) * faer::Scale(C64::new(0.5, 0.0));
                x.insert(-q, avg.clone());
                x.insert(q, avg);
            }
        }
    }
}

fn transpose(m: MatRef<'_, C64>) -> Mat<C64> {
    m.transpose().to_owned()
}

/// Restores the Vidal canonical form after non-unitary gates.
///
/// The cell `C = Γ₀λ₀Γ₁` with bond `λ₁` is brought to canonical form through
/// the dominant fixed points of its transfer maps, then split back into
/// `Γ₀ λ₀ Γ₁`. The state is rescaled so that both maps have unit dominant
/// eigenvalue; the removed factor is accumulated in `log_norm`.
pub fn canonicalize(
    state: &mut UnitCellMPDO,
    params: &FixedPointParams,
) -> Result<CanonicalReport, StateError> {
    let [g0, g1] = &state.gammas;
    let [l0, l1] = &state.lambdas;
    let right0 = site_mats(&scaled(g0, 2, l0)?);
    let right1 = site_mats(&scaled(g1, 2, l1)?);
    let left0 = site_mats(&scaled(g0, 0, l1)?);
    let left1 = site_mats(&scaled(g1, 0, l0)?);

    let (vr, eta_r, it_r, ok_r) =
        dominant(|x| push_right(&right0, &push_right(&right1, x)), identity_on(l1), params);
    let (vl, _eta_l, it_l, ok_l) =
        dominant(|x| push_left(&left1, &push_left(&left0, x)), identity_on(l1), params);
    if !(ok_r && ok_l) {
        log::warn!("transfer-map power iteration stopped before tolerance (eta = {eta_r})");
    }
    if !(eta_r.is_finite() && eta_r > 0.0) {
        return Err(StateError::BlowUp("canonicalization"));
    }

    let (mut vr, mut vl) = (vr, vl);
    for (q, v) in l1.sectors() {
        vr.entry(*q).or_insert_with(|| Mat::zeros(v.len(), v.len()));
        vl.entry(*q).or_insert_with(|| Mat::zeros(v.len(), v.len()));
    }
    let par1: Option<Vec<Parity>> = state.flip.as_ref().map(|f| f.parity[1].clone());
    if let Some(p) = &par1 {
        symmetrize(&mut vr, p);
        symmetrize(&mut vl, p);
    }
    let (x, x_inv, x_par) = sqrt_factor(&vr, params.floor, par1.as_deref())?;
    let (yh, yh_inv, y_par) = sqrt_factor(&vl, params.floor, par1.as_deref())?;
    // vl = Y†Y with Y = (W√D)†.
    let mut left_gauge = BondMatrix::new();
    let mut right_gauge = BondMatrix::new();
    let mut new_l1 = BTreeMap::new();
    let mut new_par1 = Vec::new();
    let fail = || StateError::BlowUp("canonicalization");
    for (q, lam) in l1.sectors() {
        let (Some(xq), Some(yq)) = (x.get(q), yh.get(q)) else {
            return Err(fail());
        };
        let lx = Mat::from_fn(lam.len(), lam.len(), |i, j| xq[(i, j)] * lam[i]);
        let ylx = yq.adjoint() * lx;
        let (u, s, v) = if par1.is_some() && *q == Charge::ZERO {
            let labels = |p: &[Parity]| p.iter().enumerate().map(|(i, &x)| (i, f64::from(x))).collect::<Vec<_>>();
            let ps = parity_svd(&ylx, &labels(&y_par), &labels(&x_par)).map_err(|_| fail())?;
            new_par1 = ps.parity;
            (ps.u, ps.s, ps.v)
        } else {
            let svd = ylx.thin_svd().map_err(|_| fail())?;
            let s: Vec<f64> = (0..lam.len()).map(|i| svd.S()[i].re).collect();
            (svd.U().to_owned(), s, svd.V().to_owned())
        };
        // C' = V† X⁻¹ · C · Y⁻¹ U, with Y⁻¹ = (yh_inv)†.
        left_gauge.insert(*q, v.adjoint() * &x_inv[q]);
        let y_inv = yh_inv[q].adjoint().to_owned();
        right_gauge.insert(*q, transpose((y_inv * u).as_ref()));
        new_l1.insert(*q, s);
    }
    let mut lam = SchmidtValues::new(new_l1)?;
    let lam_norm = lam.normalize();

    let cell = contract(&scaled(g0, 2, l0)?, g1, &[(2, 0)])?;
    let cell = cell.transform_axis(0, &left_gauge)?.transform_axis(3, &right_gauge)?;
    let mut theta = cell;
    theta.scale(C64::new(lam_norm / eta_r.sqrt(), 0.0));
    theta.scale_axis(0, &lam.map(|x| x))?;
    theta.scale_axis(3, &lam.map(|x| x))?;
    if !theta.is_finite() {
        return Err(StateError::BlowUp("canonicalization"));
    }

    // Drop bond-1 values that are numerically zero before inverting them.
    let keep = lam.sorted_entries();
    let total: f64 = keep.iter().map(|e| e.1 * e.1).sum();
    let cut = state.truncation.eps_trunc * total;
    let mut kept: BTreeMap<Charge, Vec<f64>> = BTreeMap::new();
    let mut kept_par1 = Vec::new();
    let mut dropped = 0.0;
    for (q, v) in lam.sectors() {
        for (i, &x) in v.iter().enumerate() {
            if x * x >= cut && x > 0.0 {
                kept.entry(*q).or_default().push(x);
                if *q == Charge::ZERO && par1.is_some() {
                    kept_par1.push(new_par1[i]);
                }
            } else {
                dropped += x * x;
            }
        }
    }
    let mut trunc = 0.0;
    if dropped > 0.0 {
        let proj: BondMatrix = kept
            .iter()
            .map(|(q, v)| {
                let unit = |i: usize, j: usize| if i == j { ONE } else { C64::new(0.0, 0.0) };
                (*q, Mat::from_fn(v.len(), lam.sectors()[q].len(), unit))
            })
            .collect();
        theta = theta.transform_axis(0, &proj)?.transform_axis(3, &proj)?;
        lam = SchmidtValues::new(kept)?;
        let n = lam.normalize();
        theta.scale(C64::new(1.0 / (n * n), 0.0));
        state.meta.log_norm -= n.ln();
        trunc += dropped / total;
    }

    let flips = match &par1 {
        Some(_) => {
            let outer = LegFlip::bond(&lam, &kept_par1)?;
            let phys = state.grading.physical_flip();
            Some([outer.clone(), phys.clone(), phys, outer])
        }
        None => None,
    };
    let split = split_theta(&theta, &state.truncation, flips.as_ref()).map_err(|e| match e {
        TensorError::AllTruncated | TensorError::NonFinite | TensorError::SvdFailed => {
            StateError::BlowUp("canonicalization")
        }
        other => StateError::Tensor(other),
    })?;
    let inv = lam.map(|x| 1.0 / x);
    let mut new_g0 = split.u;
    new_g0.scale_axis(0, &inv)?;
    let mut new_g1 = split.v;
    new_g1.scale_axis(2, &inv)?;
    trunc += split.trunc_weight;

    if let Some(f) = state.flip.as_mut() {
        f.parity = [split.parity, kept_par1];
    }
    state.gammas = [new_g0, new_g1];
    state.lambdas = [split.s, lam];
    state.meta.log_norm -= 0.5 * eta_r.ln() + split.norm.ln();
    state.meta.trunc_weight += trunc;
    state.meta.split_groups += split.split_groups as u64;
    Ok(CanonicalReport { eta: eta_r, iterations: it_r.max(it_l), converged: ok_r && ok_l, trunc_weight: trunc })
}

fn max_dev_from_identity(m: &BondMatrix, l: &SchmidtValues) -> f64 {
    let mut worst: f64 = 0.0;
    for (q, v) in l.sectors() {
        let n = v.len();
        match m.get(q) {
            Some(b) => {
                for i in 0..n {
                    for j in 0..n {
                        let target = if i == j { 1.0 } else { 0.0 };
                        worst = worst.max((b[(i, j)] - target).norm());
                    }
                }
            }
            None => worst = worst.max(1.0),
        }
    }
    worst
}

/// Worst deviation from identity of the four site-level isometry conditions.
pub fn isometry_residual(state: &UnitCellMPDO) -> Result<f64, StateError> {
    let [g0, g1] = &state.gammas;
    let [l0, l1] = &state.lambdas;
    let r0 = push_right(&site_mats(&scaled(g0, 2, l0)?), &identity_on(l0));
    let r1 = push_right(&site_mats(&scaled(g1, 2, l1)?), &identity_on(l1));
    let q0 = push_left(&site_mats(&scaled(g0, 0, l1)?), &identity_on(l1));
    let q1 = push_left(&site_mats(&scaled(g1, 0, l0)?), &identity_on(l0));
    Ok(max_dev_from_identity(&r0, l1)
        .max(max_dev_from_identity(&r1, l0))
        .max(max_dev_from_identity(&q0, l0))
        .max(max_dev_from_identity(&q1, l1)))
}

type BondVector = BTreeMap<Charge, Vec<C64>>;

/// Identity-covector contraction of one site: `u[ql] = Σ_s w_s Γ_s λ v[qr]`.
fn trace_push(g: &ChargeTensor, lam: &SchmidtValues, v: &BondVector, state: &UnitCellMPDO) -> BondVector {
    let w = std::f64::consts::FRAC_1_SQRT_2;
    let slots = [state.grading.slot(0), state.grading.slot(3)];
    let mut out = BondVector::new();
    for (key, b) in g.blocks() {
        let Some(vr) = v.get(&key[2]) else { continue };
        let lr = lam.get(key[2]).expect("bond sector");
        let (dl, ds, dr) = (b.shape()[0], b.shape()[1], b.shape()[2]);
        let data = b.as_slice().expect("standard layout");
        for &(qs, pos) in &slots {
            if key[1] != qs {
                continue;
            }
            let dst = out.entry(key[0]).or_insert_with(|| vec![C64::new(0.0, 0.0); dl]);
            for i in 0..dl {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..dr {
                    acc += data[(i * ds + pos) * dr + j] * lr[j] * vr[j];
                }
                dst[i] += acc * w;
            }
        }
    }
    out
}

/// Physical trace per unit cell: dominant eigenvalue of the identity-overlap
/// transfer matrix, with the accumulated normalization undone.
pub fn trace_per_cell(state: &UnitCellMPDO) -> Result<f64, StateError> {
    let [g0, g1] = &state.gammas;
    let [l0, l1] = &state.lambdas;
    let mut v: BondVector =
        l1.sectors().iter().map(|(q, x)| (*q, x.iter().map(|&y| C64::new(y, 0.0)).collect())).collect();
    let norm = |v: &BondVector| v.values().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut eig = 0.0;
    for _ in 0..10_000 {
        let u = trace_push(g0, l0, &trace_push(g1, l1, &v, state), state);
        let vv: f64 = v.values().flatten().map(|z| z.norm_sqr()).sum();
        let overlap: C64 = v
            .iter()
            .flat_map(|(q, x)| {
                let y = u.get(q);
                x.iter().enumerate().map(move |(i, a)| a.conj() * y.map_or(C64::new(0.0, 0.0), |y| y[i]))
            })
            .sum();
        let next = overlap.re / vv;
        let n = norm(&u);
        if !(n.is_finite()) {
            return Err(StateError::BlowUp("trace diagnostic"));
        }
        if n == 0.0 {
            return Ok(0.0);
        }
        let converged = (next - eig).abs() <= 1e-14 * next.abs();
        eig = next;
        v = u.into_iter().map(|(q, x)| (q, x.into_iter().map(|z| z / n).collect())).collect();
        if converged {
            break;
        }
    }
    Ok(eig * (-state.meta.log_norm).exp())
}
