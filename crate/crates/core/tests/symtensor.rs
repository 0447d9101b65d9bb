use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD, IxDyn};
use opent_core::symtensor::{
    contract, flip_residual, flip_tensor, fuse, svd_truncate, svd_truncate_flip, unfuse, Charge,
    ChargeTensor, Direction, GradedIndex, LegFlip, TensorError, TruncationParams,
};
use opent_core::C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_index(rng: &mut ChaCha8Rng, dir: Direction) -> GradedIndex {
    let mut sectors = BTreeMap::new();
    let n = rng.gen_range(1..=3);
    while sectors.len() < n {
        let q = Charge::new(rng.gen_range(-2..=2), rng.gen_range(-1..=1));
        sectors.insert(q, rng.gen_range(1..=2));
    }
    GradedIndex::new(sectors, dir).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, indices: Vec<GradedIndex>) -> ChargeTensor {
    let mut t = ChargeTensor::zeros(indices.clone());
    for key in ChargeTensor::allowed_keys(&indices) {
        let shape: Vec<usize> =
            key.iter().zip(&indices).map(|(q, i)| i.degeneracy(*q).unwrap()).collect();
        let n: usize = shape.iter().product();
        let data: Vec<C64> =
            (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        t.insert_block(key, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap()).unwrap();
    }
    t
}

/// Plain dense tensordot: free legs of `a`, then free legs of `b`.
fn dense_tensordot(a: &ArrayD<C64>, b: &ArrayD<C64>, pairs: &[(usize, usize)]) -> ArrayD<C64> {
    let ca: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let cb: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let fa: Vec<usize> = (0..a.ndim()).filter(|i| !ca.contains(i)).collect();
    let fb: Vec<usize> = (0..b.ndim()).filter(|i| !cb.contains(i)).collect();
    let pa: Vec<usize> = fa.iter().chain(&ca).copied().collect();
    let pb: Vec<usize> = cb.iter().chain(&fb).copied().collect();
    let ap = a.view().permuted_axes(IxDyn(&pa)).as_standard_layout().into_owned();
    let bp = b.view().permuted_axes(IxDyn(&pb)).as_standard_layout().into_owned();
    let m: usize = fa.iter().map(|&i| a.shape()[i]).product();
    let k: usize = ca.iter().map(|&i| a.shape()[i]).product();
    let n: usize = fb.iter().map(|&i| b.shape()[i]).product();
    let am = ap.into_shape_with_order((m, k)).unwrap();
    let bm = bp.into_shape_with_order((k, n)).unwrap();
    let mut out = Array2::<C64>::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for l in 0..k {
                acc += am[[i, l]] * bm[[l, j]];
            }
            out[[i, j]] = acc;
        }
    }
    let shape: Vec<usize> =
        fa.iter().map(|&i| a.shape()[i]).chain(fb.iter().map(|&i| b.shape()[i])).collect();
    out.into_shape_with_order(IxDyn(&shape)).unwrap()
}

fn max_diff(a: &ArrayD<C64>, b: &ArrayD<C64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn dense_singular_values(m: &Array2<C64>) -> Vec<f64> {
    let fm = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]]);
    let s = fm.singular_values().unwrap();
    let mut s: Vec<f64> = s.into_iter().filter(|x| *x > 1e-13).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[test]
fn contract_with_identity_returns_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let legs = vec![
        random_index(&mut rng, Direction::In),
        random_index(&mut rng, Direction::In),
        random_index(&mut rng, Direction::Out),
    ];
    let t = random_tensor(&mut rng, legs.clone());
    let last = legs[2].clone();
    let mut id = ChargeTensor::zeros(vec![last.dual(), last.clone()]);
    for &(q, d) in last.sectors() {
        let eye = Array2::<C64>::eye(d).into_dyn();
        id.insert_block(vec![q, q], eye).unwrap();
    }
    let out = contract(&t, &id, &[(2, 0)]).unwrap();
    assert_eq!(out.indices(), t.indices());
    assert!(max_diff(&out.to_dense(), &t.to_dense()) < 1e-15);
}

#[test]
fn single_block_contraction_is_matrix_product() {
    let q = Charge::ZERO;
    let a_leg = GradedIndex::new([(q, 3)], Direction::In).unwrap();
    let b_leg = GradedIndex::new([(q, 4)], Direction::Out).unwrap();
    let k_out = GradedIndex::new([(q, 2)], Direction::Out).unwrap();
    let am = Array2::from_shape_fn((3, 2), |(i, j)| C64::new(i as f64 + 1.0, j as f64));
    let bm = Array2::from_shape_fn((2, 4), |(i, j)| C64::new(j as f64 - i as f64, 0.5));
    let a = ChargeTensor::from_blocks(vec![a_leg, k_out.clone()], [(vec![q, q], am.clone().into_dyn())])
        .unwrap();
    let b = ChargeTensor::from_blocks(vec![k_out.dual(), b_leg], [(vec![q, q], bm.clone().into_dyn())])
        .unwrap();
    let c = contract(&a, &b, &[(1, 0)]).unwrap();
    let expect = dense_tensordot(&am.into_dyn(), &bm.into_dyn(), &[(1, 0)]);
    assert!(max_diff(&c.to_dense(), &expect) < 1e-14);
}

#[test]
fn contract_rejects_mismatched_legs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a_leg = random_index(&mut rng, Direction::In);
    let a = random_tensor(&mut rng, vec![a_leg.clone(), a_leg.dual()]);
    let b = random_tensor(&mut rng, vec![a_leg.clone(), a_leg.dual()]);
    assert!(matches!(contract(&a, &b, &[(1, 1)]), Err(TensorError::IndexMismatch(_))));
    assert!(matches!(contract(&a, &b, &[(5, 0)]), Err(TensorError::BadAxis(5))));
}

#[test]
fn random_three_leg_contraction_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let l0 = random_index(&mut rng, Direction::In);
        let l1 = random_index(&mut rng, Direction::In);
        let l2 = random_index(&mut rng, Direction::Out);
        let l3 = random_index(&mut rng, Direction::Out);
        let a = random_tensor(&mut rng, vec![l0, l1.clone(), l2.clone()]);
        let b = random_tensor(&mut rng, vec![l2.dual(), l3, l1.dual()]);
        let c = contract(&a, &b, &[(2, 0), (1, 2)]).unwrap();
        c.check().unwrap();
        let expect = dense_tensordot(&a.to_dense(), &b.to_dense(), &[(2, 0), (1, 2)]);
        assert!(max_diff(&c.to_dense(), &expect) < 1e-12);
    }
}

#[test]
fn fusing_two_spin_half_legs() {
    let half = GradedIndex::new([(Charge::new(-1, 0), 1), (Charge::new(1, 0), 1)], Direction::In)
        .unwrap();
    let out_leg = GradedIndex::new(
        [(Charge::new(-2, 0), 1), (Charge::new(0, 0), 2), (Charge::new(2, 0), 1)],
        Direction::Out,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = random_tensor(&mut rng, vec![half.clone(), half.clone(), out_leg]);
    let (f, rec) = fuse(&t, &[0, 1]).unwrap();
    let fused = f.index(0);
    assert_eq!(
        fused.sectors(),
        &[(Charge::new(-2, 0), 1), (Charge::new(0, 0), 2), (Charge::new(2, 0), 1)]
    );
    assert_eq!(unfuse(&f, &rec).unwrap(), t);
}

#[test]
fn fuse_matches_dense_reshape() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let legs = vec![
            random_index(&mut rng, Direction::In),
            random_index(&mut rng, Direction::Out),
            random_index(&mut rng, Direction::In),
            random_index(&mut rng, Direction::Out),
        ];
        let t = random_tensor(&mut rng, legs);
        let (f, rec) = fuse(&t, &[1, 2]).unwrap();
        let dense = t.to_dense();
        let perm = rec.perm.clone();
        let p = dense.view().permuted_axes(IxDyn(&perm)).as_standard_layout().into_owned();
        let d0 = p.shape()[0];
        let d3 = p.shape()[3];
        let dg = p.shape()[1] * p.shape()[2];
        let reshaped = p.into_shape_with_order((d0, dg, d3)).unwrap();
        let order = rec.dense_order();
        let fd = f.to_dense();
        for i in 0..d0 {
            for (j, &src) in order.iter().enumerate() {
                for k in 0..d3 {
                    assert_eq!(fd[[i, j, k]], reshaped[[i, src, k]]);
                }
            }
        }
    }
}

#[test]
fn fuse_rejects_empty_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let l = random_index(&mut rng, Direction::In);
    let t = random_tensor(&mut rng, vec![l.clone(), l.dual()]);
    assert!(matches!(fuse(&t, &[]), Err(TensorError::EmptyGroup)));
}

fn diag34() -> ChargeTensor {
    let leg = GradedIndex::new([(Charge::ZERO, 2)], Direction::In).unwrap();
    let m = ndarray::array![[C64::new(3.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(4.0, 0.0)]];
    ChargeTensor::from_blocks(vec![leg.clone(), leg.dual()], [(vec![Charge::ZERO; 2], m.into_dyn())])
        .unwrap()
}

#[test]
fn svd_of_diag_3_4_normalizes() {
    let out = svd_truncate(&diag34(), &[0], &TruncationParams::default()).unwrap();
    let s = out.s.get(Charge::ZERO).unwrap();
    assert!((s[0] - 0.8).abs() < 1e-15 && (s[1] - 0.6).abs() < 1e-15);
    assert_eq!(out.trunc_weight, 0.0);
    assert!((out.norm - 5.0).abs() < 1e-14);
}

#[test]
fn svd_forced_truncation() {
    let out = svd_truncate(&diag34(), &[0], &TruncationParams::with_chi(1)).unwrap();
    assert_eq!(out.s.get(Charge::ZERO).unwrap(), &[1.0]);
    assert!((out.trunc_weight - 0.36).abs() < 1e-15);
}

#[test]
fn svd_drops_degenerate_group_that_does_not_fit() {
    let leg = GradedIndex::new([(Charge::ZERO, 3)], Direction::In).unwrap();
    let m = Array2::from_diag(&ndarray::arr1(&[
        C64::new(2.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(1.0, 0.0),
    ]));
    let t = ChargeTensor::from_blocks(vec![leg.clone(), leg.dual()], [(vec![Charge::ZERO; 2], m.into_dyn())])
        .unwrap();
    let out = svd_truncate(&t, &[0], &TruncationParams::with_chi(2)).unwrap();
    assert_eq!(out.s.dim(), 1);
    assert_eq!(out.split_groups, 1);
    assert!((out.trunc_weight - 2.0 / 6.0).abs() < 1e-14);
}

#[test]
fn svd_errors() {
    let leg = GradedIndex::new([(Charge::ZERO, 1)], Direction::In).unwrap();
    let z = ChargeTensor::zeros(vec![leg.clone(), leg.dual()]);
    assert!(matches!(
        svd_truncate(&z, &[0], &TruncationParams::default()),
        Err(TensorError::AllTruncated)
    ));
    let bad = ChargeTensor::from_blocks(
        vec![leg.clone(), leg.dual()],
        [(vec![Charge::ZERO; 2], ArrayD::from_elem(IxDyn(&[1, 1]), C64::new(f64::NAN, 0.0)))],
    )
    .unwrap();
    assert!(matches!(
        svd_truncate(&bad, &[0], &TruncationParams::default()),
        Err(TensorError::NonFinite)
    ));
}

#[test]
fn two_sector_svd_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows = GradedIndex::new([(Charge::new(-1, 1), 3), (Charge::new(1, -1), 4)], Direction::In)
        .unwrap();
    let cols = GradedIndex::new([(Charge::new(-1, 1), 5), (Charge::new(1, -1), 2)], Direction::Out)
        .unwrap();
    let t = random_tensor(&mut rng, vec![rows, cols]);
    let params = TruncationParams { normalize: false, ..TruncationParams::default() };
    let out = svd_truncate(&t, &[0], &params).unwrap();
    let mut got: Vec<f64> = out.s.sorted_entries().into_iter().map(|e| e.1).collect();
    got.sort_by(|a, b| b.total_cmp(a));
    let dense = t.to_dense().into_dimensionality::<ndarray::Ix2>().unwrap();
    let expect = dense_singular_values(&dense);
    assert_eq!(got.len(), expect.len());
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn reconstruct(out: &opent_core::symtensor::SvdOutput) -> ChargeTensor {
    let mut us = out.u.clone();
    let ax = us.rank() - 1;
    us.scale_axis(ax, &out.s.map(|x| x)).unwrap();
    contract(&us, &out.v, &[(ax, 0)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_reconstructs_input(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let legs = vec![
            random_index(&mut rng, Direction::In),
            random_index(&mut rng, Direction::In),
            random_index(&mut rng, Direction::Out),
        ];
        let t = random_tensor(&mut rng, legs);
        prop_assume!(t.num_blocks() > 0);
        let params = TruncationParams { normalize: false, eps_trunc: 0.0, ..TruncationParams::default() };
        let out = svd_truncate(&t, &[0, 2], &params).unwrap();
        out.u.check().unwrap();
        out.v.check().unwrap();
        let back = reconstruct(&out).permute(&[0, 2, 1]).unwrap();
        let err = max_diff(&back.to_dense(), &t.to_dense());
        prop_assert!(err <= 1e-10 * t.norm(), "err {}", err);
    }

    #[test]
    fn fuse_unfuse_round_trip(seed in any::<u64>(), first in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let legs = vec![
            random_index(&mut rng, Direction::In),
            random_index(&mut rng, Direction::Out),
            random_index(&mut rng, Direction::In),
            random_index(&mut rng, Direction::Out),
        ];
        let t = random_tensor(&mut rng, legs);
        let group = [first + 1, first];
        let (f, rec) = fuse(&t, &group).unwrap();
        f.check().unwrap();
        prop_assert_eq!(unfuse(&f, &rec).unwrap(), t);
    }

    #[test]
    fn contraction_is_deterministic_and_conserving(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l0 = random_index(&mut rng, Direction::In);
        let l1 = random_index(&mut rng, Direction::Out);
        let l2 = random_index(&mut rng, Direction::Out);
        let a = random_tensor(&mut rng, vec![l0, l1.clone()]);
        let b = random_tensor(&mut rng, vec![l1.dual(), l2]);
        let c1 = contract(&a, &b, &[(1, 0)]).unwrap();
        let c2 = contract(&a, &b, &[(1, 0)]).unwrap();
        c1.check().unwrap();
        prop_assert_eq!(&c1, &c2);
        let expect = dense_tensordot(&a.to_dense(), &b.to_dense(), &[(1, 0)]);
        prop_assert!(max_diff(&c1.to_dense(), &expect) < 1e-12);
    }
}

/// A leg closed under `q → −q` and a random signed involution on it.
fn random_flip_leg(rng: &mut ChaCha8Rng, dir: Direction) -> (GradedIndex, LegFlip) {
    let mut sectors = BTreeMap::new();
    let mut images: BTreeMap<Charge, Vec<(usize, f64)>> = BTreeMap::new();
    let zero = rng.gen_range(1..=3);
    sectors.insert(Charge::ZERO, zero);
    let mut img: Vec<(usize, f64)> = (0..zero).map(|i| (i, if rng.gen_bool(0.5) { 1.0 } else { -1.0 })).collect();
    if zero >= 2 {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        img[0] = (1, sign);
        img[1] = (0, sign);
    }
    images.insert(Charge::ZERO, img);
    for _ in 0..rng.gen_range(0..=2) {
        let q = Charge::new(rng.gen_range(1..=2), rng.gen_range(-1..=1));
        let d = rng.gen_range(1..=2);
        sectors.insert(q, d);
        sectors.insert(-q, d);
        let reversed = rng.gen_bool(0.5);
        let signs: Vec<f64> = (0..d).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let fwd: Vec<(usize, f64)> = (0..d).map(|i| (if reversed { d - 1 - i } else { i }, signs[i])).collect();
        let mut back = vec![(0, 1.0); d];
        for (i, &(j, s)) in fwd.iter().enumerate() {
            back[j] = (i, s);
        }
        images.insert(q, fwd);
        images.insert(-q, back);
    }
    (GradedIndex::new(sectors, dir).unwrap(), LegFlip::new(images).unwrap())
}

#[test]
fn leg_flip_rejects_non_involutions() {
    let bad = BTreeMap::from([(Charge::new(1, 1), vec![(0, 1.0)])]);
    assert!(matches!(LegFlip::new(bad), Err(TensorError::FlipMismatch(_))));
    let sign = BTreeMap::from([(Charge::new(1, 1), vec![(0, 1.0)]), (Charge::new(-1, -1), vec![(0, -1.0)])]);
    assert!(LegFlip::new(sign).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flip_resolved_svd_is_covariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l0, f0) = random_flip_leg(&mut rng, Direction::In);
        let (l1, f1) = random_flip_leg(&mut rng, Direction::In);
        let (l2, f2) = random_flip_leg(&mut rng, Direction::Out);
        let flips = [f0.clone(), f1.clone(), f2];
        let t = random_tensor(&mut rng, vec![l0, l1, l2]);
        prop_assume!(t.num_blocks() > 0);
        let mut sym = t.add(&flip_tensor(&t, &flips).unwrap()).unwrap();
        sym.scale(C64::new(0.5, 0.0));
        prop_assume!(sym.norm() > 1e-6);
        prop_assert!(flip_residual(&sym, &flips).unwrap() < 1e-15);
        prop_assert!(flip_residual(&flip_tensor(&sym, &flips).unwrap(), &flips).unwrap() < 1e-15);

        let params = TruncationParams { normalize: false, eps_trunc: 0.0, ..TruncationParams::default() };
        let out = svd_truncate_flip(&sym, &[0, 1], &params, &flips).unwrap();
        let plain = svd_truncate(&sym, &[0, 1], &params).unwrap();
        prop_assert!(out.s.max_abs_diff(&plain.s) < 1e-12 * sym.norm());
        let err = max_diff(&reconstruct(&out).to_dense(), &sym.to_dense());
        prop_assert!(err <= 1e-12 * sym.norm().max(1.0), "err {}", err);
        for (q, v) in out.s.sectors() {
            prop_assert_eq!(Some(v.as_slice()), out.s.get(-*q));
        }
        let bond = LegFlip::bond(&out.s, &out.parity).unwrap();
        prop_assert!(flip_residual(&out.u, &[f0, f1, bond.clone()]).unwrap() < 1e-12);
        prop_assert!(flip_residual(&out.v, &[bond, flips[2].clone()]).unwrap() < 1e-12);
    }
}
