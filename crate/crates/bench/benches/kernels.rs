use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use opent_bench::saturated_singlet;
use opent_core::edoracle::{DenseSuperket, Liouvillian};
use opent_core::impdo::{apply_gate, canonicalize, Evolver, FixedPointParams, StateKind};
use opent_core::lindblad::{BondParity, LiouvillianGate, ModelParams};
use opent_core::symtensor::{contract, svd_truncate};

const CHIS: [usize; 2] = [32, 64];

fn two_site(c: &mut Criterion) {
    let mut group = c.benchmark_group("two_site");
    for chi in CHIS {
        let state = saturated_singlet(chi);
        let [left, right] = &state.gammas;
        group.bench_with_input(BenchmarkId::new("contract", chi), &chi, |b, _| {
            b.iter(|| contract(left, right, &[(2, 0)]).unwrap())
        });
        let theta = contract(left, right, &[(2, 0)]).unwrap();
        group.bench_with_input(BenchmarkId::new("svd_truncate", chi), &chi, |b, _| {
            b.iter(|| svd_truncate(&theta, &[0, 1], &state.truncation).unwrap())
        });
        let gates = LiouvillianGate::new(state.params, state.grading).unwrap();
        let gate = gates.gate(state.params.dt / 2.0).unwrap();
        group.bench_with_input(BenchmarkId::new("apply_gate", chi), &chi, |b, _| {
            b.iter_batched(
                || state.clone(),
                |mut s| apply_gate(&mut s, &gate, BondParity::Odd).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn full_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("full_step");
    group.sample_size(10);
    for chi in CHIS {
        let state = saturated_singlet(chi);
        group.bench_with_input(BenchmarkId::new("canonicalize", chi), &chi, |b, _| {
            b.iter_batched(
                || state.clone(),
                |mut s| canonicalize(&mut s, &FixedPointParams::default()).unwrap(),
                BatchSize::LargeInput,
            )
        });
        group.bench_with_input(BenchmarkId::new("trotter_step", chi), &chi, |b, _| {
            b.iter_batched(
                || Evolver::new(state.clone()).unwrap(),
                |mut e| e.step().unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn liouvillian(c: &mut Criterion) {
    let mut group = c.benchmark_group("ed_liouvillian");
    for n_sites in [4, 6] {
        let liouv = Liouvillian::new(n_sites, ModelParams::new(1.0, 0.25, 0.5).unwrap()).unwrap();
        let rho = DenseSuperket::pair_product(StateKind::SingletPairs, n_sites).unwrap();
        let mut out = vec![Default::default(); rho.data().len()];
        group.bench_with_input(BenchmarkId::new("apply", n_sites), &n_sites, |b, _| {
            b.iter(|| liouv.apply(rho.data(), &mut out))
        });
    }
    group.finish();
}

criterion_group!(benches, two_site, full_step, liouvillian);
criterion_main!(benches);
