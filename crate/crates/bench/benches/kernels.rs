use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use obliq_core::control::{mpc_step, solve_dare, MpcSpec, Reference, DARE_MAX_ITER, DARE_TOL};
use obliq_core::dynamics::{generate_dataset, GenConfig};
use obliq_core::numerics::{pinv, Activation, Mlp};
use obliq_core::training::{loss_j_oblique, LossWeights};
use obliq_core::{DynSystem, FeatureMap, InputSchedule, Matrix, TestFunctionSet, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn duffing_gen(n_traj: usize) -> GenConfig {
    GenConfig {
        n_traj,
        traj_len: 50,
        init_box: vec![[-3.0, 3.0]; 2],
        schedule: InputSchedule::default(),
        dt: 0.05,
        h: 0.01,
        seed: 0,
    }
}

fn bench_pinv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random(&mut rng, 15, 15);
    c.bench_function("pinv_15x15", |b| b.iter(|| pinv(black_box(&m), 1e-12).unwrap()));
}

fn bench_loss(c: &mut Criterion) {
    let data = generate_dataset(&DynSystem::Duffing, &duffing_gen(20)).unwrap();
    let s = data.samples(None);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = FeatureMap::mlp(Mlp::new(&[2, 10, 2], Activation::Swish, &mut rng).unwrap());
    let tests = TestFunctionSet::tied_copy(&g, Mlp::new(&[3, 10, 5], Activation::Swish, &mut rng).unwrap(), 1).unwrap();
    let w = LossWeights { lambda1: 1.0, lambda2: 1.0, lambda_reg: 1e-8 };
    c.bench_function("loss_j_oblique_grad_980", |b| b.iter(|| loss_j_oblique(&g, &tests, black_box(&s), &w).unwrap()));
}

fn bench_dare(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, 9, 9) * 0.3;
    let bm = random(&mut rng, 9, 1);
    let q = Matrix::identity(9, 9);
    let r = Matrix::identity(1, 1);
    c.bench_function("dare_9", |b| b.iter(|| solve_dare(&a, &bm, &q, &r, DARE_TOL, DARE_MAX_ITER).unwrap()));
}

fn bench_mpc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&mut rng, 4, 4) * 0.4;
    let bm = random(&mut rng, 4, 1);
    let spec = MpcSpec {
        horizon: 20,
        tracked: 0,
        tracking_weight: 1.0,
        rate_weight: 1.0,
        input_weight: 0.0,
        reference: Reference::Constant { value: 1.0 },
        input_box: None,
    };
    let xi = Vector::zeros(4);
    let u = Vector::zeros(1);
    c.bench_function("mpc_step_n20", |b| b.iter(|| mpc_step(&spec, &a, &bm, black_box(&xi), &u, 0).unwrap()));
    let boxed = MpcSpec { input_box: Some([-0.2, 0.2]), ..spec };
    c.bench_function("mpc_step_n20_boxed", |b| b.iter(|| mpc_step(&boxed, &a, &bm, black_box(&xi), &u, 0).unwrap()));
}

fn bench_dataset(c: &mut Criterion) {
    let cfg = duffing_gen(60);
    c.bench_function("generate_duffing_60x50", |b| {
        b.iter_batched(|| cfg.clone(), |cfg| generate_dataset(&DynSystem::Duffing, &cfg).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, bench_pinv, bench_loss, bench_dare, bench_mpc, bench_dataset);
criterion_main!(benches);
