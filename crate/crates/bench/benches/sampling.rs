use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rbm_gradlab::rng::stream_from_seed;
use rbm_gradlab::variance::{profile_cd, ProtocolConfig};
use rbm_gradlab::{
    cd_k_estimate, exact_log_partition, gibbs_step, init_params, BinaryState, Checkpoint, Dataset,
};

fn half_on(n: usize) -> BinaryState {
    BinaryState::new((0..n).map(|i| (i % 2) as u8).collect()).unwrap()
}

fn gibbs(c: &mut Criterion) {
    let mut group = c.benchmark_group("gibbs_step");
    for n in [16, 196, 256] {
        let p = init_params(n, n, 1).unwrap();
        let x = half_on(n);
        let mut rng = stream_from_seed(2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| gibbs_step(black_box(&x), &p, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn estimates(c: &mut Criterion) {
    let p = init_params(196, 196, 1).unwrap();
    let x = half_on(196);
    let mut rng = stream_from_seed(3);
    let mut group = c.benchmark_group("cd_k_estimate_196");
    for k in [1, 10] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| cd_k_estimate(black_box(&x), k, &p, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn enumeration(c: &mut Criterion) {
    let p = init_params(12, 16, 4).unwrap();
    c.bench_function("exact_log_partition_12x16", |b| {
        b.iter(|| exact_log_partition(black_box(&p)).unwrap())
    });
}

fn protocol(c: &mut Criterion) {
    let n = 64;
    let mut rng = stream_from_seed(5);
    let rows: Vec<BinaryState> = (0..50)
        .map(|_| rbm_gradlab::binarize(&vec![0.3; n], &mut rng).unwrap())
        .collect();
    let data = Dataset::from_binary_rows("bench", &rows).unwrap();
    let ckpt = Checkpoint {
        params: init_params(n, n, 6).unwrap(),
        epoch: 0,
        train_seed: 6,
    };
    let cfg = ProtocolConfig {
        n_inits: 1,
        k_values: vec![1, 5],
        k_baseline: 50,
        example_subset_size: Some(20),
        ..ProtocolConfig::default()
    };
    let mut group = c.benchmark_group("protocol");
    group.sample_size(10);
    group.bench_function("profile_cd_64", |b| {
        b.iter(|| profile_cd(&ckpt, &data, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, gibbs, estimates, enumeration, protocol);
criterion_main!(benches);
