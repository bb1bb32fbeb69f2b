use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadowrank::assignment::{hungarian_assign, sorted_identity_assign};
use shadowrank::pipeline::{evaluate, offline_train, Strategy, TrainConfig};
use shadowrank::synth::{synth_generate, SynthConfig};
use shadowrank::{DiscountVector, Execution, Matrix};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn population() -> Vec<shadowrank::RankingInstance> {
    let cfg = SynthConfig {
        n_users: 300,
        ..SynthConfig::default()
    };
    synth_generate(&cfg).unwrap().instances().unwrap()
}

fn train(c: &mut Criterion) {
    let pop = population();
    let mut group = c.benchmark_group("offline_train");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = TrainConfig {
            exec,
            ..TrainConfig::default()
        };
        group.bench_function(name, |b| b.iter(|| offline_train(black_box(&pop), &cfg).unwrap()));
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let pop = population();
    let artifact = offline_train(&pop[..200], &TrainConfig::default()).unwrap();
    let test = &pop[200..];
    let mut group = c.benchmark_group("evaluate_knn");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| evaluate(&artifact, black_box(test), &[Strategy::Knn], 1, exec).unwrap())
        });
    }
    group.finish();
}

fn assignment(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("assignment");
    for (m1, m2) in [(200, 20), (1000, 50), (1000, 200)] {
        let s: Vec<f64> = (0..m1).map(|_| rng.random_range(1.0..5.0)).collect();
        let gamma = DiscountVector::dcg(m2).unwrap();
        let dense = Matrix::from_fn(m1, m2, |i, j| s[i] * gamma.values()[j]);
        let id = format!("{m1}x{m2}");
        group.bench_with_input(BenchmarkId::new("sort", &id), &s, |b, s| {
            b.iter(|| sorted_identity_assign(black_box(s), &gamma).unwrap())
        });
        group.sample_size(10);
        group.bench_with_input(BenchmarkId::new("hungarian", &id), &dense, |b, w| {
            b.iter(|| hungarian_assign(black_box(w)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, train, evaluation, assignment);
criterion_main!(benches);
