use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use fone_bench::{cluster, perturbed_truth, problem};
use fone_core::distributed::aggregate_subgradient;
use fone_core::fone::default_batch_size;
use fone_core::{
    run_dcsgd, run_distributed_fone, run_fone, run_minibatch_sgd, DistributedFoneConfig,
    FoneConfig, LossModel, ModelFamily, SgdConfig, SgdSchedule,
};

const N: usize = 20_000;
const P: usize = 50;
const MACHINES: usize = 10;

fn bench_sgd(c: &mut Criterion) {
    let prob = problem(ModelFamily::Logistic, N, P, 1);
    let theta0 = perturbed_truth(&prob);
    let config = SgdConfig {
        m: default_batch_size(P, N),
        schedule: SgdSchedule::new(10.0, 1.0).unwrap(),
    };
    c.bench_function("sgd/logistic one pass", |b| {
        b.iter(|| {
            run_minibatch_sgd(
                &LossModel::Logistic,
                black_box(&prob.dataset),
                &theta0,
                &config,
                3,
            )
            .unwrap()
        })
    });
}

fn bench_fone(c: &mut Criterion) {
    let mut group = c.benchmark_group("fone");
    for family in [ModelFamily::Logistic, ModelFamily::Quantile] {
        let prob = problem(family, N, P, 2);
        let theta0 = perturbed_truth(&prob);
        let a = prob.model.mean_subgradient(&theta0, &prob.dataset).unwrap();
        let config = FoneConfig {
            eta: 0.05,
            m: default_batch_size(P, N),
            iterations: 20,
            seed: 4,
        };
        group.bench_function(format!("{family:?} T=20"), |b| {
            b.iter(|| {
                run_fone(&prob.model, black_box(&prob.dataset), &theta0, &a, &config).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_distributed(c: &mut Criterion) {
    let prob = problem(ModelFamily::Logistic, N, P, 5);
    let theta0 = perturbed_truth(&prob);
    let base = cluster(&prob, MACHINES);
    let n = N / MACHINES;
    let mut group = c.benchmark_group("distributed");
    group.bench_function("aggregate subgradient", |b| {
        b.iter_batched_ref(
            || base.clone(),
            |cl| aggregate_subgradient(cl, &LossModel::Logistic, black_box(&theta0)).unwrap(),
            BatchSize::LargeInput,
        )
    });
    let sgd = SgdConfig {
        m: default_batch_size(P, n),
        schedule: SgdSchedule::new(10.0, 1.0).unwrap(),
    };
    group.bench_function("dcsgd", |b| {
        b.iter_batched_ref(
            || base.clone(),
            |cl| run_dcsgd(cl, &LossModel::Logistic, &theta0, &sgd, 6).unwrap(),
            BatchSize::LargeInput,
        )
    });
    let fone = DistributedFoneConfig {
        fone: FoneConfig {
            eta: 10.0 * default_batch_size(P, n) as f64 / n as f64,
            m: default_batch_size(P, n),
            iterations: 20,
            seed: 7,
        },
        rounds: 5,
    };
    group.sample_size(10);
    group.bench_function("distributed fone K=5", |b| {
        b.iter_batched_ref(
            || base.clone(),
            |cl| run_distributed_fone(cl, &LossModel::Logistic, &theta0, &fone).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_sgd, bench_fone, bench_distributed);
criterion_main!(benches);
