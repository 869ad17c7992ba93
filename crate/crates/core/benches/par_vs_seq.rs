//! Sequential against rayon execution for the three hot paths. Both modes
//! produce identical results; only wall time differs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedsamp::exec::ExecMode;
use fedsamp::harness::{ExperimentConfig, Instance};
use fedsamp::runtime::run_training;
use fedsamp::sampler_opt::{optimize, OptInstance};
use fedsamp::types::{SamplingDistribution, TrainingConfig};
use fedsamp::wireless::monte_carlo_round_time;

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn instance() -> Instance {
    let cfg = ExperimentConfig {
        data_seed: Some(1),
        ..ExperimentConfig::default()
    };
    Instance::build(&cfg, 0, ExecMode::Parallel).expect("default config builds")
}

fn bench_optimizer(c: &mut Criterion) {
    let inst = instance();
    let opt = OptInstance::from_fleet(&inst.fleet, &inst.fleet.g_bounds(), 5.0);
    let mut group = c.benchmark_group("optimize_n100");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| optimize(black_box(&opt), m).unwrap())
        });
    }
    group.finish();
}

fn bench_monte_carlo(c: &mut Criterion) {
    let inst = instance();
    let q = SamplingDistribution::uniform(inst.fleet.n());
    let mut group = c.benchmark_group("monte_carlo_1e5");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| monte_carlo_round_time(&q, &inst.time_model, 100_000, 7, m))
        });
    }
    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let inst = instance();
    let q = SamplingDistribution::uniform(inst.fleet.n());
    let tcfg = TrainingConfig {
        max_rounds: 10,
        ..TrainingConfig::default()
    };
    let mut group = c.benchmark_group("train_10_rounds");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| run_training(&inst.inputs(), &q, &tcfg, m).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_optimizer, bench_monte_carlo, bench_training);
criterion_main!(benches);
