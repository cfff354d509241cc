//! Parallel against single-threaded execution of the two hot paths: scenario
//! estimation and grid value iteration.
//!
//! `cargo bench` compares a one-thread pool with the default pool. Build with
//! `--no-default-features` to measure the sequential fallback instead; both
//! variants then run the same code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use simspec::dynamics::QuadrotorVertical;
use simspec::metrics::{MetricKind, NormConfig};
use simspec::par;
use simspec::presets::{KernelSetup, Preset};
use simspec::reach::GridSpec;
use simspec::scenario::{estimate, ScenarioConfig};

fn pools() -> [(&'static str, Option<usize>); 2] {
    [("one_thread", Some(1)), ("default_pool", None)]
}

fn scenario(c: &mut Criterion) {
    let preset = Preset::running_example().unwrap();
    let mut g = c.benchmark_group("estimate_running_example");
    g.sample_size(10);
    for metric in [MetricKind::Ssm, MetricKind::Spec] {
        let cfg = ScenarioConfig::new(metric, 1);
        for (label, threads) in pools() {
            g.bench_with_input(BenchmarkId::new(label, metric.as_str()), &cfg, |b, cfg| {
                b.iter(|| par::with_threads(threads, || estimate(cfg, &preset.problem(metric)).unwrap().d_hat))
            });
        }
    }
    g.finish();
}

fn kernel(c: &mut Criterion) {
    let setup = KernelSetup {
        grid: GridSpec::new([0.0, -4.0], [3.0, 4.0], [101, 101]).unwrap(),
        ..KernelSetup::quadrotor()
    };
    let model = QuadrotorVertical::new(12.0);
    let norm = NormConfig {
        coords: Some(vec![0]),
        ..NormConfig::default()
    };
    let mut g = c.benchmark_group("quadrotor_kernel_101");
    g.sample_size(10);
    for (label, threads) in pools() {
        g.bench_function(label, |b| {
            b.iter(|| par::with_threads(threads, || setup.compute(&model, 0.0, &norm).unwrap().inside_nodes()))
        });
    }
    g.finish();
}

criterion_group!(benches, scenario, kernel);
criterion_main!(benches);
