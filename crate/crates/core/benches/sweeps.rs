use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use syllogism_circuits::circuits::{mean_table, necessity_curve, CircuitSpec};
use syllogism_circuits::datasets::{corrupt_batch, generate_symbolic, Intervention, PromptPair, SyllogisticScheme};
use syllogism_circuits::interventions::{head_output_sweep, residual_sweep, SweepOptions};
use syllogism_circuits::model::{Direction, ModelBundle, ModelConfig, Tokenizer};
use syllogism_circuits::Exec;

fn setup(layers: usize, heads: usize, width: usize, n: usize) -> (ModelBundle, Vec<PromptPair>) {
    let tok = Arc::new(Tokenizer::gpt2());
    let mut cfg = ModelConfig::gpt2_like(layers, heads, width);
    cfg.max_positions = 32;
    let bundle = ModelBundle::random(cfg, tok.clone(), 1).unwrap();
    let scheme = SyllogisticScheme::lookup("AAA-1").unwrap();
    let clean = generate_symbolic(scheme, n, 2, &tok).unwrap();
    let pairs = corrupt_batch(&clean, Intervention::MiddleTerm, 3, &tok).unwrap();
    (bundle, pairs)
}

fn executors() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::with_workers(0))]
}

fn sweeps(c: &mut Criterion) {
    let (bundle, pairs) = setup(4, 4, 64, 8);
    let mut group = c.benchmark_group("head_output_sweep");
    group.sample_size(10);
    for (name, exec) in executors() {
        let opts = SweepOptions { exec, ..SweepOptions::new(Direction::Denoise) };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| head_output_sweep(&bundle, &pairs, opts).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("residual_sweep");
    group.sample_size(10);
    for (name, exec) in executors() {
        let opts = SweepOptions { exec, ..SweepOptions::new(Direction::Denoise) };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| residual_sweep(&bundle, &pairs, opts).unwrap())
        });
    }
    group.finish();
}

fn ablation(c: &mut Criterion) {
    let (bundle, pairs) = setup(4, 4, 64, 16);
    let clean: Vec<_> = pairs.into_iter().map(|p| p.clean).collect();
    let circuit = CircuitSpec::all_heads(&bundle.config);
    let mut group = c.benchmark_group("necessity_curve");
    group.sample_size(10);
    for (name, exec) in executors() {
        let table = mean_table(&bundle, &clean, &exec).unwrap();
        group.bench_function(name, |b| b.iter(|| necessity_curve(&bundle, &circuit, &clean, &table, &exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, sweeps, ablation);
criterion_main!(benches);
