use std::hint::black_box;

use adplace_bench::{synthetic_examples, synthetic_log, synthetic_sets};
use adplace_core::{
    post_process, softmax, train_parallel, FeaturizerConfig, FtrlModel, FtrlParams, PolicyConfig, SetReader,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const SETS: u64 = 2_000;

fn parse(c: &mut Criterion) {
    let text = synthetic_log(SETS, 1);
    let mut g = c.benchmark_group("parse");
    g.throughput(Throughput::Bytes(text.len() as u64));
    g.bench_function("sets", |b| {
        b.iter(|| SetReader::new(black_box(text.as_bytes())).map(Result::unwrap).count())
    });
    g.finish();
}

fn featurize(c: &mut Criterion) {
    let sets = synthetic_sets(SETS, 2);
    let candidates: Vec<_> = sets.iter().flat_map(|s| s.candidates()).collect();
    let mut g = c.benchmark_group("featurize");
    g.throughput(Throughput::Elements(candidates.len() as u64));
    for (name, cfg) in [
        ("binary", FeaturizerConfig::binary(1 << 16)),
        ("hashed", FeaturizerConfig::hashed(20)),
    ] {
        g.bench_function(name, |b| {
            b.iter(|| {
                for cand in &candidates {
                    black_box(cfg.featurize(cand).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn fit_one(c: &mut Criterion) {
    let features = FeaturizerConfig::hashed(20);
    let examples = synthetic_examples(SETS, 3, &features);
    let mut model = FtrlModel::new(FtrlParams::default(), features.dimension()).unwrap();
    let mut g = c.benchmark_group("ftrl");
    g.throughput(Throughput::Elements(examples.len() as u64));
    g.bench_function("fit_one", |b| {
        b.iter(|| {
            for ex in &examples {
                black_box(model.fit_one(&ex.x, ex.y).unwrap());
            }
        })
    });
    g.finish();
}

fn hogwild(c: &mut Criterion) {
    let features = FeaturizerConfig::hashed(20);
    let examples = synthetic_examples(20_000, 4, &features);
    let mut g = c.benchmark_group("train_parallel");
    g.throughput(Throughput::Elements(examples.len() as u64));
    g.sample_size(10);
    for workers in [1, 2, 4] {
        g.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| {
                let mut model = FtrlModel::new(FtrlParams::default(), features.dimension()).unwrap();
                train_parallel(&mut model, examples.iter().cloned(), w).unwrap()
            })
        });
    }
    g.finish();
}

fn policy(c: &mut Criterion) {
    let cfg = PolicyConfig::default();
    let scores: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
    let mut g = c.benchmark_group("policy");
    g.bench_function("post_process+softmax", |b| {
        b.iter(|| softmax(&post_process(black_box(&scores), &cfg).unwrap()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, parse, featurize, fit_one, hogwild, policy);
criterion_main!(benches);
