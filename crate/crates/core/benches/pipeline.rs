//! Parallel (default rayon pool) against a single-worker pool for the three
//! data-parallel hot spots. Build with `--no-default-features` to time the
//! plain sequential code path instead.

use attnsel_core::attention::aggregate_attention;
use attnsel_core::classify::{cross_validate, CvPlan, FeatureSet, FeatureSource, FeatureWeighting, Hyperparameters, ModelKind};
use attnsel_core::corpus::{build_vocabulary, make_folds, TokenizationPolicy};
use attnsel_core::featsel::{rank_terms, Method, MethodTag};
use attnsel_core::par;
use attnsel_core::synth::{planted_corpus, planted_dumps, PlantedSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const MODES: [(&str, Option<usize>); 2] = [("parallel", None), ("sequential", Some(1))];

fn benchmarks(c: &mut Criterion) {
    let spec = PlantedSpec { documents: 2000, background: 2000, ..Default::default() };
    let planted = planted_corpus(&spec);
    let policy = TokenizationPolicy::english();
    let vocab = build_vocabulary(&planted.corpus, &policy);
    let records = planted_dumps(&planted, 3);
    let folds = make_folds(&planted.corpus, 5, 1).unwrap();
    let plan = CvPlan {
        sets: vec![FeatureSet { tag: MethodTag::plain(Method::Chi), source: FeatureSource::Selector(Method::Chi) }],
        ks: vec![100],
        weightings: vec![FeatureWeighting::Tf],
        kinds: vec![ModelKind::NaiveBayes, ModelKind::LogisticRegression],
        hyper: Hyperparameters { epochs: 50, ..Default::default() },
        level: 1,
    };

    let mut g = c.benchmark_group("rank_terms");
    for (name, jobs) in MODES {
        g.bench_with_input(BenchmarkId::new("chi", name), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || black_box(rank_terms(Method::Chi, &planted.corpus, &vocab, 1, &policy))))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("aggregate_attention");
    for (name, jobs) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || black_box(aggregate_attention(&records, &policy).unwrap())))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("cross_validate");
    g.sample_size(10);
    for (name, jobs) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| par::with_jobs(jobs, || black_box(cross_validate(&planted.corpus, &vocab, &folds, &plan, &policy).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, benchmarks);
criterion_main!(benches);
