//! Sequential against data-parallel execution of the batch loops.
//! Without the `parallel` feature both arms run the sequential path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dapper_core::evalhost::ClassifierBundle;
use dapper_core::inversion::{project_many, ProjectionConfig};
use dapper_core::par::Exec;
use dapper_core::saliency::gradcam_batch;
use dapper_core::scenegen::{make_source_dataset_with, make_target_dataset, target_labels};
use dapper_core::stylegan::GanBundle;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn render(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenegen/render-256");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(make_source_dataset_with(exec, 256, 1).unwrap()))
        });
    }
    g.finish();
}

fn synthesize(c: &mut Criterion) {
    let bundle = GanBundle::init(1).unwrap();
    let (ws, _) = bundle.sample(Exec::Sequential, 128, 2).unwrap();
    let mut g = c.benchmark_group("stylegan/synthesize-128");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(bundle.synthesize_batch(exec, &ws).unwrap()))
        });
    }
    g.finish();
}

fn project(c: &mut Criterion) {
    let bundle = GanBundle::init(1).unwrap();
    let stats = bundle.estimate_w_stats(10_000, 3).unwrap();
    let data = make_target_dataset(10, 4).unwrap();
    let images = &data.images[..64];
    let keys: Vec<u64> = (0..64).collect();
    let cfg = ProjectionConfig {
        steps: 20,
        ..Default::default()
    };
    let mut g = c.benchmark_group("inversion/project-64x20");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(project_many(exec, images, &keys, &bundle, &stats, &cfg).unwrap()))
        });
    }
    g.finish();
}

fn classify(c: &mut Criterion) {
    let data = make_target_dataset(52, 5).unwrap();
    let bundle = ClassifierBundle::untrained(target_labels(), 6).unwrap();
    let classes: Vec<usize> = (0..64).map(|i| i % 10).collect();
    let mut g = c.benchmark_group("evalhost/predict-520");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(bundle.predict(exec, &data.images)))
        });
    }
    g.finish();
    let mut g = c.benchmark_group("saliency/gradcam-64");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(gradcam_batch(exec, &bundle, &data.images[..64], &classes).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, render, synthesize, project, classify);
criterion_main!(benches);
