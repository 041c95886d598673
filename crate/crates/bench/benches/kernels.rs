use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use uncmap_bench::fixture;
use uncmap_core::estimator::{forward, Mode};
use uncmap_core::harness::svg::render_svg;
use uncmap_core::metrics::evaluate;
use uncmap_core::noise_sim::{corrupt_observation, generate_scene, Layout, NoiseConfig};
use uncmap_core::predictor::predict;
use uncmap_core::uncertainty::{laplace_kl, semantic_fuse, ClassScores};

fn uncertainty(c: &mut Criterion) {
    c.bench_function("laplace_kl", |b| b.iter(|| laplace_kl(black_box((0.3, 0.2)), black_box((0.1, 0.5)))));
    let p = ClassScores([0.7, 0.1, 0.1, 0.1]);
    let q = ClassScores([0.4, 0.3, 0.2, 0.1]);
    c.bench_function("semantic_fuse", |b| b.iter(|| semantic_fuse(black_box(&p), black_box(&q))));
}

fn scenes(c: &mut Criterion) {
    let noise = NoiseConfig::default();
    c.bench_function("generate_and_corrupt_scene", |b| {
        b.iter(|| {
            let s = generate_scene(Layout::Intersection, black_box(5));
            corrupt_observation(&s, &noise)
        })
    });
}

fn models(c: &mut Criterion) {
    let f = fixture();
    let contexts: Vec<_> = f.observations.iter().map(|o| o.context).collect();
    c.bench_function("estimator_forward_scene", |b| b.iter(|| forward(&f.estimator, black_box(&contexts), Mode::Eval, 0)));
    let history = &f.scene.agents[0].history.samples;
    c.bench_function("predict_agent", |b| b.iter(|| predict(&f.predictor, black_box(history), &f.tokens)));
    let preds: Vec<_> = f
        .scene
        .agents
        .iter()
        .map(|a| predict(&f.predictor, &a.history.samples, &f.tokens).unwrap())
        .collect();
    let gts: Vec<_> = f.scene.agents.iter().map(|a| a.future.samples.clone()).collect();
    c.bench_function("evaluate_scene", |b| b.iter(|| evaluate(black_box(&preds), &gts)));
    c.bench_function("render_svg", |b| b.iter(|| render_svg(&f.scene, black_box(&f.map), Some(&preds))));
}

criterion_group!(benches, uncertainty, scenes, models);
criterion_main!(benches);
