//! Hot kernels: rotated IoU, DIoU gradient, assignment, one training step
//! and full-scene inference at the default proposal count.

use std::f64::consts::PI;
use std::hint::black_box;

use boxdiff_core::data::generate_synthetic_scene;
use boxdiff_core::decoder::DecoderParams;
use boxdiff_core::geometry::{diou_loss_3d_grad, iou_3d, rotated_iou_bev};
use boxdiff_core::matching::hungarian;
use boxdiff_core::pipeline::train::scene_step;
use boxdiff_core::pipeline::{run_inference, scene_rng, Detector, PreparedScene};
use boxdiff_core::{BevBox, Box3D, Config, Decoder};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pairs(n: usize) -> Vec<(Box3D, Box3D)> {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut mk = |cx: f64, cy: f64| {
        Box3D::new(
            BevBox::new(cx, cy, r.random_range(1.0..5.0), r.random_range(1.0..3.0), r.random_range(-PI..PI)),
            r.random_range(-1.0..0.0),
            r.random_range(1.0..2.0),
        )
    };
    (0..n).map(|k| (mk(0.0, 0.0), mk(k as f64 % 3.0, 1.0))).collect()
}

fn geometry(c: &mut Criterion) {
    let pairs = random_pairs(256);
    c.bench_function("rotated_iou_bev x256", |b| {
        b.iter(|| pairs.iter().map(|(p, q)| rotated_iou_bev(black_box(&p.bev), &q.bev)).sum::<f64>())
    });
    c.bench_function("iou_3d x256", |b| {
        b.iter(|| pairs.iter().map(|(p, q)| iou_3d(black_box(p), q)).sum::<f64>())
    });
    c.bench_function("diou_loss_3d_grad x256", |b| {
        b.iter(|| pairs.iter().map(|(p, q)| diou_loss_3d_grad(black_box(p), q).0).sum::<f64>())
    });
}

fn assignment(c: &mut Criterion) {
    let mut g = c.benchmark_group("hungarian");
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for (n, m) in [(7, 7), (300, 10), (300, 40)] {
        let cost = Array2::from_shape_fn((n, m), |_| r.random_range(0.0..10.0));
        g.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{m}")), &cost, |b, cost| {
            b.iter(|| hungarian(black_box(cost)).unwrap())
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let cfg = Config::default();
    let scene = generate_synthetic_scene(&mut scene_rng(3, 0), &cfg, "bench");
    let dcfg = cfg.decoder_config();
    let decoder = Decoder::new(dcfg, DecoderParams::init(&dcfg, &mut scene_rng(4, 0))).unwrap();

    let mut g = c.benchmark_group("pipeline");
    g.sample_size(20);
    g.bench_function("train step", |b| {
        let mut r = scene_rng(5, 0);
        b.iter(|| scene_step(&decoder, &cfg, &scene, 500, &mut r).unwrap().0.total)
    });
    let detector = Detector::new(decoder, &cfg);
    let prep = PreparedScene::new(&scene, &cfg);
    for steps in [1, 4] {
        g.bench_with_input(BenchmarkId::new("inference steps", steps), &steps, |b, &steps| {
            let mut r = scene_rng(6, 0);
            b.iter(|| run_inference(&detector, &prep, &cfg, steps, &mut r).unwrap().candidates)
        });
    }
    g.finish();
}

criterion_group!(benches, geometry, assignment, pipeline);
criterion_main!(benches);
