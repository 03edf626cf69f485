use std::hint::black_box;

use criterion::Criterion;
use pwood_core::cpf::fit_gmm;
use pwood_core::geometry::{bhattacharyya_with_grad, obb_to_gaussian};
use pwood_core::rng::rng_from;
use pwood_core::scale_targets::scene_basins;
use pwood_core::scenes::{extract_features, generate_scene, LabeledScene, SceneSpec, NUM_FEATURES};
use pwood_core::simloop::ToyDetector;
use pwood_core::{rotated_iou, OrientedBox};

pub fn bench_scene() -> LabeledScene {
    let spec = SceneSpec::bench_v1();
    generate_scene(&spec, &mut rng_from(spec.scene_seed(0))).expect("bench-v1 scene")
}

fn geometry(c: &mut Criterion) {
    let a = OrientedBox::new(0.0, 0.0, 12.0, 5.0, 0.3);
    let b = OrientedBox::new(2.0, 1.0, 9.0, 7.0, -0.8);
    c.bench_function("rotated_iou", |bench| bench.iter(|| rotated_iou(black_box(&a), black_box(&b))));
    let (ga, gb) = (obb_to_gaussian(&a), obb_to_gaussian(&b));
    c.bench_function("bhattacharyya_with_grad", |bench| {
        bench.iter(|| bhattacharyya_with_grad(black_box(&ga), black_box(&gb)))
    });
}

fn cpf(c: &mut Criterion) {
    let scores: Vec<f64> = (0..4096)
        .map(|i| {
            let u = (i as f64 * 0.618_033_988_75).fract();
            if i % 8 == 0 { 0.6 + 0.3 * u } else { 0.2 * u }
        })
        .collect();
    c.bench_function("fit_gmm_4096", |bench| bench.iter(|| fit_gmm(black_box(&scores))));
}

fn scenes(c: &mut Criterion) {
    let spec = SceneSpec::bench_v1();
    c.bench_function("generate_scene_64", |bench| {
        bench.iter(|| generate_scene(&spec, &mut rng_from(spec.scene_seed(0))))
    });
    let scene = bench_scene();
    c.bench_function("extract_features_64", |bench| {
        bench.iter(|| extract_features(black_box(&scene.intensity), scene.height, scene.width))
    });
    let points: Vec<[f64; 2]> = scene.objects.iter().map(|o| o.bbox.center()).collect();
    c.bench_function("scene_basins_64", |bench| {
        bench.iter(|| scene_basins(black_box(&points), &scene.elevation))
    });
}

fn detector(c: &mut Criterion) {
    let scene = bench_scene();
    let det = ToyDetector::random(NUM_FEATURES, 3, 1.0, 0.1, &mut rng_from(1));
    c.bench_function("detector_forward_64", |bench| bench.iter(|| det.forward(black_box(&scene.features))));
    let pred = det.forward(&scene.features).expect("forward");
    let grad = vec![1e-3; pred.len()];
    c.bench_function("detector_backward_64", |bench| {
        bench.iter(|| det.backward(black_box(&scene.features), &pred, &grad))
    });
}

pub fn benchmarks(c: &mut Criterion) {
    geometry(c);
    cpf(c);
    scenes(c);
    detector(c);
}
