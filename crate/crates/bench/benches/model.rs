use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hypervd::lorentz::{geodesic_distance, lift_to_manifold};
use hypervd::training::batch_gradients;
use hypervd::{Curvature, Geometry, ModelConfig, Mode};
use hypervd_bench::{desk_config, model, videos};
use std::hint::black_box;

fn lorentz(c: &mut Criterion) {
    let k = Curvature::new(-1.0).unwrap();
    let a: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..32).map(|i| (i as f64 * 0.11).cos()).collect();
    c.bench_function("lift_32", |bn| bn.iter(|| lift_to_manifold(black_box(&a), k)));
    let (x, y) = (lift_to_manifold(&a, k), lift_to_manifold(&b, k));
    c.bench_function("distance_32", |bn| bn.iter(|| geodesic_distance(black_box(&x), black_box(&y)).unwrap()));
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    for geometry in [Geometry::Hyperbolic, Geometry::Euclidean] {
        let m = model(ModelConfig { geometry, ..desk_config() });
        for t in [16, 64] {
            let v = &videos(2, t)[0];
            g.bench_with_input(BenchmarkId::new(geometry.to_string(), t), &t, |bn, _| {
                bn.iter(|| m.forward(&v.visual, &v.audio, &mut Mode::Eval).unwrap())
            });
        }
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let m = model(desk_config());
    let data = videos(8, 24);
    let batch: Vec<_> = data.iter().collect();
    c.bench_function("batch_gradients_8x24", |bn| {
        bn.iter(|| batch_gradients(&m, black_box(&batch), 16, None).unwrap())
    });
}

criterion_group!(benches, lorentz, forward, gradients);
criterion_main!(benches);
