//! Criterion benchmarks for the hot paths: network evaluation, mesh
//! distance queries, ray compositing, and isosurface extraction.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sparseshape_core::autodiff::Tape;
use sparseshape_core::eval::marching_cubes;
use sparseshape_core::fields::{points_tensor, FieldConfig, FieldParams, GeometryField};
use sparseshape_core::geom::{Aabb, Vec3};
use sparseshape_core::mesh::{shapes, MeshDistanceField};
use sparseshape_core::renderer::{composite_f64, RenderSettings};

fn bench_geometry_eval(c: &mut Criterion) {
    let cfg = FieldConfig::desk();
    let geometry = GeometryField::new(&cfg);
    let params = FieldParams::init(&cfg, 1).geometry;
    let points: Vec<Vec3> = (0..512)
        .map(|i| {
            let t = i as f64 * 0.37;
            Vec3::new(t.sin(), (t * 1.3).cos(), (t * 0.7).sin()) * 0.8
        })
        .collect();
    let mut group = c.benchmark_group("geometry_eval");
    for &with_grad in &[false, true] {
        group.bench_with_input(
            BenchmarkId::new("batch512", if with_grad { "with_gradient" } else { "value_only" }),
            &with_grad,
            |b, &wg| {
                b.iter(|| geometry.eval_f64(&params, &points, wg).unwrap());
            },
        );
    }
    group.finish();
}

fn bench_geometry_backward(c: &mut Criterion) {
    let cfg = FieldConfig::desk();
    let geometry = GeometryField::new(&cfg);
    let params = FieldParams::init(&cfg, 1).geometry;
    let points: Vec<Vec3> = (0..256)
        .map(|i| {
            let t = i as f64 * 0.53;
            Vec3::new(t.cos(), (t * 0.9).sin(), (t * 1.7).cos()) * 0.7
        })
        .collect();
    c.bench_function("geometry_train_step_256pts", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars: Vec<_> = params.iter().map(|t| tape.param(t.clone())).collect();
            let pts = tape.constant(points_tensor(&points));
            let out = geometry.eval(&mut tape, &vars, pts, true).unwrap();
            let sq = tape.square(out.d);
            let loss = tape.mean_all(sq);
            tape.backward(loss).unwrap()
        });
    });
}

fn bench_mesh_sdf(c: &mut Criterion) {
    let sphere = shapes::icosphere(0.8, 4);
    let field = MeshDistanceField::new(sphere).unwrap();
    let queries: Vec<Vec3> = (0..256)
        .map(|i| {
            let t = i as f64 * 0.41;
            Vec3::new(t.sin() * 1.4, t.cos() * 1.4, (t * 2.0).sin())
        })
        .collect();
    c.bench_function("mesh_signed_distance_5120tris_256q", |b| {
        b.iter(|| {
            queries
                .iter()
                .map(|&q| field.signed(q).unwrap())
                .sum::<f64>()
        });
    });
}

fn bench_composite(c: &mut Criterion) {
    let alphas: Vec<f64> = (0..160).map(|i| ((i as f64 * 0.1).sin() * 0.5 + 0.5) * 0.3).collect();
    let colors: Vec<[f64; 3]> = (0..160).map(|i| [0.2, (i % 7) as f64 / 7.0, 0.8]).collect();
    c.bench_function("composite_160_samples", |b| {
        b.iter(|| composite_f64(&alphas, &colors, &RenderSettings::default()));
    });
}

fn bench_marching_cubes(c: &mut Criterion) {
    let bounds = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)).unwrap();
    c.bench_function("marching_cubes_sphere_48", |b| {
        b.iter(|| marching_cubes(&|p: Vec3| p.norm() - 0.6, [48, 48, 48], &bounds, 0.0).unwrap());
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_geometry_eval, bench_geometry_backward, bench_mesh_sdf, bench_composite,
              bench_marching_cubes
}
criterion_main!(benches);
