use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use afmkit::afm::{dilate, make_tip_kernel, render_views, HeightMap, KernelShape, RenderParams};
use afmkit::eval3d::chamfer;
use afmkit::mesh::{sample_surface, uv_sphere, Point};
use afmkit::par;
use afmkit::raster::CameraPose;

fn threads() -> [(&'static str, Option<usize>); 2] {
    [("parallel", None), ("sequential", Some(1))]
}

fn run<R>(cap: Option<usize>, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    match cap {
        Some(n) => par::with_threads(n, f),
        None => f(),
    }
}

fn bench_render(c: &mut Criterion) {
    let sphere = uv_sphere(Point::origin(), 20.0, 64, 128, 1.0, "sphere").unwrap();
    let params = RenderParams { n_views: 8, step_nm: 0.5, ..Default::default() };
    let mut g = c.benchmark_group("render_views");
    g.sample_size(10);
    for (name, cap) in threads() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run(cap, || render_views(black_box(&sphere), &params).unwrap())));
    }
    g.finish();
}

fn bench_dilate(c: &mut Criterion) {
    let n = 512;
    let map = HeightMap {
        width: n,
        height: n,
        values_nm: (0..n * n).map(|i| ((i * 7919) % 1000) as f32 / 100.0).collect(),
        step_nm: 0.5,
        pose: CameraPose::top_down(),
        source_id: "noise".into(),
        tip_radius_nm: 3.0,
        kernel: KernelShape::Spherical,
    };
    let mut g = c.benchmark_group("dilate");
    for shape in [KernelShape::Spherical, KernelShape::FlatDisk] {
        let kernel = make_tip_kernel(3.0, 0.5, shape).unwrap();
        for (name, cap) in threads() {
            g.bench_function(BenchmarkId::new(format!("{shape:?}"), name), |b| b.iter(|| run(cap, || dilate(black_box(&map), &kernel))));
        }
    }
    g.finish();
}

fn bench_chamfer(c: &mut Criterion) {
    let a = sample_surface(&uv_sphere(Point::origin(), 1.0, 32, 64, 1.0, "a").unwrap(), 10_000, 1).unwrap();
    let b = sample_surface(&uv_sphere(Point::new(0.1, 0.0, 0.0), 1.0, 32, 64, 1.0, "b").unwrap(), 10_000, 2).unwrap();
    let mut g = c.benchmark_group("chamfer_10k");
    for (name, cap) in threads() {
        g.bench_function(BenchmarkId::from_parameter(name), |bn| bn.iter(|| run(cap, || chamfer(black_box(&a), &b).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, bench_render, bench_dilate, bench_chamfer);
criterion_main!(benches);
