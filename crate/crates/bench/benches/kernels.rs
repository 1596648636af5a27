use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use gconv::{build_rect_graph, conv_backward, conv_forward, RectWindow};
use gconv_bench::{conv_fixture, jittered_grid};

fn graph_building(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_rect_graph");
    let window = RectWindow::new(2, 2, 1.0).unwrap();
    for side in [28usize, 64] {
        let pts = jittered_grid(side, 0.4, 3);
        group.bench_with_input(BenchmarkId::from_parameter(side * side), &pts, |b, pts| {
            b.iter(|| build_rect_graph(black_box(pts), &window))
        });
    }
    group.finish();
}

fn convolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv");
    for batch in [1usize, 64] {
        let fx = conv_fixture(batch, 1, 20, 0.4);
        group.bench_with_input(BenchmarkId::new("forward", batch), &fx, |b, fx| {
            b.iter(|| conv_forward(black_box(fx.input.view()), &fx.graph, &fx.kernel).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("backward", batch), &fx, |b, fx| {
            b.iter(|| conv_backward(black_box(fx.input.view()), &fx.graph, &fx.kernel, fx.upstream.view()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, graph_building, convolution);
criterion_main!(benches);
