//! Fixtures shared by the criterion benchmarks.

use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gconv::domain::regular_grid_points;
use gconv::{build_rect_graph, Kernel, Point, ReceptiveGraph, RectWindow};

/// A `side x side` grid displaced by uniform jitter of half-width `jitter`.
pub fn jittered_grid(side: usize, jitter: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    regular_grid_points(side, side)
        .into_iter()
        .map(|p| {
            if jitter == 0.0 {
                return p;
            }
            Point::new(p.x + rng.random_range(-jitter..jitter), p.y + rng.random_range(-jitter..jitter))
        })
        .collect()
}

/// Inputs, graph and kernel for one conv layer on a 28x28 domain.
pub struct ConvFixture {
    pub input: Array3<f64>,
    pub upstream: Array3<f64>,
    pub graph: ReceptiveGraph,
    pub kernel: Kernel,
}

pub fn conv_fixture(batch: usize, channels: usize, maps: usize, jitter: f64) -> ConvFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let window = RectWindow::new(2, 2, 1.0).expect("valid window");
    let graph = build_rect_graph(&jittered_grid(28, jitter, 1), &window);
    let p = graph.point_count();
    let mut draw = |shape| Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0));
    let input = draw((batch, p, channels));
    let upstream = draw((batch, p, maps));
    let weights = draw((maps, channels, window.slot_count()));
    let kernel = Kernel::new(weights, Array1::zeros(maps)).expect("finite weights");
    ConvFixture {
        input,
        upstream,
        graph,
        kernel,
    }
}
