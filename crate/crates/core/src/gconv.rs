//! The generalized convolution operator and its analytic gradients.
//!
//! Forward gathers, for each destination point, the inputs of its in-edges
//! into one column block per slot and multiplies by the `(n*C) x F` weight
//! matrix. Backward multiplies back and scatters along the same edges.
//!
//! Work is split across rayon threads by batch entry. Per-entry weight
//! gradients are summed in entry order, so results do not depend on the
//! thread count.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{GconvError, Result};
use crate::receptive::ReceptiveGraph;

/// Shared weights `F x C x n` (feature map, input channel, slot) and one
/// bias per feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    weights: Array3<f64>,
    bias: Array1<f64>,
}

impl Kernel {
    pub fn new(weights: Array3<f64>, bias: Array1<f64>) -> Result<Self> {
        if bias.len() != weights.len_of(Axis(0)) {
            return Err(GconvError::LengthMismatch {
                what: "kernel bias vs feature maps",
                expected: weights.len_of(Axis(0)),
                actual: bias.len(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(GconvError::NonFinite("kernel"));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(feature_maps: usize, channels: usize, slots: usize) -> Self {
        Self {
            weights: Array3::zeros((feature_maps, channels, slots)),
            bias: Array1::zeros(feature_maps),
        }
    }

    /// Uniform on `±sqrt(6 / (C·n + F·n))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        feature_maps: usize,
        channels: usize,
        slots: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / ((channels * slots + feature_maps * slots) as f64)).sqrt();
        let weights = Array3::from_shape_fn((feature_maps, channels, slots), |_| {
            rng.random_range(-limit..limit)
        });
        Self {
            weights,
            bias: Array1::zeros(feature_maps),
        }
    }

    pub fn feature_maps(&self) -> usize {
        self.weights.len_of(Axis(0))
    }

    pub fn channels(&self) -> usize {
        self.weights.len_of(Axis(1))
    }

    pub fn slots(&self) -> usize {
        self.weights.len_of(Axis(2))
    }

    pub fn weights(&self) -> &Array3<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Array3<f64> {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Weights as an `(n*C) x F` matrix, row `k*C + c`, column `m`.
    fn gemm_matrix(&self) -> Array2<f64> {
        let (f, c, n) = self.weights.dim();
        let mut out = Array2::zeros((n * c, f));
        for ((m, ch, k), &w) in self.weights.indexed_iter() {
            out[[k * c + ch, m]] = w;
        }
        out
    }

    /// Writes the `GCK1` checkpoint: magic, `F C n` as little-endian u32,
    /// then the weights in `F, C, n` order and the biases as little-endian f64.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"GCK1")?;
        for d in [self.feature_maps(), self.channels(), self.slots()] {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for w in self.weights.iter().chain(self.bias.iter()) {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic, "checkpoint header")?;
        if &magic != b"GCK1" {
            return Err(GconvError::BadMagic {
                expected: u32::from_be_bytes(*b"GCK1"),
                found: u32::from_be_bytes(magic),
            });
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            read_exact(&mut input, &mut b, "checkpoint dims")?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [f, c, n] = dims;
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            read_exact(&mut input, &mut buf, "checkpoint payload")?;
            Ok(buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect())
        };
        let weights = Array3::from_shape_vec((f, c, n), read_f64s(f * c * n)?)
            .expect("length matches dims");
        let bias = Array1::from(read_f64s(f)?);
        Self::new(weights, bias)
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => GconvError::Truncated(what.to_string()),
        _ => GconvError::Io(e),
    })
}

/// Forward state of a conv layer: `pre_activation` is the raw convolution,
/// `post_activation` the fused bias + activation output.
#[derive(Debug, Clone)]
pub struct ConvActivations {
    pub pre_activation: Array3<f64>,
    pub post_activation: Array3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients {
    /// `F x C x n`
    pub d_weights: Array3<f64>,
    pub d_bias: Array1<f64>,
    /// `B x P x C`
    pub d_input: Array3<f64>,
}

fn check_shapes(input: &ArrayView3<f64>, graph: &ReceptiveGraph, kernel: &Kernel) -> Result<()> {
    let (_, p, c) = input.dim();
    if p != graph.point_count() {
        return Err(GconvError::Shape(format!(
            "input has {p} points, graph has {}",
            graph.point_count()
        )));
    }
    if kernel.slots() != graph.slot_count() {
        return Err(GconvError::Shape(format!(
            "kernel has {} slots, graph has {}",
            kernel.slots(),
            graph.slot_count()
        )));
    }
    if kernel.channels() != c {
        return Err(GconvError::Shape(format!(
            "kernel expects {} channels, input has {c}",
            kernel.channels()
        )));
    }
    Ok(())
}

fn contiguous<'a>(a: &'a ArrayView3<'_, f64>) -> std::borrow::Cow<'a, [f64]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

/// `col[v, k*C + c]` = sum of `in[u, c]` over in-edges `(u, k)` of `v`.
fn gather(graph: &ReceptiveGraph, in_b: &[f64], c: usize) -> Array2<f64> {
    let p = graph.point_count();
    let nc = graph.slot_count() * c;
    let mut col = Array2::zeros((p, nc));
    let buf = col.as_slice_mut().expect("fresh array");
    for v in 0..p {
        let row = &mut buf[v * nc..(v + 1) * nc];
        for e in graph.in_edges_unchecked(v) {
            let x = &in_b[e.src as usize * c..(e.src as usize + 1) * c];
            let dst = &mut row[e.slot as usize * c..(e.slot as usize + 1) * c];
            for (d, x) in dst.iter_mut().zip(x) {
                *d += x;
            }
        }
    }
    col
}

/// Adjoint of [`gather`].
fn scatter(graph: &ReceptiveGraph, d_col: &Array2<f64>, d_b: &mut [f64], c: usize) {
    let nc = graph.slot_count() * c;
    let d_col = d_col.as_standard_layout();
    let buf = d_col.as_slice().expect("standard layout");
    for v in 0..graph.point_count() {
        let row = &buf[v * nc..(v + 1) * nc];
        for e in graph.in_edges_unchecked(v) {
            let src = &row[e.slot as usize * c..(e.slot as usize + 1) * c];
            for (d, g) in d_b[e.src as usize * c..(e.src as usize + 1) * c].iter_mut().zip(src) {
                *d += g;
            }
        }
    }
}

/// `out[b, v, m] = sum over in-edges (u, k) of v, sum over c of
/// in[b, u, c] * w[m, c, k]`. The bias is not added here.
pub fn conv_forward(
    input: ArrayView3<f64>,
    graph: &ReceptiveGraph,
    kernel: &Kernel,
) -> Result<Array3<f64>> {
    check_shapes(&input, graph, kernel)?;
    let (b, p, c) = input.dim();
    let f = kernel.feature_maps();
    let wm = kernel.gemm_matrix();
    let inp = contiguous(&input);
    let mut out = vec![0.0; b * p * f];
    if p > 0 && f > 0 && c > 0 {
        out.par_chunks_mut(p * f)
            .zip(inp.par_chunks(p * c))
            .for_each(|(out_b, in_b)| {
                let prod = gather(graph, in_b, c).dot(&wm);
                out_b.copy_from_slice(prod.as_standard_layout().as_slice().expect("standard layout"));
            });
    }
    Ok(Array3::from_shape_vec((b, p, f), out).expect("sized above"))
}

/// Gradients of a loss through [`conv_forward`] given `upstream` = dE/d(out).
pub fn conv_backward(
    input: ArrayView3<f64>,
    graph: &ReceptiveGraph,
    kernel: &Kernel,
    upstream: ArrayView3<f64>,
) -> Result<ConvGradients> {
    check_shapes(&input, graph, kernel)?;
    let (b, p, c) = input.dim();
    let f = kernel.feature_maps();
    let n = kernel.slots();
    if upstream.dim() != (b, p, f) {
        return Err(GconvError::Shape(format!(
            "upstream is {:?}, expected {:?}",
            upstream.dim(),
            (b, p, f)
        )));
    }
    let wm = kernel.gemm_matrix();
    let inp = contiguous(&input);
    let up = contiguous(&upstream);

    let mut d_input = vec![0.0; b * p * c];
    let mut d_wm = Array2::<f64>::zeros((n * c, f));
    if p > 0 && c > 0 && f > 0 {
        let partials: Vec<Array2<f64>> = d_input
            .par_chunks_mut(p * c)
            .zip(inp.par_chunks(p * c))
            .zip(up.par_chunks(p * f))
            .map(|((d_b, in_b), up_b)| {
                let up_b = ArrayView2::from_shape((p, f), up_b).expect("sized above");
                scatter(graph, &up_b.dot(&wm.t()), d_b, c);
                gather(graph, in_b, c).t().dot(&up_b)
            })
            .collect();
        // summed in entry order, independent of the thread count
        for part in &partials {
            d_wm += part;
        }
    }
    let mut d_weights = Array3::zeros((f, c, n));
    for ((m, ch, k), d) in d_weights.indexed_iter_mut() {
        *d = d_wm[[k * c + ch, m]];
    }

    let mut d_bias = Array1::zeros(f);
    for bi in 0..b {
        for v in 0..p {
            let delta = &up[(bi * p + v) * f..(bi * p + v + 1) * f];
            for (db, d) in d_bias.iter_mut().zip(delta) {
                *db += d;
            }
        }
    }

    Ok(ConvGradients {
        d_weights,
        d_bias,
        d_input: Array3::from_shape_vec((b, p, c), d_input).expect("sized above"),
    })
}

/// Dense `P x P` operator of a single-channel kernel row: entry `(i, j)` is
/// the weight of the slot on edge `j -> i`, zero when there is no edge.
pub fn materialize_dense(graph: &ReceptiveGraph, kernel_row: &[f64]) -> Result<Array2<f64>> {
    if kernel_row.len() != graph.slot_count() {
        return Err(GconvError::LengthMismatch {
            what: "kernel row vs graph slots",
            expected: graph.slot_count(),
            actual: kernel_row.len(),
        });
    }
    let p = graph.point_count();
    let mut m = Array2::zeros((p, p));
    for e in graph.edges() {
        m[[e.dst as usize, e.src as usize]] = kernel_row[e.slot as usize];
    }
    Ok(m)
}

/// Bilinear form between a length-`n` filter `f` and a graph signal `g`:
/// `(f * g)(v) = sum over in-edges (u, k) of v of f[k] * g[u]`.
///
/// This is the single-channel operator with `f` in the role of the kernel;
/// a filter living on the vertices would need an embedding into slots, which
/// is not defined here.
pub fn bilinear_graph_conv(f: &[f64], g: &[f64], graph: &ReceptiveGraph) -> Result<Vec<f64>> {
    if f.len() != graph.slot_count() {
        return Err(GconvError::LengthMismatch {
            what: "filter length vs graph slots",
            expected: graph.slot_count(),
            actual: f.len(),
        });
    }
    if g.len() != graph.point_count() {
        return Err(GconvError::LengthMismatch {
            what: "signal length vs graph points",
            expected: graph.point_count(),
            actual: g.len(),
        });
    }
    Ok((0..graph.point_count())
        .map(|v| {
            graph
                .in_edges_unchecked(v)
                .iter()
                .map(|e| f[e.slot as usize] * g[e.src as usize])
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{regular_grid_points, Point};
    use crate::receptive::{build_rect_graph, RectWindow};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent)))
            .collect()
    }

    fn random_array3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn random_kernel(rng: &mut ChaCha8Rng, f: usize, c: usize, n: usize) -> Kernel {
        Kernel::new(random_array3(rng, (f, c, n)), Array1::from_shape_fn(f, |_| rng.random_range(-1.0..1.0)))
            .unwrap()
    }

    fn path_graph() -> ReceptiveGraph {
        let pts = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        build_rect_graph(&pts, &RectWindow::new(1, 0, 1.0).unwrap())
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let window = RectWindow::new(1, 2, 0.9).unwrap();
        // jittered lattice: no other point can share the center cell
        let pts: Vec<Point> = (0..30)
            .map(|i| {
                let (c, r) = ((i % 6) as f64, (i / 6) as f64);
                Point::new(c + rng.random_range(-0.2..0.2), r + rng.random_range(-0.2..0.2))
            })
            .collect();
        let graph = build_rect_graph(&pts, &window);
        let input = random_array3(&mut rng, (3, 30, 2));
        let mut kernel = Kernel::zeros(2, 2, window.slot_count());
        for m in 0..2 {
            kernel.weights_mut()[[m, m, window.center_slot()]] = 1.0;
        }
        let out = conv_forward(input.view(), &graph, &kernel).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let graph = build_rect_graph(&random_cloud(&mut rng, 12, 3.0), &RectWindow::new(1, 1, 1.0).unwrap());
        let input = random_array3(&mut rng, (2, 12, 3));
        let out = conv_forward(input.view(), &graph, &Kernel::zeros(4, 3, 9)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert_eq!(out.dim(), (2, 12, 4));
    }

    #[test]
    fn path_graph_hand_values() {
        let graph = path_graph();
        assert_eq!(graph.edge_count(), 7);
        let kernel = Kernel::new(array![[[1.0, 10.0, 100.0]]], array![0.0]).unwrap();
        let input = Array3::from_shape_vec((1, 3, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let out = conv_forward(input.view(), &graph, &kernel).unwrap();
        assert_eq!(out.iter().copied().collect::<Vec<_>>(), vec![210.0, 321.0, 32.0]);
    }

    #[test]
    fn shape_errors() {
        let graph = path_graph();
        let input = Array3::zeros((1, 3, 1));
        assert!(conv_forward(input.view(), &graph, &Kernel::zeros(1, 1, 9)).is_err());
        assert!(conv_forward(input.view(), &graph, &Kernel::zeros(1, 2, 3)).is_err());
        assert!(conv_forward(Array3::zeros((1, 4, 1)).view(), &graph, &Kernel::zeros(1, 1, 3)).is_err());
        let up = Array3::zeros((1, 3, 2));
        assert!(conv_backward(input.view(), &graph, &Kernel::zeros(1, 1, 3), up.view()).is_err());
    }

    #[test]
    fn forward_matches_dense_materialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let window = RectWindow::new(1, 1, 1.0).unwrap();
        let pts = random_cloud(&mut rng, 20, 4.0);
        let graph = build_rect_graph(&pts, &window);
        let (c, f) = (2, 3);
        let input = random_array3(&mut rng, (2, 20, c));
        let kernel = random_kernel(&mut rng, f, c, 9);
        let out = conv_forward(input.view(), &graph, &kernel).unwrap();
        for m in 0..f {
            let mut expect = Array2::<f64>::zeros((2, 20));
            for ch in 0..c {
                let row: Vec<f64> = (0..9).map(|k| kernel.weights()[[m, ch, k]]).collect();
                let dense = materialize_dense(&graph, &row).unwrap();
                for b in 0..2 {
                    let e = input.slice(ndarray::s![b, .., ch]);
                    let y = dense.dot(&e);
                    for v in 0..20 {
                        expect[[b, v]] += y[v];
                    }
                }
            }
            for b in 0..2 {
                for v in 0..20 {
                    assert_abs_diff_eq!(out[[b, v, m]], expect[[b, v]], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn materialize_dense_cases() {
        // 1-D row: Toeplitz band with zero padding
        let pts = regular_grid_points(5, 1);
        let graph = build_rect_graph(&pts, &RectWindow::new(1, 0, 1.0).unwrap());
        let m = materialize_dense(&graph, &[1.0, 2.0, 3.0]).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = match j as i64 - i as i64 {
                    -1 => 1.0,
                    0 => 2.0,
                    1 => 3.0,
                    _ => 0.0,
                };
                assert_eq!(m[[i, j]], expect);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = random_cloud(&mut rng, 15, 3.0);
        let graph = build_rect_graph(&pts, &RectWindow::new(1, 1, 1.0).unwrap());
        let ones = materialize_dense(&graph, &[1.0; 9]).unwrap();
        let mut adj = Array2::<f64>::zeros((15, 15));
        for e in graph.edges() {
            adj[[e.dst as usize, e.src as usize]] = 1.0;
        }
        assert_eq!(ones, adj);

        let graph = ReceptiveGraph::from_edges(3, 1, vec![]).unwrap();
        let m = materialize_dense(&graph, &[5.0]).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
        assert!(materialize_dense(&graph, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bilinear_form_cases() {
        let graph = path_graph();
        let g = [1.0, 2.0, 3.0];
        assert_eq!(bilinear_graph_conv(&[0.0, 1.0, 0.0], &g, &graph).unwrap(), g.to_vec());
        assert_eq!(
            bilinear_graph_conv(&[1.0, 10.0, 100.0], &g, &graph).unwrap(),
            vec![210.0, 321.0, 32.0]
        );
        assert_eq!(bilinear_graph_conv(&[1.0, 10.0, 100.0], &[0.0; 3], &graph).unwrap(), vec![0.0; 3]);
        assert!(bilinear_graph_conv(&[1.0], &g, &graph).is_err());
        assert!(bilinear_graph_conv(&[1.0, 1.0, 1.0], &[1.0], &graph).is_err());
    }

    #[test]
    fn single_edge_chain_rule() {
        let graph = build_rect_graph(&[Point::new(0.0, 0.0)], &RectWindow::new(0, 0, 1.0).unwrap());
        let kernel = Kernel::new(array![[[1.5]]], array![0.0]).unwrap();
        let input = array![[[2.0]]];
        let up = array![[[-3.0]]];
        let g = conv_backward(input.view(), &graph, &kernel, up.view()).unwrap();
        assert_eq!(g.d_weights[[0, 0, 0]], -6.0);
        assert_eq!(g.d_input[[0, 0, 0]], -4.5);
        assert_eq!(g.d_bias[0], -3.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let graph = build_rect_graph(&random_cloud(&mut rng, 10, 3.0), &RectWindow::new(1, 1, 1.0).unwrap());
        let input = random_array3(&mut rng, (2, 10, 2));
        let kernel = random_kernel(&mut rng, 3, 2, 9);
        let g = conv_backward(input.view(), &graph, &kernel, Array3::zeros((2, 10, 3)).view()).unwrap();
        assert!(g.d_weights.iter().chain(g.d_bias.iter()).chain(g.d_input.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn input_gradient_is_dense_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let graph = build_rect_graph(&random_cloud(&mut rng, 25, 4.0), &RectWindow::new(2, 1, 0.8).unwrap());
        let n = graph.slot_count();
        let kernel = random_kernel(&mut rng, 1, 1, n);
        let input = random_array3(&mut rng, (1, 25, 1));
        let up = random_array3(&mut rng, (1, 25, 1));
        let g = conv_backward(input.view(), &graph, &kernel, up.view()).unwrap();
        let row: Vec<f64> = kernel.weights().iter().copied().collect();
        let dense = materialize_dense(&graph, &row).unwrap();
        let delta = up.slice(ndarray::s![0, .., 0]);
        let expect: ndarray::Array1<f64> = dense.t().dot(&delta);
        for u in 0..25 {
            assert_abs_diff_eq!(g.d_input[[0, u, 0]], expect[u], epsilon = 1e-12);
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let graph = build_rect_graph(&random_cloud(&mut rng, 60, 6.0), &RectWindow::new(1, 1, 1.0).unwrap());
        let input = random_array3(&mut rng, (5, 60, 2));
        let up = random_array3(&mut rng, (5, 60, 3));
        let kernel = random_kernel(&mut rng, 3, 2, 9);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    (
                        conv_forward(input.view(), &graph, &kernel).unwrap(),
                        conv_backward(input.view(), &graph, &kernel, up.view()).unwrap(),
                    )
                })
        };
        let (f1, g1) = run(1);
        let (f4, g4) = run(4);
        for (a, b) in f1.iter().zip(f4.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        for (a, b) in g1.d_weights.iter().zip(g4.d_weights.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        for (a, b) in g1.d_input.iter().zip(g4.d_input.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let kernel = random_kernel(&mut rng, 2, 3, 5);
        let mut buf = Vec::new();
        kernel.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GCK1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &5u32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 8 * (30 + 2));
        // weights[0, 0, 1] is the second f64
        assert_eq!(&buf[24..32], &kernel.weights()[[0, 0, 1]].to_le_bytes());
        assert_eq!(Kernel::read_checkpoint(&buf[..]).unwrap(), kernel);

        assert!(matches!(
            Kernel::read_checkpoint(&buf[..buf.len() - 3]),
            Err(GconvError::Truncated(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Kernel::read_checkpoint(&bad[..]), Err(GconvError::BadMagic { .. })));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = Kernel::glorot(20, 1, 25, &mut rng);
        let limit = (6.0f64 / (25.0 + 500.0)).sqrt();
        assert!(k.weights().iter().all(|w| w.abs() < limit));
        assert!(k.bias().iter().all(|&b| b == 0.0));
        assert_eq!(k.param_count(), 520);
    }
}
