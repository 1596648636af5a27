//! Layers and their composition into trainable networks.
//!
//! Spatial activations flow between layers as `entry x point x channel`
//! tensors. The point-dependent structure (receptive graphs, pooling plans)
//! is computed once per point set by [`Network::prepare`] and passed to
//! every forward/backward call, so a static domain pays for it only once.

pub mod activation;
pub mod config;
pub mod dense;
pub mod loss;
pub mod pool;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use activation::{relu_backward, relu_bias_backward, relu_bias_forward, relu_forward};
pub use config::{LayerKind, NetworkConfig};
pub use dense::DenseLayer;
pub use loss::{softmax_xent_backward, softmax_xent_forward};
pub use pool::{maxpool_backward, maxpool_forward, plan_pool, PatchGrid, PoolPlan};

use crate::domain::Point;
use crate::error::{GconvError, Result};
use crate::gconv::{conv_backward, conv_forward, Kernel};
use crate::receptive::{build_rect_graph, ReceptiveGraph, RectWindow};

/// Generalized convolution followed by the fused bias + ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct GConvLayer {
    pub window: RectWindow,
    pub kernel: Kernel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    GConv(GConvLayer),
    MaxPool(PatchGrid),
    Dense(DenseLayer),
    Relu,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::GConv(l) => l.kernel.param_count(),
            Layer::Dense(d) => d.param_count(),
            Layer::MaxPool(_) | Layer::Relu => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum LayerGeometry {
    Graph(ReceptiveGraph),
    Pool(PoolPlan),
    Flat,
}

/// Per-layer structure derived from one input point set.
#[derive(Debug, Clone)]
pub struct Geometry {
    layers: Vec<LayerGeometry>,
}

impl Geometry {
    pub fn layers(&self) -> &[LayerGeometry] {
        &self.layers
    }

    /// Receptive graph of the first generalized conv layer, if any.
    pub fn first_graph(&self) -> Option<&ReceptiveGraph> {
        self.layers.iter().find_map(|g| match g {
            LayerGeometry::Graph(graph) => Some(graph),
            _ => None,
        })
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Conv { pre: Array3<f64> },
    Pool { argmax: Array3<Option<u32>> },
    Plain,
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array3<f64>>,
    caches: Vec<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Conv { d_weights: Array3<f64>, d_bias: Array1<f64> },
    Dense { d_weights: Array2<f64>, d_bias: Array1<f64> },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (LayerGrad::Conv { d_weights, d_bias }, LayerGrad::Conv { d_weights: w, d_bias: bb }) => {
                    *d_weights += w;
                    *d_bias += bb;
                }
                (LayerGrad::Dense { d_weights, d_bias }, LayerGrad::Dense { d_weights: w, d_bias: bb }) => {
                    *d_weights += w;
                    *d_bias += bb;
                }
                _ => {}
            }
        }
    }

    /// All gradient values in parameter order (per layer: weights, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Conv { d_weights, d_bias } => {
                    out.extend(d_weights.iter());
                    out.extend(d_bias.iter());
                }
                LayerGrad::Dense { d_weights, d_bias } => {
                    out.extend(d_weights.iter());
                    out.extend(d_bias.iter());
                }
                LayerGrad::None => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

fn flat_view(x: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (b, p, c) = x.dim();
    x.view()
        .into_shape_with_order((b, p * c))
        .expect("activations are contiguous")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Builds and initializes the described architecture from `cfg.seed`.
    pub fn from_config(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layers = Vec::new();
        let (mut cols, mut rows) = (cfg.width, cfg.height);
        let mut channels = cfg.channels;
        let mut pitch = 1.0;
        let origin = Point::new(-0.5, -0.5);
        let mut maps = cfg.feature_maps.iter();
        let mut hidden = cfg.hidden.iter();
        let mut flat: Option<usize> = None;
        for kind in &cfg.layers {
            match kind {
                LayerKind::GConv => {
                    let window = RectWindow::new(cfg.p, cfg.q, cfg.mu * pitch)?;
                    let f = *maps.next().expect("validated");
                    let kernel = Kernel::glorot(f, channels, window.slot_count(), &mut rng);
                    layers.push(Layer::GConv(GConvLayer { window, kernel }));
                    channels = f;
                }
                LayerKind::Pool => {
                    let grid = PatchGrid::covering(origin, pitch, cols, rows, cfg.pool_side)?;
                    cols = grid.cols;
                    rows = grid.rows;
                    pitch *= cfg.pool_side;
                    layers.push(Layer::MaxPool(grid));
                }
                LayerKind::Dense => {
                    let inputs = flat.unwrap_or(cols * rows * channels);
                    let h = *hidden.next().expect("validated");
                    layers.push(Layer::Dense(DenseLayer::glorot(inputs, h, &mut rng)));
                    layers.push(Layer::Relu);
                    flat = Some(h);
                }
            }
        }
        let inputs = flat.unwrap_or(cols * rows * channels);
        layers.push(Layer::Dense(DenseLayer::glorot(inputs, cfg.classes, &mut rng)));
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Total number of trainable weights and biases.
    pub fn count_params(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_spatial(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::GConv(_) | Layer::MaxPool(_)))
    }

    /// Receptive graphs and pooling plans for inputs living on `points`.
    pub fn prepare(&self, points: &[Point]) -> Geometry {
        let mut current = points.to_vec();
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::GConv(l) => LayerGeometry::Graph(build_rect_graph(&current, &l.window)),
                Layer::MaxPool(grid) => {
                    let plan = plan_pool(&current, grid);
                    current = plan.output_points();
                    LayerGeometry::Pool(plan)
                }
                Layer::Dense(_) | Layer::Relu => LayerGeometry::Flat,
            })
            .collect();
        Geometry { layers }
    }

    fn run(&self, input: ArrayView3<f64>, geo: &Geometry, mut tape: Option<&mut Tape>) -> Result<Array2<f64>> {
        if geo.layers.len() != self.layers.len() {
            return Err(GconvError::Shape("geometry was prepared for another network".into()));
        }
        let mut x = input.to_owned();
        for (layer, g) in self.layers.iter().zip(&geo.layers) {
            let (next, cache) = match (layer, g) {
                (Layer::GConv(l), LayerGeometry::Graph(graph)) => {
                    let pre = conv_forward(x.view(), graph, &l.kernel)?;
                    let out = relu_bias_forward(pre.view(), l.kernel.bias().view())?;
                    (out, Cache::Conv { pre })
                }
                (Layer::MaxPool(_), LayerGeometry::Pool(plan)) => {
                    let (out, argmax) = maxpool_forward(x.view(), plan)?;
                    (out, Cache::Pool { argmax })
                }
                (Layer::Dense(d), LayerGeometry::Flat) => {
                    let out = d.forward(flat_view(&x))?;
                    let (b, h) = out.dim();
                    (out.into_shape_with_order((b, 1, h)).expect("contiguous"), Cache::Plain)
                }
                (Layer::Relu, LayerGeometry::Flat) => (relu_forward(x.view()), Cache::Plain),
                _ => return Err(GconvError::Shape("geometry does not match layer".into())),
            };
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(std::mem::replace(&mut x, next));
                t.caches.push(cache);
            } else {
                x = next;
            }
        }
        Ok(flat_view(&x).to_owned())
    }

    /// Logits `entry x class` plus the tape for [`Network::backward`].
    pub fn forward(&self, input: ArrayView3<f64>, geo: &Geometry) -> Result<(Array2<f64>, Tape)> {
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            caches: Vec::with_capacity(self.layers.len()),
        };
        let logits = self.run(input, geo, Some(&mut tape))?;
        Ok((logits, tape))
    }

    pub fn predict(&self, input: ArrayView3<f64>, geo: &Geometry) -> Result<Array2<f64>> {
        self.run(input, geo, None)
    }

    /// Parameter gradients and the input gradient, given dE/d(logits).
    pub fn backward(&self, tape: &Tape, geo: &Geometry, d_logits: ArrayView2<f64>) -> Result<(Gradients, Array3<f64>)> {
        let (b, k) = d_logits.dim();
        let mut d = d_logits
            .to_owned()
            .into_shape_with_order((b, 1, k))
            .expect("contiguous");
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let input = &tape.inputs[i];
            d = match (&self.layers[i], &geo.layers[i], &tape.caches[i]) {
                (Layer::GConv(l), LayerGeometry::Graph(graph), Cache::Conv { pre }) => {
                    let (delta, d_bias) = relu_bias_backward(pre.view(), l.kernel.bias().view(), d.view())?;
                    let g = conv_backward(input.view(), graph, &l.kernel, delta.view())?;
                    grads[i] = LayerGrad::Conv {
                        d_weights: g.d_weights,
                        d_bias,
                    };
                    g.d_input
                }
                (Layer::MaxPool(_), LayerGeometry::Pool(plan), Cache::Pool { argmax }) => {
                    maxpool_backward(d.view(), argmax, plan.input_points())?
                }
                (Layer::Dense(dense), _, _) => {
                    let up = flat_view(&d);
                    let (dx, dw, db) = dense.backward(flat_view(input), up);
                    grads[i] = LayerGrad::Dense {
                        d_weights: dw,
                        d_bias: db,
                    };
                    dx.into_shape_with_order(input.dim()).expect("contiguous")
                }
                (Layer::Relu, _, _) => relu_backward(input.view(), d.view()),
                _ => return Err(GconvError::Shape("tape does not match network".into())),
            };
        }
        Ok((Gradients { layers: grads }, d))
    }

    /// Smallest distance, over the recorded forward pass, of any ReLU input
    /// from 0 or of any patch maximum from its runner-up.
    pub fn kink_margin(&self, tape: &Tape, geo: &Geometry) -> f64 {
        let mut margin = f64::INFINITY;
        for (i, layer) in self.layers.iter().enumerate() {
            match (layer, &geo.layers[i], &tape.caches[i]) {
                (Layer::GConv(l), _, Cache::Conv { pre }) => {
                    for ((_, _, m), &v) in pre.indexed_iter() {
                        margin = margin.min((v + l.kernel.bias()[m]).abs());
                    }
                }
                (Layer::Relu, _, _) => {
                    margin = tape.inputs[i].iter().fold(margin, |acc, v| acc.min(v.abs()));
                }
                (Layer::MaxPool(_), LayerGeometry::Pool(plan), _) => {
                    let x = &tape.inputs[i];
                    let (b, _, c) = x.dim();
                    for patch in 0..plan.patch_count() {
                        let members = plan.members(patch);
                        if members.len() < 2 {
                            continue;
                        }
                        for e in 0..b {
                            for ch in 0..c {
                                let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                                for &u in members {
                                    let v = x[[e, u as usize, ch]];
                                    if v > top {
                                        second = top;
                                        top = v;
                                    } else if v > second {
                                        second = v;
                                    }
                                }
                                // an all-zero patch sits behind clamped ReLUs and has no live tie
                                if top != 0.0 {
                                    margin = margin.min(top - second);
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Per-entry cross-entropy losses and the gradient of
    /// `sum(losses) / scale`.
    pub fn loss_and_gradients(
        &self,
        input: ArrayView3<f64>,
        labels: &[usize],
        geo: &Geometry,
        scale: f64,
    ) -> Result<(Vec<f64>, Gradients)> {
        let (logits, tape) = self.forward(input, geo)?;
        let (losses, probs) = softmax_xent_forward(logits.view(), labels)?;
        let d_logits = softmax_xent_backward(probs.view(), labels, scale);
        let (grads, _) = self.backward(&tape, geo, d_logits.view())?;
        Ok((losses, grads))
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::GConv(g) => LayerGrad::Conv {
                        d_weights: Array3::zeros(g.kernel.weights().dim()),
                        d_bias: Array1::zeros(g.kernel.bias().len()),
                    },
                    Layer::Dense(d) => LayerGrad::Dense {
                        d_weights: Array2::zeros(d.weights.dim()),
                        d_bias: Array1::zeros(d.bias.len()),
                    },
                    _ => LayerGrad::None,
                })
                .collect(),
        }
    }

    /// Visits each parameter block with its gradient and optimizer state.
    pub fn for_each_param(
        &mut self,
        grads: &Gradients,
        state: &mut Gradients,
        mut f: impl FnMut(ParamKind, &mut [f64], &[f64], &mut [f64]),
    ) {
        for ((layer, g), s) in self.layers.iter_mut().zip(&grads.layers).zip(state.layers.iter_mut()) {
            match (layer, g, s) {
                (
                    Layer::GConv(l),
                    LayerGrad::Conv { d_weights, d_bias },
                    LayerGrad::Conv { d_weights: vw, d_bias: vb },
                ) => {
                    f(ParamKind::Weight, slice_mut(l.kernel.weights_mut()), slice(d_weights), slice_mut(vw));
                    f(ParamKind::Bias, slice_mut(l.kernel.bias_mut()), slice(d_bias), slice_mut(vb));
                }
                (
                    Layer::Dense(l),
                    LayerGrad::Dense { d_weights, d_bias },
                    LayerGrad::Dense { d_weights: vw, d_bias: vb },
                ) => {
                    f(ParamKind::Weight, slice_mut(&mut l.weights), slice(d_weights), slice_mut(vw));
                    f(ParamKind::Bias, slice_mut(&mut l.bias), slice(d_bias), slice_mut(vb));
                }
                _ => {}
            }
        }
    }

    /// All parameters in the order used by [`Gradients::flatten`].
    pub fn param_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count_params());
        for l in &self.layers {
            match l {
                Layer::GConv(g) => {
                    out.extend(g.kernel.weights().iter());
                    out.extend(g.kernel.bias().iter());
                }
                Layer::Dense(d) => {
                    out.extend(d.weights.iter());
                    out.extend(d.bias.iter());
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_param_vector(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.count_params() {
            return Err(GconvError::LengthMismatch {
                what: "parameter vector",
                expected: self.count_params(),
                actual: values.len(),
            });
        }
        let mut rest = values;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for l in &mut self.layers {
            match l {
                Layer::GConv(g) => {
                    take(slice_mut(g.kernel.weights_mut()));
                    take(slice_mut(g.kernel.bias_mut()));
                }
                Layer::Dense(d) => {
                    take(slice_mut(&mut d.weights));
                    take(slice_mut(&mut d.bias));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Index of the largest logit per row (first on ties).
pub fn argmax_rows(logits: ArrayView2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
