//! Central finite-difference checks of the analytic gradients.
//!
//! Relative error is `|a - n| / max(|a|, |n|, REL_FLOOR)`; the floor keeps
//! gradients that are zero up to rounding from dominating the report.

use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{regular_grid_points, Point};
use crate::error::{GconvError, Result};
use crate::experiment::displace;
use crate::gconv::{conv_backward, conv_forward, Kernel};
use crate::network::{softmax_xent_backward, softmax_xent_forward, Geometry, LayerKind, Network, NetworkConfig};
use crate::receptive::{build_rect_graph, ReceptiveGraph, RectWindow};

pub const STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-3;
/// Instances closer than this to a ReLU kink or a max tie are redrawn.
pub const TIE_MARGIN: f64 = 1e-3;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    /// Candidate instances redrawn for sitting too close to a kink.
    pub rejected: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

fn central(mut f: impl FnMut(f64) -> Result<f64>, x: f64) -> Result<f64> {
    Ok((f(x + STEP)? - f(x - STEP)?) / (2.0 * STEP))
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), lo: f64, hi: f64) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

fn conv_loss(input: &Array3<f64>, graph: &ReceptiveGraph, kernel: &Kernel) -> Result<f64> {
    let out = conv_forward(input.view(), graph, kernel)?;
    let bias = kernel.bias();
    Ok(out
        .indexed_iter()
        .map(|((_, _, m), &v)| 0.5 * (v + bias[m]).powi(2))
        .sum())
}

/// `L = sum (conv(x) + b)^2 / 2` on random 10-point clouds; checks every
/// weight, bias and input gradient.
pub fn conv_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, points, channels, maps) = (2, 10, 2, 3);
    let mut report = SuiteReport {
        name: "conv layer",
        instances,
        rejected: 0,
        checked: 0,
        max_rel_error: 0.0,
        tolerance: 1e-6,
    };
    for _ in 0..instances {
        let cloud: Vec<Point> = (0..points)
            .map(|_| Point::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)))
            .collect();
        let window = RectWindow::new(1, 1, 1.0)?;
        let graph = build_rect_graph(&cloud, &window);
        let n = window.slot_count();
        let mut kernel = Kernel::new(
            uniform(&mut rng, (maps, channels, n), -0.5, 0.5),
            Array1::from_shape_simple_fn(maps, || rng.random_range(-0.5..0.5)),
        )?;
        let mut input = uniform(&mut rng, (batch, points, channels), -1.0, 1.0);

        let out = conv_forward(input.view(), &graph, &kernel)?;
        let mut upstream = out;
        for ((_, _, m), v) in upstream.indexed_iter_mut() {
            *v += kernel.bias()[m];
        }
        let g = conv_backward(input.view(), &graph, &kernel, upstream.view())?;
        let mut worst = 0.0f64;

        for idx in 0..kernel.weights().len() {
            let x0 = kernel.weights().as_slice().expect("contiguous")[idx];
            let num = central(
                |x| {
                    kernel.weights_mut().as_slice_mut().expect("contiguous")[idx] = x;
                    conv_loss(&input, &graph, &kernel)
                },
                x0,
            )?;
            kernel.weights_mut().as_slice_mut().expect("contiguous")[idx] = x0;
            worst = worst.max(rel_error(g.d_weights.as_slice().expect("contiguous")[idx], num));
        }
        for m in 0..maps {
            let x0 = kernel.bias()[m];
            let num = central(
                |x| {
                    kernel.bias_mut()[m] = x;
                    conv_loss(&input, &graph, &kernel)
                },
                x0,
            )?;
            kernel.bias_mut()[m] = x0;
            worst = worst.max(rel_error(g.d_bias[m], num));
        }
        for idx in 0..input.len() {
            let x0 = input.as_slice().expect("contiguous")[idx];
            let num = central(
                |x| {
                    input.as_slice_mut().expect("contiguous")[idx] = x;
                    conv_loss(&input, &graph, &kernel)
                },
                x0,
            )?;
            input.as_slice_mut().expect("contiguous")[idx] = x0;
            worst = worst.max(rel_error(g.d_input.as_slice().expect("contiguous")[idx], num));
        }
        report.checked += kernel.param_count() + input.len();
        report.max_rel_error = report.max_rel_error.max(worst);
    }
    Ok(report)
}

/// Conv (3 maps, 3x3 window) + 2x2 pool + 10 hidden + 3-way softmax on a
/// displaced 6x6 grid.
pub fn toy_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        layers: vec![LayerKind::GConv, LayerKind::Pool, LayerKind::Dense],
        feature_maps: vec![3],
        hidden: vec![10],
        p: 1,
        q: 1,
        mu: 1.0,
        pool_side: 2.0,
        width: 6,
        height: 6,
        channels: 1,
        classes: 3,
        seed,
    }
}

fn mean_loss(net: &Network, input: &Array3<f64>, labels: &[usize], geo: &Geometry) -> Result<f64> {
    let logits = net.predict(input.view(), geo)?;
    let (losses, _) = softmax_xent_forward(logits.view(), labels)?;
    Ok(losses.iter().sum::<f64>() / labels.len() as f64)
}

/// Mean cross-entropy of the toy stack; checks every parameter and input
/// gradient.
pub fn network_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = 2;
    let mut report = SuiteReport {
        name: "toy network",
        instances,
        rejected: 0,
        checked: 0,
        max_rel_error: 0.0,
        tolerance: 1e-5,
    };
    let mut accepted = 0;
    while accepted < instances {
        if report.rejected > 200 * instances.max(1) {
            return Err(GconvError::InvalidParameter(
                "could not draw instances away from kinks".into(),
            ));
        }
        let cfg = toy_config(rng.random());
        let mut net = Network::from_config(&cfg)?;
        let domain = displace(&regular_grid_points(6, 6), 0.3, &mut rng)?;
        let geo = net.prepare(&domain);
        let mut input = uniform(&mut rng, (batch, 36, 1), 0.0, 1.0);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();

        let (logits, tape) = net.forward(input.view(), &geo)?;
        if net.kink_margin(&tape, &geo) < TIE_MARGIN {
            report.rejected += 1;
            continue;
        }
        accepted += 1;
        let (_, probs) = softmax_xent_forward(logits.view(), &labels)?;
        let d_logits = softmax_xent_backward(probs.view(), &labels, batch as f64);
        let (grads, d_input) = net.backward(&tape, &geo, d_logits.view())?;
        let analytic = grads.flatten();

        let mut params = net.param_vector();
        let mut worst = 0.0f64;
        for i in 0..params.len() {
            let x0 = params[i];
            let num = central(
                |x| {
                    params[i] = x;
                    net.set_param_vector(&params)?;
                    mean_loss(&net, &input, &labels, &geo)
                },
                x0,
            )?;
            params[i] = x0;
            worst = worst.max(rel_error(analytic[i], num));
        }
        net.set_param_vector(&params)?;
        for idx in 0..input.len() {
            let x0 = input.as_slice().expect("contiguous")[idx];
            let num = central(
                |x| {
                    input.as_slice_mut().expect("contiguous")[idx] = x;
                    mean_loss(&net, &input, &labels, &geo)
                },
                x0,
            )?;
            input.as_slice_mut().expect("contiguous")[idx] = x0;
            worst = worst.max(rel_error(d_input.as_slice().expect("contiguous")[idx], num));
        }
        report.checked += params.len() + input.len();
        report.max_rel_error = report.max_rel_error.max(worst);
    }
    Ok(report)
}

/// Both suites with `instances` instances each.
pub fn run_all(seed: u64, instances: usize) -> Result<Vec<SuiteReport>> {
    Ok(vec![conv_suite(seed, instances)?, network_suite(seed, instances)?])
}
