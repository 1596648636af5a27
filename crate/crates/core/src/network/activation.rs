//! ReLU with the layer bias fused in, `g = max(0, f + b)`.

use ndarray::{Array1, Array3, ArrayView1, ArrayView3, Axis, Zip};

use crate::error::{GconvError, Result};

fn check(pre: &ArrayView3<f64>, bias: &ArrayView1<f64>) -> Result<()> {
    if pre.len_of(Axis(2)) != bias.len() {
        return Err(GconvError::Shape(format!(
            "bias has {} entries, activations have {} feature maps",
            bias.len(),
            pre.len_of(Axis(2))
        )));
    }
    Ok(())
}

pub fn relu_bias_forward(pre: ArrayView3<f64>, bias: ArrayView1<f64>) -> Result<Array3<f64>> {
    check(&pre, &bias)?;
    let mut out = pre.to_owned();
    for mut lane in out.lanes_mut(Axis(2)) {
        for (v, b) in lane.iter_mut().zip(bias.iter()) {
            *v = (*v + b).max(0.0);
        }
    }
    Ok(out)
}

/// Returns `delta = upstream * relu'(pre + bias)` and the bias gradient
/// `sum over entries and points of delta`. The derivative at exactly zero is 0.
pub fn relu_bias_backward(
    pre: ArrayView3<f64>,
    bias: ArrayView1<f64>,
    upstream: ArrayView3<f64>,
) -> Result<(Array3<f64>, Array1<f64>)> {
    check(&pre, &bias)?;
    if pre.dim() != upstream.dim() {
        return Err(GconvError::Shape(format!(
            "upstream {:?} vs activations {:?}",
            upstream.dim(),
            pre.dim()
        )));
    }
    let mut delta = upstream.to_owned();
    let mut d_bias = Array1::zeros(bias.len());
    for (mut d_lane, p_lane) in delta.lanes_mut(Axis(2)).into_iter().zip(pre.lanes(Axis(2))) {
        for (m, (d, p)) in d_lane.iter_mut().zip(p_lane.iter()).enumerate() {
            if p + bias[m] <= 0.0 {
                *d = 0.0;
            }
            d_bias[m] += *d;
        }
    }
    Ok((delta, d_bias))
}

pub fn relu_forward(x: ArrayView3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: ArrayView3<f64>, upstream: ArrayView3<f64>) -> Array3<f64> {
    let mut out = upstream.to_owned();
    Zip::from(&mut out).and(&x).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    out
}
