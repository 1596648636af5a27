use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{GconvError, Result};

/// Fully connected layer, `out = in · Wᵀ + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(GconvError::LengthMismatch {
                what: "dense bias vs outputs",
                expected: weights.nrows(),
                actual: bias.len(),
            });
        }
        Ok(Self { weights, bias })
    }

    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weights: Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-limit..limit)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.inputs() {
            return Err(GconvError::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                input.ncols()
            )));
        }
        Ok(input.dot(&self.weights.t()) + &self.bias)
    }

    /// Returns `(d_input, d_weights, d_bias)`.
    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        upstream: ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let d_input = upstream.dot(&self.weights);
        let d_weights = upstream.t().dot(&input);
        let d_bias = upstream.sum_axis(Axis(0));
        (d_input, d_weights, d_bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_passthrough() {
        let layer = DenseLayer::new(Array2::eye(3), Array1::zeros(3)).unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, 4.0]];
        assert_eq!(layer.forward(x.view()).unwrap(), x);
        assert!(layer.forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn backward_by_hand() {
        let layer = DenseLayer::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], array![0.0, 1.0, 2.0]).unwrap();
        let x = array![[1.0, -1.0]];
        assert_eq!(layer.forward(x.view()).unwrap(), array![[-1.0, 0.0, 1.0]]);
        let up = array![[1.0, 0.0, -1.0]];
        let (dx, dw, db) = layer.backward(x.view(), up.view());
        assert_eq!(dx, array![[-4.0, -4.0]]);
        assert_eq!(dw, array![[1.0, -1.0], [0.0, 0.0], [-1.0, 1.0]]);
        assert_eq!(db, array![1.0, 0.0, -1.0]);
        assert_eq!(layer.param_count(), 9);
    }
}
