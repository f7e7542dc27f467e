use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{Error, Result};

/// A dense layer `y = activation(W x + b)` with row-major `(out, in)` weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Gradient buffers shaped like one [`DenseLayer`].
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// Zero-mean uniform weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        let limit = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        })
    }

    /// Computes pre-activations into `z` and outputs into `out`.
    pub fn forward_into(&self, input: &[f64], z: &mut Vec<f64>, out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.in_dim);
        z.clear();
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            z.push(acc);
            out.push(self.activation.forward(acc));
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    ///
    /// `input`, `z`, `out` are the values recorded by `forward_into`;
    /// `d_out` is the upstream gradient.
    pub fn backward_accumulate(
        &self,
        input: &[f64],
        z: &[f64],
        out: &[f64],
        d_out: &[f64],
        grads: &mut LayerGrads,
        d_input: &mut [f64],
    ) {
        debug_assert_eq!(d_out.len(), self.out_dim);
        debug_assert_eq!(d_input.len(), self.in_dim);
        d_input.fill(0.0);
        for o in 0..self.out_dim {
            let dz = d_out[o] * self.activation.derivative(z[o], out[o]);
            if dz == 0.0 {
                continue;
            }
            grads.bias[o] += dz;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                grads.weights[row + i] += dz * input[i];
                d_input[i] += self.weights[row + i] * dz;
            }
        }
    }
}

impl LayerGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}
