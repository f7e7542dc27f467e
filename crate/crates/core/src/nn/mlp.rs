use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, LayerGrads};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Shape and seed of a dense feed-forward network.
///
/// `layer_sizes` is the full chain `[in, h1, ..., out]`. Hidden layers use
/// `hidden_activation`; the final layer uses `output_activation` (identity
/// by default, so the network emits raw pre-activations for heads applied
/// downstream).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation, seed: u64) -> Self {
        Self {
            layer_sizes,
            hidden_activation,
            output_activation: Activation::Identity,
            seed,
        }
    }

    pub fn with_output_activation(mut self, activation: Activation) -> Self {
        self.output_activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "an MLP needs at least one layer; layer_sizes {:?}",
                self.layer_sizes
            )));
        }
        if let Some(bad) = self.layer_sizes.iter().find(|&&s| s == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer size must be >= 1, got {bad} in {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Values recorded during one forward pass, sufficient for an exact
/// backward pass through the same network.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    pub input: Vec<f64>,
    /// Per layer: pre-activations.
    pub zs: Vec<Vec<f64>>,
    /// Per layer: post-activation outputs.
    pub outs: Vec<Vec<f64>>,
}

/// Gradient buffers shaped like one [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

/// Builds a network from a spec. Deterministic given the seed; weights are
/// zero-mean uniform scaled by fan-in, biases zero.
pub fn init_mlp(spec: &MlpSpec) -> Result<Mlp> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, 0);
    let n_layers = spec.layer_sizes.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let act = if i + 1 == n_layers {
            spec.output_activation
        } else {
            spec.hidden_activation
        };
        layers.push(DenseLayer::init(
            spec.layer_sizes[i],
            spec.layer_sizes[i + 1],
            act,
            &mut rng,
        )?);
    }
    Ok(Mlp { layers })
}

impl Mlp {
    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Forward pass recording a tape. Errors on dimension mismatch or
    /// non-finite input.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        if input.len() != self.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input length {} does not match network in_dim {}",
                input.len(),
                self.in_dim()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut tape = MlpTape {
            input: input.to_vec(),
            zs: Vec::with_capacity(self.layers.len()),
            outs: Vec::with_capacity(self.layers.len()),
        };
        let mut current = input;
        for layer in &self.layers {
            let mut z = Vec::new();
            let mut out = Vec::new();
            layer.forward_into(current, &mut z, &mut out);
            tape.zs.push(z);
            tape.outs.push(out);
            current = tape.outs.last().unwrap();
        }
        let output = tape.outs.last().cloned().unwrap_or_else(|| input.to_vec());
        Ok((output, tape))
    }

    /// Forward pass without a tape, for frozen-model inference.
    pub fn forward_inference(&self, input: &[f64]) -> Vec<f64> {
        let mut current = input.to_vec();
        let mut z = Vec::new();
        let mut out = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&current, &mut z, &mut out);
            std::mem::swap(&mut current, &mut out);
        }
        current
    }

    /// Reverse accumulation through the recorded tape. Adds parameter
    /// gradients into `grads` and returns the gradient of the input vector.
    /// Parameters not touched by the loss keep a zero gradient.
    pub fn backward(&self, tape: &MlpTape, d_output: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        debug_assert_eq!(self.layers.len(), grads.layers.len());
        let mut d_out = d_output.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = if idx == 0 {
                &tape.input
            } else {
                &tape.outs[idx - 1]
            };
            let mut d_input = vec![0.0; layer.in_dim];
            layer.backward_accumulate(
                input,
                &tape.zs[idx],
                &tape.outs[idx],
                &d_out,
                &mut grads.layers[idx],
                &mut d_input,
            );
            d_out = d_input;
        }
        d_out
    }
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp.layers.iter().map(LayerGrads::zeros_like).collect(),
        }
    }
}
