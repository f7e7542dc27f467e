use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second-moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(shapes: &[usize], hyper: AdamHyper) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            hyper,
        }
    }
}

/// What happened to one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained a non-finite value; parameters and state were
    /// left untouched.
    SkippedNonFinite,
}

/// One bias-corrected Adam step over a list of parameter tensors.
///
/// Entries whose gradient is exactly zero are skipped entirely - their
/// moments and values do not move. Embedding rows untouched by a batch and
/// networks excluded from a loss therefore stay frozen. The step counter
/// increments once per applied step and is shared by all tensors.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<StepOutcome> {
    check_shapes(params, grads, state)?;
    if learning_rate <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    if grads
        .iter()
        .any(|g| g.iter().any(|value| !value.is_finite()))
    {
        return Ok(StepOutcome::SkippedNonFinite);
    }

    state.step += 1;
    let t = state.step as i32;
    let AdamHyper {
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);

    for (ti, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        for i in 0..param.len() {
            let g = grad[i];
            if g == 0.0 {
                continue;
            }
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            param[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(StepOutcome::Applied)
}

/// Plain gradient step `p -= lr * g`, kept for fidelity comparisons.
pub fn sgd_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    learning_rate: f64,
) -> Result<StepOutcome> {
    if params.len() != grads.len()
        || params
            .iter()
            .zip(grads)
            .any(|(p, g)| p.len() != g.len())
    {
        return Err(Error::DimensionMismatch(
            "parameter/gradient tensor lists disagree".into(),
        ));
    }
    if grads
        .iter()
        .any(|g| g.iter().any(|value| !value.is_finite()))
    {
        return Ok(StepOutcome::SkippedNonFinite);
    }
    for (param, grad) in params.iter_mut().zip(grads) {
        for (p, g) in param.iter_mut().zip(grad.iter()) {
            *p -= learning_rate * g;
        }
    }
    Ok(StepOutcome::Applied)
}

fn check_shapes(params: &[&mut [f64]], grads: &[&[f64]], state: &AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch(format!(
            "tensor counts disagree: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor {i}: param {} vs grad {} vs state {}",
                p.len(),
                g.len(),
                m.len()
            )));
        }
    }
    Ok(())
}
