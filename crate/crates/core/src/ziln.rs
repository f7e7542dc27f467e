//! Zero-inflated log-normal sub-distribution networks.
//!
//! Each sub-distribution network (SDN) is a tower over the shared
//! representation emitting three head pre-activations `(a, b, c)` that map
//! to the distribution parameters
//!
//! - `p = sigmoid(a)` - conversion probability,
//! - `mu = b` - log-normal location,
//! - `sigma = softplus(c) + SIGMA_FLOOR` - log-normal scale.
//!
//! The per-example negative log-likelihood is
//!
//! - converted: `-ln p + ln(y * sqrt(2*pi) * sigma) + (ln y - mu)^2 / (2 sigma^2)`
//! - not converted: `-ln(1 - p)`
//!
//! Training evaluates the likelihood through the head pre-activations
//! (`-ln p = softplus(-a)` and `-ln(1-p) = softplus(a)`), which is the same
//! value as the closed form but stays finite when the sigmoid saturates.
//! All logs are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads, MlpTape};
use crate::nn::Activation;

/// Lower bound added to `softplus(c)` so the scale never reaches zero.
pub const SIGMA_FLOOR: f64 = 1e-6;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// One sub-distribution's parameter triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZilnParams {
    /// Conversion probability, in (0, 1).
    pub p: f64,
    /// Log-normal location.
    pub mu: f64,
    /// Log-normal scale, > 0.
    pub sigma: f64,
}

/// Head pre-activations behind one [`ZilnParams`].
#[derive(Debug, Clone, Copy)]
pub struct ZilnPreacts {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ZilnPreacts {
    pub fn params(&self) -> ZilnParams {
        ZilnParams {
            p: sigmoid(self.a),
            mu: self.b,
            sigma: softplus(self.c) + SIGMA_FLOOR,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    Activation::Sigmoid.forward(z)
}

#[inline]
fn softplus(z: f64) -> f64 {
    Activation::Softplus.forward(z)
}

/// Closed-form negative log-likelihood of one example under one
/// sub-distribution.
pub fn ziln_nll(params: &ZilnParams, y: f64, converted: bool) -> Result<f64> {
    if converted {
        if y <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "converted example must have a positive label, got {y}"
            )));
        }
        let resid = y.ln() - params.mu;
        Ok(-params.p.ln()
            + (y * (2.0 * std::f64::consts::PI).sqrt() * params.sigma).ln()
            + resid * resid / (2.0 * params.sigma * params.sigma))
    } else {
        Ok(-(1.0 - params.p).ln())
    }
}

/// Same likelihood evaluated from head pre-activations, plus its exact
/// gradient with respect to `(a, b, c)`.
pub fn ziln_nll_from_preacts(pre: &ZilnPreacts, y: f64, converted: bool) -> (f64, [f64; 3]) {
    if converted {
        let sigma = softplus(pre.c) + SIGMA_FLOOR;
        let resid = y.ln() - pre.b;
        let loss = softplus(-pre.a)
            + y.ln()
            + HALF_LN_TWO_PI
            + sigma.ln()
            + resid * resid / (2.0 * sigma * sigma);
        let d_a = -sigmoid(-pre.a);
        let d_b = -resid / (sigma * sigma);
        let d_sigma = 1.0 / sigma - resid * resid / (sigma * sigma * sigma);
        let d_c = d_sigma * sigmoid(pre.c);
        (loss, [d_a, d_b, d_c])
    } else {
        (softplus(pre.a), [sigmoid(pre.a), 0.0, 0.0])
    }
}

/// Point prediction: the zero-inflated log-normal expectation
/// `p * exp(mu + sigma^2 / 2)`. Overflowing exponents are clamped to the
/// largest finite value and logged.
pub fn ziln_expectation(params: &ZilnParams) -> f64 {
    let exponent = params.mu + params.sigma * params.sigma / 2.0;
    if exponent >= f64::MAX.ln() {
        log::warn!("expectation exponent {exponent} overflows; clamping prediction");
        return params.p * f64::MAX;
    }
    params.p * exponent.exp()
}

/// One sub-distribution network: a tower ending in the three head
/// pre-activations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sdn {
    pub tower: Mlp,
}

/// Tape for one SDN forward pass.
#[derive(Debug, Clone)]
pub struct SdnTape {
    pub mlp: MlpTape,
    pub preacts: ZilnPreacts,
}

impl Sdn {
    pub fn forward(&self, h: &[f64]) -> Result<(ZilnPreacts, SdnTape)> {
        let (out, mlp) = self.tower.forward(h)?;
        debug_assert_eq!(out.len(), 3);
        let preacts = ZilnPreacts {
            a: out[0],
            b: out[1],
            c: out[2],
        };
        Ok((preacts, SdnTape { mlp, preacts }))
    }

    pub fn forward_inference(&self, h: &[f64]) -> ZilnPreacts {
        let out = self.tower.forward_inference(h);
        ZilnPreacts {
            a: out[0],
            b: out[1],
            c: out[2],
        }
    }

    /// Backward from head gradients; returns the representation gradient.
    pub fn backward(&self, tape: &SdnTape, d_preacts: [f64; 3], grads: &mut MlpGrads) -> Vec<f64> {
        self.tower.backward(&tape.mlp, &d_preacts, grads)
    }
}
