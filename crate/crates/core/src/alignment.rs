//! Alignment between the selection policy and the sub-distribution losses.
//!
//! From the per-example loss vector `Q` the alignment mechanism derives two
//! supervision targets for the selection policy `alpha`:
//!
//! - a hard pseudo label: one-hot at `argmin(Q)`, scored with a
//!   focal-weighted cross-entropy `-(1 - alpha_c)^2 ln(alpha_c)`,
//! - a soft pseudo label: `omega = softmax(-Q)`, scored with the KL
//!   divergence `sum omega_i ln(omega_i / alpha_i)`.
//!
//! Both labels are treated as constants during backpropagation (the
//! stop-gradient can be lifted with a flag for comparison). Probabilities
//! are clamped at `EPS_LOG` inside every logarithm.

use serde::{Deserialize, Serialize};

use crate::selection::{argmin, softmax};

/// Lower clamp applied to probabilities inside logarithms.
pub const EPS_LOG: f64 = 1e-12;

/// Hard and soft supervision targets derived from one loss vector.
#[derive(Debug, Clone)]
pub struct PseudoLabels {
    /// Index of the one-hot hard label (argmin of the losses).
    pub hard: usize,
    /// Soft label `softmax(-Q)`; sums to 1.
    pub soft: Vec<f64>,
}

pub fn pseudo_labels(q: &[f64]) -> PseudoLabels {
    PseudoLabels {
        hard: hard_pseudo_label(q),
        soft: soft_pseudo_label(q),
    }
}

/// One-hot position: the sub-distribution with the smallest loss, lowest
/// index on ties.
pub fn hard_pseudo_label(q: &[f64]) -> usize {
    argmin(q)
}

/// `softmax(-Q)` with max subtraction: smaller loss, larger weight.
pub fn soft_pseudo_label(q: &[f64]) -> Vec<f64> {
    let negated: Vec<f64> = q.iter().map(|&v| -v).collect();
    softmax(&negated)
}

/// Focal-weighted cross-entropy against the hard label:
/// `-(1 - alpha_c)^2 ln(alpha_c)`, clamped inside the log.
pub fn focal_ce(hard: usize, alpha: &[f64]) -> f64 {
    let a = alpha[hard];
    let focal = (1.0 - a) * (1.0 - a);
    -focal * a.max(EPS_LOG).ln()
}

/// Gradient of [`focal_ce`] with respect to `alpha`.
pub fn focal_ce_grad(hard: usize, alpha: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; alpha.len()];
    let a = alpha[hard];
    let clamped = a.max(EPS_LOG);
    let mut g = 2.0 * (1.0 - a) * clamped.ln();
    if a > EPS_LOG {
        g -= (1.0 - a) * (1.0 - a) / clamped;
    }
    grad[hard] = g;
    grad
}

/// `KL(omega || alpha)`, skipping zero-weight terms, with `alpha` clamped
/// inside the log. Zero iff the distributions match.
pub fn kl_loss(omega: &[f64], alpha: &[f64]) -> f64 {
    omega
        .iter()
        .zip(alpha)
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &a)| w * (w.ln() - a.max(EPS_LOG).ln()))
        .sum()
}

/// Gradient of [`kl_loss`] with respect to `alpha` (labels held constant).
pub fn kl_grad_alpha(omega: &[f64], alpha: &[f64]) -> Vec<f64> {
    omega
        .iter()
        .zip(alpha)
        .map(|(&w, &a)| {
            if w > 0.0 && a > EPS_LOG {
                -w / a
            } else {
                0.0
            }
        })
        .collect()
}

/// Gradient of [`kl_loss`] with respect to the loss vector `Q` when the
/// soft label is not detached: `omega = softmax(-Q)`.
pub fn kl_grad_q(omega: &[f64], alpha: &[f64]) -> Vec<f64> {
    // d KL / d omega_j = ln(omega_j / alpha_j) + 1; chain through the
    // softmax-of-negated-losses Jacobian.
    let d_omega: Vec<f64> = omega
        .iter()
        .zip(alpha)
        .map(|(&w, &a)| (w.max(EPS_LOG).ln() - a.max(EPS_LOG).ln()) + 1.0)
        .collect();
    let dot: f64 = d_omega.iter().zip(omega).map(|(d, &w)| d * w).sum();
    omega
        .iter()
        .zip(&d_omega)
        .map(|(&w, &d)| w * (dot - d))
        .collect()
}

/// Weighted sum of the per-sub-distribution losses. With a hard one-hot
/// weight this equals the selected entry exactly.
pub fn weighted_dlm_loss(weights: &[f64], q: &[f64]) -> f64 {
    weights.iter().zip(q).map(|(w, l)| w * l).sum()
}

/// Per-batch loss components, all means in nats.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Weighted sub-distribution likelihood term.
    pub dlm: f64,
    /// Focal cross-entropy alignment term.
    pub ce: f64,
    /// KL alignment term.
    pub kl: f64,
    /// `dlm + ce + kl`.
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_sums(sum_dlm: f64, sum_ce: f64, sum_kl: f64, n: usize) -> Self {
        let n = n as f64;
        let dlm = sum_dlm / n;
        let ce = sum_ce / n;
        let kl = sum_kl / n;
        Self {
            dlm,
            ce,
            kl,
            total: dlm + ce + kl,
        }
    }
}

/// Batch mean of per-example `(dlm, ce, kl)` terms.
pub fn total_loss(per_example: &[(f64, f64, f64)]) -> LossBreakdown {
    let n = per_example.len().max(1);
    let (mut s_dlm, mut s_ce, mut s_kl) = (0.0, 0.0, 0.0);
    for &(d, c, k) in per_example {
        s_dlm += d;
        s_ce += c;
        s_kl += k;
    }
    LossBreakdown::from_sums(s_dlm, s_ce, s_kl, n)
}
