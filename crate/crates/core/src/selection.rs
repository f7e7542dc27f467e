//! Sub-distribution selection.
//!
//! The selection network maps the shared representation to logits over the
//! L sub-distributions; softmax turns them into the assignment policy
//! `alpha`. During training, straight-through Gumbel-softmax draws a hard
//! one-hot mask whose forward value selects exactly one sub-distribution
//! while gradients flow through the relaxed soft weights. At inference the
//! choice is the plain argmax of `alpha`, so training-time and
//! inference-time selection agree once the noise vanishes.
//!
//! Ties break toward the lowest index everywhere.

use rand::Rng;

use crate::error::{Error, Result};

/// Everything the selection step produces for one example.
#[derive(Debug, Clone)]
pub struct SelectionOutput {
    /// Assignment probabilities, `sum = 1`, each in (0, 1).
    pub alpha: Vec<f64>,
    /// Gumbel noise used this step (empty when noise is disabled).
    pub gumbel: Vec<f64>,
    /// Relaxed soft weights, `sum = 1`.
    pub soft: Vec<f64>,
    /// Hard one-hot mask.
    pub mask: Vec<f64>,
    /// Index of the selected sub-distribution.
    pub chosen: usize,
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln(softmax(logits))` computed directly from the logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits
        .iter()
        .map(|&z| (z - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the first minimum.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Standard Gumbel variate from a uniform draw: `-ln(-ln(u))`.
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// `len` i.i.d. standard Gumbel draws. Uniform draws that land exactly on
/// 0 are re-drawn (the generator never returns 1).
pub fn sample_gumbel<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let mut u: f64 = rng.random();
            while u == 0.0 {
                u = rng.random();
            }
            gumbel_from_uniform(u)
        })
        .collect()
}

/// Straight-through Gumbel-softmax.
///
/// Returns the relaxed weights `softmax((ln alpha + g) / tau)`, the hard
/// one-hot mask at `argmax(ln alpha + g)`, and the chosen index. The caller
/// uses the mask as the forward value and the soft weights for gradients.
pub fn gumbel_softmax_st(
    alpha: &[f64],
    gumbel: &[f64],
    tau: f64,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    if tau <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if alpha.len() != gumbel.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities vs {} noise draws",
            alpha.len(),
            gumbel.len()
        )));
    }
    let perturbed: Vec<f64> = alpha
        .iter()
        .zip(gumbel)
        .map(|(&a, &g)| a.ln() + g)
        .collect();
    let scaled: Vec<f64> = perturbed.iter().map(|&v| v / tau).collect();
    let soft = softmax(&scaled);
    let chosen = argmax(&perturbed);
    let mut mask = vec![0.0; alpha.len()];
    mask[chosen] = 1.0;
    Ok((soft, mask, chosen))
}

/// Inference-time selection: deterministic argmax of `alpha`, no noise.
pub fn select_distribution(alpha: &[f64]) -> usize {
    argmax(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let alpha = softmax(&[1.3, 1.3, 1.3, 1.3]);
        for a in &alpha {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[0.1, -0.4, 2.0]);
        let b = softmax(&[100.1, 99.6, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_substitution_example() {
        let alpha = softmax(&[0.0, 3f64.ln()]);
        assert!((alpha[0] - 0.25).abs() < 1e-15);
        assert!((alpha[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let logits = [0.4, -1.2, 2.2, 0.0];
        let ls = log_softmax(&logits);
        let s = softmax(&logits);
        for (l, p) in ls.iter().zip(&s) {
            assert!((l - p.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn gumbel_transform_substitutions() {
        assert!((gumbel_from_uniform(1.0 / std::f64::consts::E) - 0.0).abs() < 1e-15);
        assert!((gumbel_from_uniform((-std::f64::consts::E).exp()) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn gumbel_mean_matches_euler_mascheroni() {
        // Mean of the standard Gumbel is the Euler-Mascheroni constant;
        // std is pi/sqrt(6). Check within 3 standard errors at n = 1e6.
        const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;
        let n = 1_000_000;
        let mut rng = seeded_rng(42, 0);
        let draws = sample_gumbel(n, &mut rng);
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = std::f64::consts::PI / 6f64.sqrt() / (n as f64).sqrt();
        assert!(
            (mean - EULER_MASCHERONI).abs() < 3.0 * se,
            "mean {mean}, 3se {}",
            3.0 * se
        );
    }

    #[test]
    fn straight_through_uniform_case_ties_to_lowest_index() {
        let alpha = vec![0.25; 4];
        let (soft, mask, chosen) = gumbel_softmax_st(&alpha, &[0.0; 4], 1.0).unwrap();
        for s in &soft {
            assert!((s - 0.25).abs() < 1e-15);
        }
        assert_eq!(chosen, 0);
        assert_eq!(mask, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn straight_through_closed_form_example() {
        let (soft, mask, chosen) = gumbel_softmax_st(&[0.9, 0.1], &[0.0, 0.0], 0.1).unwrap();
        let expected0 = 0.9f64.powi(10) / (0.9f64.powi(10) + 0.1f64.powi(10));
        assert!((soft[0] - expected0).abs() < 1e-12);
        assert!((soft[0] - (1.0 - 2.87e-10)).abs() < 1e-11);
        assert_eq!(mask, vec![1.0, 0.0]);
        assert_eq!(chosen, 0);
    }

    #[test]
    fn lower_temperature_sharpens_the_soft_weights() {
        let alpha = [0.5, 0.3, 0.2];
        let g = [0.1, 0.6, -0.2];
        let mut last_max = 0.0;
        for tau in [4.0, 2.0, 1.0, 0.5, 0.25, 0.1, 1e-2, 1e-3] {
            let (soft, _, _) = gumbel_softmax_st(&alpha, &g, tau).unwrap();
            let m = soft.iter().copied().fold(0.0, f64::max);
            assert!(m > last_max, "tau {tau}: {m} vs {last_max}");
            last_max = m;
        }
        assert!(last_max > 0.99);
    }

    #[test]
    fn soft_weights_sum_to_one_and_ignore_alpha_scale() {
        let alpha = [0.6, 0.3, 0.1];
        let scaled: Vec<f64> = alpha.iter().map(|a| a * 7.5).collect();
        let g = [0.3, -0.8, 0.05];
        let (a_soft, _, a_s) = gumbel_softmax_st(&alpha, &g, 0.7).unwrap();
        let (b_soft, _, b_s) = gumbel_softmax_st(&scaled, &g, 0.7).unwrap();
        assert!((a_soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a_s, b_s);
        for (x, y) in a_soft.iter().zip(&b_soft) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        assert!(gumbel_softmax_st(&[1.0], &[0.0], 0.0).is_err());
        assert!(gumbel_softmax_st(&[1.0], &[0.0], -1.0).is_err());
    }

    #[test]
    fn inference_selection_is_argmax_with_low_tie() {
        assert_eq!(select_distribution(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(select_distribution(&[0.5, 0.5]), 0);
    }

    #[test]
    fn selection_is_invariant_to_monotone_logit_transforms() {
        let logits = [0.3, -1.0, 2.4, 0.9];
        let base = select_distribution(&softmax(&logits));
        let transformed: Vec<f64> = logits.iter().map(|&z| 3.0 * z + 10.0).collect();
        assert_eq!(select_distribution(&softmax(&transformed)), base);
    }

    #[test]
    fn frozen_noise_selection_matches_inference() {
        // With g = 0 the training-time choice is argmax(ln alpha), which is
        // the inference-time argmax(alpha), at any temperature.
        let alpha = softmax(&[0.2, 1.4, -0.3]);
        let (_, _, train_choice) = gumbel_softmax_st(&alpha, &[0.0; 3], 1e-6).unwrap();
        assert_eq!(train_choice, select_distribution(&alpha));
    }
}
