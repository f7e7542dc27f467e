//! Ranking and error metrics.
//!
//! The normalized Gini coefficient orders labels by prediction (descending,
//! stable, so original order breaks ties), accumulates cumulative label
//! shares, and normalizes by the same statistic computed with the labels
//! themselves as the ordering key. 1 is a perfect ranking, -1 a perfectly
//! inverted one. Spearman's rho is the Pearson correlation of tie-averaged
//! ranks. Both are invariant under strictly increasing transforms of the
//! predictions; note that norm_gini is *not* symmetric in its arguments.

use serde::{Deserialize, Serialize};

use crate::data::EncodedExample;
use crate::error::{Error, Result};
use crate::model::Model;

/// Mean absolute error.
pub fn mae(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let sum: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).abs())
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Unnormalized Gini statistic of `labels` ordered by `key` descending
/// (stable): `(sum_i cumulative_label_share(i) - (n + 1) / 2) / n`.
fn gini_statistic(key: &[f64], labels: &[f64]) -> f64 {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key[b].partial_cmp(&key[a]).unwrap_or(std::cmp::Ordering::Equal));
    let total: f64 = labels.iter().sum();
    let mut cumulative = 0.0;
    let mut share_sum = 0.0;
    for &i in &order {
        cumulative += labels[i];
        share_sum += cumulative / total;
    }
    (share_sum - (n as f64 + 1.0) / 2.0) / n as f64
}

/// Normalized Gini coefficient of `labels` ranked by `predictions`.
pub fn norm_gini(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "need matching lengths >= 2, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    let first = labels[0];
    if labels.iter().all(|&y| y == first) {
        return Err(Error::DegenerateMetric(
            "all labels equal; ranking quality is undefined".into(),
        ));
    }
    Ok(gini_statistic(predictions, labels) / gini_statistic(labels, labels))
}

/// Tie-averaged (fractional) ranks, 1-based.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with averaged ranks on ties.
pub fn spearman_rho(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "need matching lengths >= 2, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    let rx = average_ranks(predictions);
    let ry = average_ranks(labels);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::DegenerateMetric(
            "zero rank variance; correlation is undefined".into(),
        ));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Evaluation report. Rank metrics are `None` when undefined (all labels
/// equal, or fewer than two positives for the positive-only variants).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub norm_gini: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub norm_gini_pos: Option<f64>,
    pub spearman_rho_pos: Option<f64>,
    pub n: usize,
    pub n_pos: usize,
}

impl MetricsReport {
    /// Flat `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let fmt = |v: &Option<f64>| match v {
            Some(x) => format!("{x}"),
            None => "undefined".to_string(),
        };
        format!(
            "mae={}\nnorm_gini={}\nspearman_rho={}\nnorm_gini_pos={}\nspearman_rho_pos={}\nn={}\nn_pos={}\n",
            self.mae,
            fmt(&self.norm_gini),
            fmt(&self.spearman_rho),
            fmt(&self.norm_gini_pos),
            fmt(&self.spearman_rho_pos),
            self.n,
            self.n_pos
        )
    }
}

/// Computes the report from raw prediction/label pairs.
pub fn report_from_predictions(predictions: &[f64], labels: &[f64]) -> Result<MetricsReport> {
    let n = labels.len();
    let mae = mae(predictions, labels)?;
    let norm_gini_all = norm_gini(predictions, labels).ok();
    let spearman_all = spearman_rho(predictions, labels).ok();

    let pos: Vec<usize> = (0..n).filter(|&i| labels[i] > 0.0).collect();
    let pos_preds: Vec<f64> = pos.iter().map(|&i| predictions[i]).collect();
    let pos_labels: Vec<f64> = pos.iter().map(|&i| labels[i]).collect();
    let (gini_pos, rho_pos) = if pos.len() >= 2 {
        (
            norm_gini(&pos_preds, &pos_labels).ok(),
            spearman_rho(&pos_preds, &pos_labels).ok(),
        )
    } else {
        (None, None)
    };

    Ok(MetricsReport {
        mae,
        norm_gini: norm_gini_all,
        spearman_rho: spearman_all,
        norm_gini_pos: gini_pos,
        spearman_rho_pos: rho_pos,
        n,
        n_pos: pos.len(),
    })
}

/// Runs the model's inference path over a dataset and scores it.
pub fn evaluate(model: &Model, dataset: &[EncodedExample]) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation dataset".into()));
    }
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    for ex in dataset {
        predictions.push(model.predict(ex)?);
        labels.push(ex.label);
    }
    report_from_predictions(&predictions, &labels)
}

/// Majority-mapping purity of sub-distribution assignments against hidden
/// cluster labels: each cluster maps to its most frequent assignment, and
/// purity is the fraction of examples matching their cluster's mapping.
pub fn selection_purity(assignments: &[usize], clusters: &[usize], l: usize, k: usize) -> f64 {
    assert_eq!(assignments.len(), clusters.len());
    let mut counts = vec![vec![0usize; l]; k];
    for (&s, &c) in assignments.iter().zip(clusters) {
        counts[c][s] += 1;
    }
    let matched: usize = counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    matched as f64 / assignments.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn mae_matches_element_loop_oracle() {
        let preds: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
        let labels: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos() * 8.0).collect();
        let mut acc = 0.0;
        for i in 0..50 {
            acc += (preds[i] - labels[i]).abs();
        }
        assert!((mae(&preds, &labels).unwrap() - acc / 50.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_scores_one_exactly() {
        let labels = [3.0, 1.0, 7.0, 0.0, 2.0];
        assert_eq!(norm_gini(&labels, &labels).unwrap(), 1.0);
        let monotone: Vec<f64> = labels.iter().map(|&y| 2.0 * y + 5.0).collect();
        assert_eq!(norm_gini(&monotone, &labels).unwrap(), 1.0);
    }

    #[test]
    fn reversed_ranking_scores_minus_one() {
        assert_eq!(norm_gini(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), -1.0);
        let labels = [0.0, 1.0, 2.0, 3.0];
        let reversed = [3.0, 2.0, 1.0, 0.0];
        assert!((norm_gini(&reversed, &labels).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_equal_labels_are_flagged() {
        assert!(matches!(
            norm_gini(&[1.0, 2.0], &[5.0, 5.0]),
            Err(Error::DegenerateMetric(_))
        ));
    }

    #[test]
    fn norm_gini_is_not_symmetric() {
        let preds = [0.4, 0.1, 0.9, 0.3];
        let labels = [1.0, 0.0, 2.0, 5.0];
        let forward = norm_gini(&preds, &labels).unwrap();
        let swapped = norm_gini(&labels, &preds).unwrap();
        assert!((forward - swapped).abs() > 1e-6);
    }

    #[test]
    fn spearman_cases() {
        let up = spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert!((up - 1.0).abs() < 1e-12);
        let down = spearman_rho(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap();
        assert!((down + 1.0).abs() < 1e-12);
        assert!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_is_symmetric() {
        let a = [0.3, 1.9, -0.7, 0.2, 0.2];
        let b = [5.0, 1.0, 2.0, 2.0, 7.0];
        let ab = spearman_rho(&a, &b).unwrap();
        let ba = spearman_rho(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-15);
    }

    #[test]
    fn rank_metrics_ignore_monotone_transforms() {
        let preds = [0.1, 0.7, 0.3, 0.9, 0.5];
        let labels = [0.0, 3.0, 1.0, 2.0, 1.5];
        let transformed: Vec<f64> = preds.iter().map(|&p: &f64| (4.0 * p + 1.0).exp()).collect();
        assert_eq!(
            norm_gini(&preds, &labels).unwrap(),
            norm_gini(&transformed, &labels).unwrap()
        );
        assert_eq!(
            spearman_rho(&preds, &labels).unwrap(),
            spearman_rho(&transformed, &labels).unwrap()
        );
    }

    #[test]
    fn report_on_all_zero_labels_flags_rank_metrics() {
        let report = report_from_predictions(&[0.5, 0.2, 0.9], &[0.0, 0.0, 0.0]).unwrap();
        assert!(report.norm_gini.is_none());
        assert!(report.spearman_rho.is_none());
        assert!(report.norm_gini_pos.is_none());
        assert_eq!(report.n_pos, 0);
        assert!((report.mae - (0.5 + 0.2 + 0.9) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn purity_counts_majority_mapping() {
        // Clusters 0 and 1 map to assignments 1 and 0 respectively; one
        // example strays.
        let assignments = [1, 1, 1, 0, 0, 1];
        let clusters = [0, 0, 0, 1, 1, 1];
        let purity = selection_purity(&assignments, &clusters, 2, 2);
        assert!((purity - 5.0 / 6.0).abs() < 1e-12);
    }

    // Independent oracles: an O(n^2) rank computation for Spearman and an
    // algebraic rank-position form of the Gini statistic.
    fn oracle_ranks(values: &[f64]) -> Vec<f64> {
        let n = values.len();
        (0..n)
            .map(|i| {
                let less = values.iter().filter(|&&v| v < values[i]).count();
                let equal = values.iter().filter(|&&v| v == values[i]).count();
                less as f64 + (equal as f64 + 1.0) / 2.0
            })
            .collect()
    }

    fn oracle_spearman(preds: &[f64], labels: &[f64]) -> f64 {
        let rx = oracle_ranks(preds);
        let ry = oracle_ranks(labels);
        let n = rx.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
        cov / (vx.sqrt() * vy.sqrt())
    }

    fn oracle_gini_statistic(key: &[f64], labels: &[f64]) -> f64 {
        // Stable descending position of element i under `key`: the number
        // of strictly greater keys, plus earlier equal keys.
        let n = key.len();
        let total: f64 = labels.iter().sum();
        let mut share_sum = 0.0;
        for i in 0..n {
            let mut position = 0usize;
            for j in 0..n {
                if key[j] > key[i] || (key[j] == key[i] && j < i) {
                    position += 1;
                }
            }
            // Element at 0-based position p contributes its share to the
            // cumulative totals of positions p..n-1, i.e. (n - p) times.
            share_sum += (labels[i] / total) * (n - position) as f64;
        }
        (share_sum - (n as f64 + 1.0) / 2.0) / n as f64
    }

    fn oracle_norm_gini(preds: &[f64], labels: &[f64]) -> f64 {
        oracle_gini_statistic(preds, labels) / oracle_gini_statistic(labels, labels)
    }

    #[test]
    fn metrics_match_brute_force_oracles_on_random_vectors() {
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for round in 0..300 {
            let n = 2 + (next() * 60.0) as usize;
            let preds: Vec<f64> = (0..n).map(|_| next() * 10.0).collect();
            let labels: Vec<f64> = (0..n)
                .map(|_| if next() < 0.4 { 0.0 } else { next() * 100.0 })
                .collect();
            if labels.iter().all(|&y| y == labels[0]) {
                continue;
            }
            let gini = norm_gini(&preds, &labels).unwrap();
            let gini_oracle = oracle_norm_gini(&preds, &labels);
            assert!(
                (gini - gini_oracle).abs() < 1e-9,
                "round {round}: {gini} vs {gini_oracle}"
            );
            let rho = spearman_rho(&preds, &labels).unwrap();
            let rho_oracle = oracle_spearman(&preds, &labels);
            assert!(
                (rho - rho_oracle).abs() < 1e-9,
                "round {round}: {rho} vs {rho_oracle}"
            );
        }
    }

    proptest! {
        #[test]
        fn norm_gini_stays_in_range(labels in prop::collection::vec(0.0..100.0f64, 3..40),
                                    preds in prop::collection::vec(0.0..1.0f64, 3..40)) {
            let n = labels.len().min(preds.len());
            let labels = &labels[..n];
            let preds = &preds[..n];
            if let Ok(g) = norm_gini(preds, labels) {
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&g), "gini {g}");
            }
        }
    }
}
