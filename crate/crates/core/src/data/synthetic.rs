use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureDef, FeatureKind, FeatureSchema, RawExample, RawValue};
use crate::error::{Error, Result};
use crate::rng::{seeded_rng, streams};

/// One latent user group of the synthetic generator: a conversion
/// probability and a log-normal value distribution for converted users.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Probability that a user converts (label > 0).
    pub conversion_prob: f64,
    /// Location of the log-normal value distribution.
    pub log_mean: f64,
    /// Scale of the log-normal value distribution, > 0.
    pub log_std: f64,
    /// Prior weight of the cluster; weights must sum to 1.
    pub weight: f64,
}

/// Synthetic zero-inflated log-normal mixture.
///
/// Each sample draws a cluster by prior weight and emits one categorical
/// token naming the cluster (replaced by a wrong token with probability
/// `feature_noise`) plus two continuous features from cluster-specific
/// Gaussians. The label is 0 with probability `1 - conversion_prob`,
/// otherwise log-normal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub clusters: Vec<ClusterSpec>,
    pub n: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("sample count must be >= 1".into()));
        }
        if self.clusters.is_empty() {
            return Err(Error::InvalidConfig("at least one cluster".into()));
        }
        let weight_sum: f64 = self.clusters.iter().map(|c| c.weight).sum();
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "cluster weights must sum to 1, got {weight_sum}"
            )));
        }
        for (k, c) in self.clusters.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.conversion_prob) {
                return Err(Error::InvalidConfig(format!(
                    "cluster {k}: conversion_prob must be in [0, 1]"
                )));
            }
            if c.log_std <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "cluster {k}: log_std must be > 0"
                )));
            }
            if c.weight < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "cluster {k}: weight must be >= 0"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.feature_noise) {
            return Err(Error::InvalidConfig(
                "feature_noise must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Generated rows plus the hidden cluster assignment of every row. The
/// hidden labels exist for purity evaluation only and are never part of the
/// model input.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub examples: Vec<RawExample>,
    pub hidden_clusters: Vec<usize>,
    pub schema: FeatureSchema,
}

/// Schema of the generated data: one cluster token, two continuous
/// features, label column `ltv`.
pub fn synthetic_schema() -> FeatureSchema {
    FeatureSchema {
        features: vec![
            FeatureDef {
                name: "token".into(),
                kind: FeatureKind::Categorical,
            },
            FeatureDef {
                name: "x1".into(),
                kind: FeatureKind::Continuous,
            },
            FeatureDef {
                name: "x2".into(),
                kind: FeatureKind::Continuous,
            },
        ],
        label: "ltv".into(),
        horizon_days: Some(30),
    }
}

/// Cluster centers for the two continuous features, spaced on a circle of
/// radius 3 with unit-variance Gaussians around them. Clusters are well
/// separated in feature space, and cluster indices are interleaved around
/// the circle so that neighboring positions never hold consecutive
/// indices: no single linear direction orders the clusters, so telling
/// them apart from the continuous features takes a genuinely nonlinear
/// decision function.
fn cluster_center(k: usize, num_clusters: usize) -> (f64, f64) {
    let position = if num_clusters % 2 == 0 {
        (2 * k) % num_clusters + (2 * k) / num_clusters
    } else {
        (2 * k) % num_clusters
    };
    let angle = 2.0 * std::f64::consts::PI * position as f64 / num_clusters as f64;
    let r: f64 = std::env::var("GEN_RADIUS").ok().and_then(|v| v.parse().ok()).unwrap_or(3.0);
    (r * angle.cos(), r * angle.sin())
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let num_clusters = config.clusters.len();
    let mut rng = seeded_rng(config.seed, streams::SYNTHETIC);
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut examples = Vec::with_capacity(config.n);
    let mut hidden = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        // Cluster by prior weight.
        let mut u: f64 = rng.random();
        let mut k = num_clusters - 1;
        for (i, c) in config.clusters.iter().enumerate() {
            if u < c.weight {
                k = i;
                break;
            }
            u -= c.weight;
        }
        let cluster = &config.clusters[k];

        // Token, possibly corrupted.
        let token_cluster = if num_clusters > 1 && rng.random::<f64>() < config.feature_noise {
            let offset = rng.random_range(1..num_clusters);
            (k + offset) % num_clusters
        } else {
            k
        };

        let (cx, cy) = cluster_center(k, num_clusters);
        let x1 = cx + unit_normal.sample(&mut rng);
        let x2 = cy + unit_normal.sample(&mut rng);

        let label = if rng.random::<f64>() < cluster.conversion_prob {
            (cluster.log_mean + cluster.log_std * unit_normal.sample(&mut rng)).exp()
        } else {
            0.0
        };

        examples.push(RawExample {
            values: vec![
                RawValue::Categorical(format!("c{token_cluster}")),
                RawValue::Continuous(x1),
                RawValue::Continuous(x2),
            ],
            label,
        });
        hidden.push(k);
    }

    Ok(SyntheticDataset {
        examples,
        hidden_clusters: hidden,
        schema: synthetic_schema(),
    })
}
