//! Dataset schema, encoding, and splitting.
//!
//! The pipeline is: load raw rows from CSV against a schema, build
//! categorical vocabularies and a Z-score normalizer on the training split
//! only, then encode rows into fixed-shape numeric examples. Everything is
//! immutable after construction and safe to read from many threads.

mod csv_io;
mod synthetic;

pub use csv_io::{load_csv, write_csv};
pub use synthetic::{generate_synthetic, ClusterSpec, SyntheticConfig, SyntheticDataset};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded_rng, streams};

/// Kind of one input column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical,
    Continuous,
}

/// One input column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
}

/// Ordered feature descriptors plus the label column.
///
/// `horizon_days` is informational: the number of days the label window
/// covers. It never affects computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDef>,
    pub label: String,
    #[serde(default)]
    pub horizon_days: Option<u32>,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
            }
        }
        if seen.contains(self.label.as_str()) {
            return Err(Error::Schema(format!(
                "label column {:?} is also a feature",
                self.label
            )));
        }
        Ok(())
    }

    pub fn categorical_names(&self) -> Vec<&str> {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Categorical)
            .map(|f| f.name.as_str())
            .collect()
    }

    pub fn num_categorical(&self) -> usize {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Categorical)
            .count()
    }

    pub fn num_continuous(&self) -> usize {
        self.features.len() - self.num_categorical()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: FeatureSchema =
            toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }
}

/// One raw feature value, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Categorical(String),
    Continuous(f64),
}

/// One raw row: feature values in schema order plus the label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExample {
    pub values: Vec<RawValue>,
    pub label: f64,
}

/// One encoded row: categorical indices, z-scored continuous values, the
/// label, and the conversion flag (`label > 0`).
#[derive(Debug, Clone)]
pub struct EncodedExample {
    pub categorical: Vec<usize>,
    pub continuous: Vec<f64>,
    pub label: f64,
    pub converted: bool,
}

/// Per-categorical-feature value-to-index maps. Index 0 is reserved for
/// unknown values; known values are numbered by first occurrence in the
/// training split.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocabularies {
    pub maps: Vec<BTreeMap<String, usize>>,
}

impl Vocabularies {
    /// Rows needed in the embedding table for categorical feature `f`,
    /// including the reserved unknown row.
    pub fn table_size(&self, f: usize) -> usize {
        self.maps[f].len() + 1
    }

    pub fn index_of(&self, f: usize, value: &str) -> usize {
        self.maps[f].get(value).copied().unwrap_or(0)
    }
}

/// Builds vocabularies from the training split only.
pub fn build_vocab(train: &[RawExample], schema: &FeatureSchema) -> Result<Vocabularies> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training split".into()));
    }
    let cat_slots: Vec<usize> = schema
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.kind == FeatureKind::Categorical)
        .map(|(i, _)| i)
        .collect();
    let mut maps: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); cat_slots.len()];
    for ex in train {
        for (ci, &slot) in cat_slots.iter().enumerate() {
            if let RawValue::Categorical(v) = &ex.values[slot] {
                let next = maps[ci].len() + 1;
                maps[ci].entry(v.clone()).or_insert(next);
            }
        }
    }
    Ok(Vocabularies { maps })
}

/// Per-continuous-feature mean and population standard deviation, fitted on
/// the training split only. Features with zero deviation normalize to 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    pub stats: Vec<FeatureStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

pub fn fit_normalizer(train: &[RawExample], schema: &FeatureSchema) -> Result<Normalizer> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training split".into()));
    }
    let cont_slots: Vec<usize> = schema
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.kind == FeatureKind::Continuous)
        .map(|(i, _)| i)
        .collect();
    let n = train.len() as f64;
    let mut stats = Vec::with_capacity(cont_slots.len());
    for &slot in &cont_slots {
        let mut sum = 0.0;
        for ex in train {
            if let RawValue::Continuous(v) = &ex.values[slot] {
                sum += v;
            }
        }
        let mean = sum / n;
        let mut sq = 0.0;
        for ex in train {
            if let RawValue::Continuous(v) = &ex.values[slot] {
                sq += (v - mean) * (v - mean);
            }
        }
        stats.push(FeatureStats {
            mean,
            std: (sq / n).sqrt(),
        });
    }
    Ok(Normalizer { stats })
}

impl Normalizer {
    #[inline]
    pub fn apply(&self, f: usize, value: f64) -> f64 {
        let FeatureStats { mean, std } = self.stats[f];
        if std == 0.0 {
            0.0
        } else {
            (value - mean) / std
        }
    }
}

/// Encodes one raw row. Pure function of its inputs: unknown categorical
/// values map to index 0, continuous values are z-scored, and the
/// conversion flag is `label > 0`.
pub fn encode(
    raw: &RawExample,
    schema: &FeatureSchema,
    vocab: &Vocabularies,
    normalizer: &Normalizer,
) -> EncodedExample {
    let mut categorical = Vec::with_capacity(schema.num_categorical());
    let mut continuous = Vec::with_capacity(schema.num_continuous());
    let mut ci = 0;
    let mut qi = 0;
    for (slot, f) in schema.features.iter().enumerate() {
        match (f.kind, &raw.values[slot]) {
            (FeatureKind::Categorical, RawValue::Categorical(v)) => {
                categorical.push(vocab.index_of(ci, v));
                ci += 1;
            }
            (FeatureKind::Continuous, RawValue::Continuous(v)) => {
                continuous.push(normalizer.apply(qi, *v));
                qi += 1;
            }
            _ => unreachable!("raw example does not match schema"),
        }
    }
    EncodedExample {
        categorical,
        continuous,
        label: raw.label,
        converted: raw.label > 0.0,
    }
}

pub fn encode_all(
    raw: &[RawExample],
    schema: &FeatureSchema,
    vocab: &Vocabularies,
    normalizer: &Normalizer,
) -> Vec<EncodedExample> {
    raw.iter().map(|r| encode(r, schema, vocab, normalizer)).collect()
}

/// Deterministic shuffled split. Each part gets `floor(n * ratio)` rows and
/// the remainder goes to the training split.
pub fn split_indices(
    n: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv < 0.0 || rs < 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed, streams::SPLIT));
    let n_train_floor = (n as f64 * rt).floor() as usize;
    let n_val = (n as f64 * rv).floor() as usize;
    let n_test = (n as f64 * rs).floor() as usize;
    let n_train = n - n_val - n_test;
    debug_assert!(n_train >= n_train_floor);
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    Ok((train, val, test))
}

/// Splits a dataset 7:1:2 (or custom ratios) into train/validation/test.
pub fn split<T: Clone>(
    data: &[T],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (ti, vi, si) = split_indices(data.len(), ratios, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect();
    Ok((pick(&ti), pick(&vi), pick(&si)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_schema() -> FeatureSchema {
        FeatureSchema {
            features: vec![
                FeatureDef {
                    name: "city".into(),
                    kind: FeatureKind::Categorical,
                },
                FeatureDef {
                    name: "visits".into(),
                    kind: FeatureKind::Continuous,
                },
            ],
            label: "ltv".into(),
            horizon_days: Some(30),
        }
    }

    fn row(cat: &str, cont: f64, label: f64) -> RawExample {
        RawExample {
            values: vec![
                RawValue::Categorical(cat.into()),
                RawValue::Continuous(cont),
            ],
            label,
        }
    }

    #[test]
    fn schema_rejects_duplicates_and_label_overlap() {
        let mut s = toy_schema();
        assert!(s.validate().is_ok());
        s.features.push(FeatureDef {
            name: "city".into(),
            kind: FeatureKind::Continuous,
        });
        assert!(s.validate().is_err());
        let mut s2 = toy_schema();
        s2.label = "city".into();
        assert!(s2.validate().is_err());
    }

    #[test]
    fn vocab_reserves_zero_and_numbers_by_first_occurrence() {
        let train = vec![row("a", 0.0, 0.0), row("b", 0.0, 0.0), row("a", 0.0, 0.0)];
        let vocab = build_vocab(&train, &toy_schema()).unwrap();
        assert_eq!(vocab.index_of(0, "a"), 1);
        assert_eq!(vocab.index_of(0, "b"), 2);
        assert_eq!(vocab.index_of(0, "never-seen"), 0);
        assert_eq!(vocab.table_size(0), 3);
    }

    #[test]
    fn vocabularies_per_feature_are_independent() {
        let schema = FeatureSchema {
            features: vec![
                FeatureDef {
                    name: "f1".into(),
                    kind: FeatureKind::Categorical,
                },
                FeatureDef {
                    name: "f2".into(),
                    kind: FeatureKind::Categorical,
                },
            ],
            label: "y".into(),
            horizon_days: None,
        };
        let train = vec![RawExample {
            values: vec![
                RawValue::Categorical("x".into()),
                RawValue::Categorical("x".into()),
            ],
            label: 0.0,
        }];
        let vocab = build_vocab(&train, &schema).unwrap();
        assert_eq!(vocab.maps.len(), 2);
        assert_eq!(vocab.index_of(0, "x"), 1);
        assert_eq!(vocab.index_of(1, "x"), 1);
    }

    #[test]
    fn normalizer_uses_population_std() {
        let schema = toy_schema();
        let train = vec![row("a", 1.0, 0.0), row("a", 3.0, 0.0)];
        let norm = fit_normalizer(&train, &schema).unwrap();
        assert_eq!(norm.stats[0].mean, 2.0);
        assert_eq!(norm.stats[0].std, 1.0);

        // mean 1, population variance (1+1+1+9)/4 = 3.
        let train = vec![
            row("a", 0.0, 0.0),
            row("a", 0.0, 0.0),
            row("a", 0.0, 0.0),
            row("a", 4.0, 0.0),
        ];
        let norm = fit_normalizer(&train, &schema).unwrap();
        assert_eq!(norm.stats[0].mean, 1.0);
        assert!((norm.stats[0].std - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_feature_normalizes_to_zero() {
        let schema = toy_schema();
        let train = vec![row("a", 5.0, 0.0), row("a", 5.0, 0.0), row("a", 5.0, 0.0)];
        let norm = fit_normalizer(&train, &schema).unwrap();
        assert_eq!(norm.stats[0].std, 0.0);
        assert_eq!(norm.apply(0, 5.0), 0.0);
        assert_eq!(norm.apply(0, 9.0), 0.0);
    }

    #[test]
    fn encode_sets_conversion_flag_and_zscores() {
        let schema = toy_schema();
        let train = vec![row("a", 1.0, 0.0), row("a", 3.0, 12.5)];
        let vocab = build_vocab(&train, &schema).unwrap();
        let norm = fit_normalizer(&train, &schema).unwrap();

        let zero = encode(&row("a", 3.0, 0.0), &schema, &vocab, &norm);
        assert!(!zero.converted);
        assert_eq!(zero.continuous[0], 1.0);

        let pos = encode(&row("oov", 2.0, 12.5), &schema, &vocab, &norm);
        assert!(pos.converted);
        assert_eq!(pos.categorical[0], 0);
        assert_eq!(pos.continuous[0], 0.0);
    }

    #[test]
    fn split_sizes_follow_the_floor_rule() {
        let data: Vec<u32> = (0..10).collect();
        let (train, val, test) = split(&data, (0.7, 0.1, 0.2), 3).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (7, 1, 2));

        // n = 9: floors are (6, 0, 1), remainder 2 goes to train.
        let data: Vec<u32> = (0..9).collect();
        let (train, val, test) = split(&data, (0.7, 0.1, 0.2), 3).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (8, 0, 1));
    }

    #[test]
    fn split_is_deterministic_disjoint_and_exhaustive() {
        let data: Vec<u32> = (0..53).collect();
        let a = split(&data, (0.7, 0.1, 0.2), 9).unwrap();
        let b = split(&data, (0.7, 0.1, 0.2), 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<u32> = a.0.iter().chain(&a.1).chain(&a.2).copied().collect();
        all.sort_unstable();
        assert_eq!(all, data);
    }

    #[test]
    fn invalid_ratios_are_rejected() {
        assert!(split_indices(10, (0.5, 0.1, 0.2), 0).is_err());
        assert!(split_indices(10, (-0.1, 0.9, 0.2), 0).is_err());
    }
}
