//! Shared fixtures for the integration tests: a small mixed dataset and the
//! toy architecture used by the gradient checks.

use optdist_core::data::{
    build_vocab, encode_all, fit_normalizer, FeatureDef, FeatureKind, FeatureSchema, RawExample,
    RawValue,
};
use optdist_core::model::DataDims;
use optdist_core::{EncodedExample, TrainConfig, Vocabularies};

pub struct ToyData {
    pub schema: FeatureSchema,
    #[allow(dead_code)]
    pub vocab: Vocabularies,
    pub dims: DataDims,
    pub examples: Vec<EncodedExample>,
}

/// Two categorical features (4 known values each, so 5 embedding rows with
/// the unknown row), two continuous features, mixed zero and positive
/// labels.
pub fn toy_data(n: usize) -> ToyData {
    let schema = FeatureSchema {
        features: vec![
            FeatureDef {
                name: "city".into(),
                kind: FeatureKind::Categorical,
            },
            FeatureDef {
                name: "device".into(),
                kind: FeatureKind::Categorical,
            },
            FeatureDef {
                name: "visits".into(),
                kind: FeatureKind::Continuous,
            },
            FeatureDef {
                name: "recency".into(),
                kind: FeatureKind::Continuous,
            },
        ],
        label: "ltv".into(),
        horizon_days: Some(30),
    };

    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let city = format!("c{}", i % 4);
        let device = format!("d{}", (i / 2) % 4);
        let visits = (i as f64 * 0.37).sin() * 3.0 + 4.0;
        let recency = (i as f64 * 0.53).cos() * 10.0;
        let label = if i % 3 == 0 {
            0.0
        } else {
            ((i % 7) as f64 * 0.4 + 0.2).exp() * 0.8
        };
        raw.push(RawExample {
            values: vec![
                RawValue::Categorical(city),
                RawValue::Categorical(device),
                RawValue::Continuous(visits),
                RawValue::Continuous(recency),
            ],
            label,
        });
    }

    let vocab = build_vocab(&raw, &schema).unwrap();
    let normalizer = fit_normalizer(&raw, &schema).unwrap();
    let examples = encode_all(&raw, &schema, &vocab, &normalizer);
    let dims = DataDims::new(&schema, &vocab);
    ToyData {
        schema,
        vocab,
        dims,
        examples,
    }
}

/// Small architecture: quick to finite-difference yet exercising every
/// component.
pub fn toy_config() -> TrainConfig {
    TrainConfig {
        l: 3,
        embedding_dim: 3,
        shared_bottom: vec![16],
        sdn_tower: vec![8],
        selection_mlp: vec![8],
        seed: 7,
        ..TrainConfig::default()
    }
}
