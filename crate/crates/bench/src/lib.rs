//! Shared setup for the benchmarks: a mid-sized synthetic dataset and a
//! ready-to-train model.

use optdist_core::data::{generate_synthetic, ClusterSpec, SyntheticConfig};
use optdist_core::model::DataDims;
use optdist_core::train::Splits;
use optdist_core::{
    build_model, build_vocab, encode_all, fit_normalizer, split, FeatureSchema, Model, TrainConfig,
};

pub struct BenchSetup {
    pub schema: FeatureSchema,
    pub dims: DataDims,
    pub splits: Splits,
    pub config: TrainConfig,
    pub model: Model,
}

pub fn setup(n: usize) -> BenchSetup {
    let synthetic = SyntheticConfig {
        clusters: (0..4)
            .map(|k| ClusterSpec {
                conversion_prob: [0.05, 0.2, 0.5, 0.9][k],
                log_mean: k as f64,
                log_std: 0.5,
                weight: 0.25,
            })
            .collect(),
        n,
        feature_noise: 0.05,
        seed: 99,
    };
    let dataset = generate_synthetic(&synthetic).unwrap();
    let (train_raw, val_raw, test_raw) = split(&dataset.examples, (0.7, 0.1, 0.2), 13).unwrap();
    let vocab = build_vocab(&train_raw, &dataset.schema).unwrap();
    let normalizer = fit_normalizer(&train_raw, &dataset.schema).unwrap();
    let splits = Splits {
        train: encode_all(&train_raw, &dataset.schema, &vocab, &normalizer),
        validation: encode_all(&val_raw, &dataset.schema, &vocab, &normalizer),
        test: encode_all(&test_raw, &dataset.schema, &vocab, &normalizer),
    };
    let config = TrainConfig {
        l: 4,
        batch_size: 512,
        shared_bottom: vec![32],
        sdn_tower: vec![32, 16],
        selection_mlp: vec![32, 16],
        ..TrainConfig::default()
    };
    let dims = DataDims::new(&dataset.schema, &vocab);
    let model = build_model(&config, &dataset.schema, &dims).unwrap();
    BenchSetup {
        schema: dataset.schema,
        dims,
        splits,
        config,
        model,
    }
}
