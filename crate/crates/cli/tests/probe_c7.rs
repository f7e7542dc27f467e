//! Temporary ablation-ordering probe; run with --ignored.

use optdist_core::data::{generate_synthetic, split_indices, ClusterSpec, SyntheticConfig};
use optdist_core::model::{DataDims, ModelKind};
use optdist_core::train::{train, Splits, TrainConfig};
use optdist_core::{build_vocab, encode_all, evaluate, fit_normalizer, selection_purity};

#[test]
#[ignore]
fn probe_ablations() {
    let tau: f64 = std::env::var("TAU").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let probs = [0.05, 0.2, 0.5, 0.9];
    let synth = SyntheticConfig {
        clusters: (0..4)
            .map(|k| ClusterSpec {
                conversion_prob: probs[k],
                log_mean: k as f64,
                log_std: 0.5,
                weight: std::env::var("PROBE_WEIGHTS").ok().map(|w| w.split(',').map(|v| v.parse().unwrap()).collect::<Vec<f64>>()[k]).unwrap_or(0.25),
            })
            .collect(),
        n: 50_000,
        feature_noise: 0.05,
        seed: 2024,
    };
    let dataset = generate_synthetic(&synth).unwrap();
    let (ti, vi, si) = split_indices(dataset.examples.len(), (0.7, 0.1, 0.2), 13).unwrap();
    let pick = |idx: &[usize]| -> Vec<_> { idx.iter().map(|&i| dataset.examples[i].clone()).collect() };
    let train_raw = pick(&ti);
    let vocab = build_vocab(&train_raw, &dataset.schema).unwrap();
    let normalizer = fit_normalizer(&train_raw, &dataset.schema).unwrap();
    let splits = Splits {
        train: encode_all(&train_raw, &dataset.schema, &vocab, &normalizer),
        validation: encode_all(&pick(&vi), &dataset.schema, &vocab, &normalizer),
        test: encode_all(&pick(&si), &dataset.schema, &vocab, &normalizer),
    };
    let dims = DataDims::new(&dataset.schema, &vocab);
    let test_clusters: Vec<usize> = si.iter().map(|&i| dataset.hidden_clusters[i]).collect();

    let base = TrainConfig {
        model: ModelKind::OptDist,
        l: 4,
        tau,
        learning_rate: std::env::var("LR").ok().and_then(|v| v.parse().ok()).unwrap_or(2e-3),
        batch_size: 512,
        max_epochs: 12,
        patience: 3,
        embedding_dim: 5,
        shared_bottom: vec![],
        sdn_tower: vec![],
        selection_mlp: vec![32, 16],
        ..TrainConfig::default()
    };
    let variants: Vec<(&str, TrainConfig)> = vec![
        ("full     ", base.clone()),
        ("no_gumbel", TrainConfig { no_gumbel: true, ..base.clone() }),
        ("no_kl    ", TrainConfig { no_kl: true, ..base.clone() }),
        ("no_ce    ", TrainConfig { no_ce: true, ..base.clone() }),
        ("no_align ", TrainConfig { no_kl: true, no_ce: true, ..base.clone() }),
        ("ziln     ", TrainConfig { model: ModelKind::Ziln, ..base.clone() }),
    ];
    for (name, config) in variants {
        let mut ginis = Vec::new();
        let mut purities = Vec::new();
        for seed in 1..=5u64 {
            let mut c = config.clone();
            c.seed = seed;
            let (model, _) = train(&c, &dataset.schema, &dims, &splits).unwrap();
            let report = evaluate(&model, &splits.test).unwrap();
            ginis.push(report.norm_gini.unwrap());
            let assignments: Vec<usize> = splits.test.iter().map(|ex| model.selected_index(ex).unwrap()).collect();
            purities.push(selection_purity(&assignments, &test_clusters, c.l, 4));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!("{name} gini={:.4} purity={:.3}  per-seed: {:?}", mean(&ginis), mean(&purities), ginis.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>());
    }
}
