//! The five commands: generate, train, evaluate, sweep, gradcheck.
//! Every command is deterministic given its configuration and seed, and
//! writes all outputs under the chosen output directory.

use std::path::{Path, PathBuf};

use optdist_core::artifact::ModelArtifact;
use optdist_core::data::{
    build_vocab, encode_all, fit_normalizer, generate_synthetic, load_csv, split_indices,
    write_csv, FeatureDef, FeatureKind, FeatureSchema, RawExample, RawValue,
};
use optdist_core::metrics::MetricsReport;
use optdist_core::model::DataDims;
use optdist_core::nn::finite_diff_check;
use optdist_core::rng::{seeded_rng, streams};
use optdist_core::selection::sample_gumbel;
use optdist_core::train::{build_model, run_sweep, sweep_table_csv, train, Splits, SweepAxis};
use optdist_core::{evaluate, TrainConfig};

use crate::config::{DataSection, RunConfig};
use crate::CliError;

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::new(format!("cannot create output dir {}: {e}", out.display())))
}

// ---------------------------------------------------------------------------
// generate

pub struct GenerateSummary {
    pub n: usize,
    pub positive_ratio: f64,
    pub csv: PathBuf,
    pub schema: PathBuf,
    pub clusters: PathBuf,
}

/// Writes a synthetic dataset: `data.csv`, its schema manifest, and a
/// sidecar file with the hidden cluster of every row.
pub fn cmd_generate(config: &RunConfig, out: &Path) -> Result<GenerateSummary, CliError> {
    let synthetic = config
        .synthetic
        .as_ref()
        .ok_or_else(|| CliError::new("config has no [synthetic] section"))?;
    ensure_out_dir(out)?;
    let dataset = generate_synthetic(synthetic)?;

    let csv = out.join("data.csv");
    write_csv(&csv, &dataset.schema, &dataset.examples)?;

    let schema = out.join("schema.toml");
    std::fs::write(&schema, dataset.schema.to_toml())?;

    let clusters = out.join("clusters.csv");
    let mut body = String::from("cluster\n");
    for &c in &dataset.hidden_clusters {
        body.push_str(&format!("{c}\n"));
    }
    std::fs::write(&clusters, body)?;

    let positives = dataset.examples.iter().filter(|e| e.label > 0.0).count();
    Ok(GenerateSummary {
        n: dataset.examples.len(),
        positive_ratio: positives as f64 / dataset.examples.len() as f64,
        csv,
        schema,
        clusters,
    })
}

// ---------------------------------------------------------------------------
// train

pub struct LoadedData {
    pub schema: FeatureSchema,
    pub dims: DataDims,
    pub vocab: optdist_core::Vocabularies,
    pub normalizer: optdist_core::Normalizer,
    pub splits: Splits,
    /// Row indices of the test split in the original file order.
    pub test_indices: Vec<usize>,
}

/// Loads a CSV, splits it, and fits vocabulary and normalizer on the
/// training split only.
pub fn load_and_split(section: &DataSection) -> Result<LoadedData, CliError> {
    let schema_text = std::fs::read_to_string(&section.schema).map_err(|e| {
        CliError::new(format!("cannot read schema {}: {e}", section.schema.display()))
    })?;
    let schema = FeatureSchema::from_toml(&schema_text)?;
    let raw = load_csv(&section.csv, &schema)?;
    let (train_idx, val_idx, test_idx) =
        split_indices(raw.len(), section.ratios, section.split_seed)?;

    let pick = |idx: &[usize]| -> Vec<RawExample> { idx.iter().map(|&i| raw[i].clone()).collect() };
    let train_raw = pick(&train_idx);
    let vocab = build_vocab(&train_raw, &schema)?;
    let normalizer = fit_normalizer(&train_raw, &schema)?;

    let splits = Splits {
        train: encode_all(&train_raw, &schema, &vocab, &normalizer),
        validation: encode_all(&pick(&val_idx), &schema, &vocab, &normalizer),
        test: encode_all(&pick(&test_idx), &schema, &vocab, &normalizer),
    };
    let dims = DataDims::new(&schema, &vocab);
    Ok(LoadedData {
        schema,
        dims,
        vocab,
        normalizer,
        splits,
        test_indices: test_idx,
    })
}

pub struct TrainOutcome {
    pub artifact_path: PathBuf,
    pub history_path: PathBuf,
    pub final_metrics: Option<MetricsReport>,
    pub epochs: usize,
}

/// Trains the configured model and persists the best-validation snapshot
/// (parameters, vocabulary, normalizer, config) plus a JSON-lines history
/// with one record per epoch.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<TrainOutcome, CliError> {
    let issues = config.train.validation_issues();
    if !issues.is_empty() {
        return Err(CliError::new(format!(
            "invalid training config: {}",
            issues.join("; ")
        )));
    }
    let section = config
        .data
        .as_ref()
        .ok_or_else(|| CliError::new("config has no [data] section (csv + schema paths)"))?;
    ensure_out_dir(out)?;

    let data = load_and_split(section)?;
    let (model, history) = train(&config.train, &data.schema, &data.dims, &data.splits)?;

    let history_path = out.join("history.jsonl");
    let mut lines = String::new();
    for epoch in &history.epochs {
        lines.push_str(&serde_json::to_string(epoch).map_err(|e| CliError::new(e.to_string()))?);
        lines.push('\n');
    }
    std::fs::write(&history_path, lines)?;

    let final_metrics = history
        .best_epoch
        .and_then(|i| history.epochs[i].validation.clone());
    if let Some(metrics) = &final_metrics {
        std::fs::write(out.join("validation_metrics.txt"), metrics.to_key_values())?;
    }

    let artifact = ModelArtifact::new(
        config.train.clone(),
        data.schema,
        data.vocab,
        data.normalizer,
        model,
    );
    let artifact_path = out.join("model.json");
    artifact.save(&artifact_path)?;

    Ok(TrainOutcome {
        artifact_path,
        history_path,
        final_metrics,
        epochs: history.epochs.len(),
    })
}

// ---------------------------------------------------------------------------
// evaluate

pub struct EvaluateOutcome {
    pub report: MetricsReport,
    pub report_path: PathBuf,
}

/// Scores a CSV with a saved model. The file is read against the schema
/// stored in the artifact; an explicit `--schema` is diffed field by field
/// first and mismatches refuse evaluation.
pub fn cmd_evaluate(
    model_path: &Path,
    data_path: &Path,
    schema_path: Option<&Path>,
    out: &Path,
) -> Result<EvaluateOutcome, CliError> {
    let artifact = ModelArtifact::load(model_path)?;
    if let Some(path) = schema_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(format!("cannot read schema {}: {e}", path.display())))?;
        let schema = FeatureSchema::from_toml(&text)?;
        let diffs = artifact.schema_diff(&schema);
        if !diffs.is_empty() {
            return Err(CliError::new(format!(
                "schema mismatch: {}",
                diffs.join("; ")
            )));
        }
    }
    ensure_out_dir(out)?;

    let raw = load_csv(data_path, &artifact.schema)?;
    let encoded = encode_all(&raw, &artifact.schema, &artifact.vocab, &artifact.normalizer);
    let report = evaluate(&artifact.model, &encoded)?;

    let report_path = out.join("metrics.txt");
    std::fs::write(&report_path, report.to_key_values())?;
    Ok(EvaluateOutcome {
        report,
        report_path,
    })
}

// ---------------------------------------------------------------------------
// sweep

pub struct SweepOutcome {
    pub rows: Vec<optdist_core::SweepRow>,
    pub table_path: PathBuf,
}

pub fn parse_axis(name: &str, values: &str) -> Result<SweepAxis, CliError> {
    let parse_list = |values: &str| -> Result<Vec<f64>, CliError> {
        values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::new(format!("cannot parse axis value {v:?}")))
            })
            .collect()
    };
    match name {
        "l" => {
            let ints = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::new(format!("cannot parse axis value {v:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SweepAxis::Subdistributions(ints))
        }
        "tau" => Ok(SweepAxis::Temperature(parse_list(values)?)),
        "learning_rate" => Ok(SweepAxis::LearningRate(parse_list(values)?)),
        other => Err(CliError::new(format!(
            "unknown sweep axis {other:?} (expected l, tau, or learning_rate)"
        ))),
    }
}

/// Trains once per axis value per seed and writes a CSV table with
/// mean and standard deviation of the test metrics.
pub fn cmd_sweep(
    config: &RunConfig,
    axis: &SweepAxis,
    seeds: &[u64],
    out: &Path,
) -> Result<SweepOutcome, CliError> {
    let section = config
        .data
        .as_ref()
        .ok_or_else(|| CliError::new("config has no [data] section (csv + schema paths)"))?;
    ensure_out_dir(out)?;
    let data = load_and_split(section)?;
    let rows = run_sweep(
        &config.train,
        axis,
        seeds,
        &data.schema,
        &data.dims,
        &data.splits,
    )?;
    let table_path = out.join("sweep.csv");
    std::fs::write(&table_path, sweep_table_csv(&rows))?;
    Ok(SweepOutcome { rows, table_path })
}

// ---------------------------------------------------------------------------
// gradcheck

pub struct GradCheckOutcome {
    pub max_rel_error: f64,
    pub threshold: f64,
    pub pass: bool,
    pub params: usize,
}

/// Deterministic fixture for the gradient check: two categorical features
/// with four known values each (five embedding rows with the unknown row)
/// and two continuous features, mixed zero and positive labels.
pub fn gradcheck_fixture() -> (FeatureSchema, Vec<RawExample>) {
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
    let rows = (0..8)
        .map(|i| {
            let label = if i % 3 == 0 {
                0.0
            } else {
                ((i % 5) as f64 * 0.5 + 0.3).exp()
            };
            RawExample {
                values: vec![
                    RawValue::Categorical(format!("c{}", i % 4)),
                    RawValue::Categorical(format!("d{}", (i / 2) % 4)),
                    RawValue::Continuous((i as f64 * 0.37).sin() * 3.0 + 4.0),
                    RawValue::Continuous((i as f64 * 0.53).cos() * 10.0),
                ],
                label,
            }
        })
        .collect();
    (schema, rows)
}

/// Default architecture for the gradient check: embedding dim 3, three
/// sub-distributions, every loss term active.
pub fn gradcheck_default_train_config() -> TrainConfig {
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

/// Checks the analytic gradients of a freshly initialized model against
/// central finite differences with frozen Gumbel noise. `corrupt_gradient`
/// is a fault-injection hook: it perturbs one analytic gradient entry so
/// the check must fail.
pub fn cmd_gradcheck(
    train_config: &TrainConfig,
    corrupt_gradient: bool,
) -> Result<GradCheckOutcome, CliError> {
    const THRESHOLD: f64 = 1e-4;
    let (schema, raw) = gradcheck_fixture();
    let vocab = build_vocab(&raw, &schema)?;
    let normalizer = fit_normalizer(&raw, &schema)?;
    let batch = encode_all(&raw, &schema, &vocab, &normalizer);
    let dims = DataDims::new(&schema, &vocab);

    let model = build_model(train_config, &schema, &dims)?;
    let flags = train_config.flags();
    let noise: Vec<Vec<f64>> = if flags.hard_selection {
        let mut rng = seeded_rng(train_config.seed, streams::GUMBEL);
        batch
            .iter()
            .map(|_| sample_gumbel(train_config.l, &mut rng))
            .collect()
    } else {
        Vec::new()
    };

    let (_, grads) = model.batch_gradients(&batch, &noise, &flags, false)?;
    let frozen = model.freeze_batch(&batch, &noise, &flags)?;
    let params = model.flatten_params();
    let mut analytic = grads.flatten();
    if corrupt_gradient {
        analytic[0] += 0.5;
    }

    let mut probe = model.clone();
    let mut closure = |flat: &[f64]| {
        probe.assign_params(flat).expect("matching parameter count");
        probe
            .batch_loss_frozen(&batch, &frozen, &flags)
            .expect("frozen loss evaluates")
    };
    let report = finite_diff_check(&mut closure, &params, &analytic, 1e-5)?;
    Ok(GradCheckOutcome {
        max_rel_error: report.max_rel_error,
        threshold: THRESHOLD,
        pass: report.max_rel_error <= THRESHOLD,
        params: report.checked,
    })
}
