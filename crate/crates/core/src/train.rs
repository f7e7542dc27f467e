//! End-to-end training.
//!
//! One joint parameter update per mini-batch over both the sub-distribution
//! networks and the selection network (the single-level treatment of the
//! nested selection problem; there is no inner/outer alternation). Fresh
//! Gumbel noise is drawn per example per step. Early stopping tracks the
//! validation normalized Gini and the best-validation snapshot is returned.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::alignment::LossBreakdown;
use crate::data::EncodedExample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{ArchConfig, DataDims, LossFlags, Model, ModelKind};
use crate::nn::{adam_step, sgd_step, AdamHyper, AdamState, StepOutcome};
use crate::rng::{seeded_rng, streams};
use crate::selection::sample_gumbel;
use crate::data::FeatureSchema;

/// Everything a training run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Which model to train.
    pub model: ModelKind,
    /// Number of candidate sub-distributions.
    pub l: usize,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub embedding_dim: usize,
    pub shared_bottom: Vec<usize>,
    pub sdn_tower: Vec<usize>,
    pub selection_mlp: Vec<usize>,
    /// Ablation: plain softmax weights, no noise, no hard mask.
    pub no_gumbel: bool,
    /// Ablation: drop the KL alignment term.
    pub no_kl: bool,
    /// Ablation: drop the focal cross-entropy alignment term.
    pub no_ce: bool,
    /// Let alignment gradients flow into the sub-distribution losses.
    pub no_stopgrad: bool,
    /// Plain gradient descent instead of Adam.
    pub plain_sgd: bool,
    /// Process batches on one thread (results are identical either way).
    pub single_thread: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::OptDist,
            l: 4,
            tau: 1.0,
            learning_rate: 1e-3,
            batch_size: 2048,
            max_epochs: 20,
            patience: 3,
            seed: 1,
            embedding_dim: 5,
            shared_bottom: vec![64],
            sdn_tower: vec![64, 32, 32],
            selection_mlp: vec![64, 32],
            no_gumbel: false,
            no_kl: false,
            no_ce: false,
            no_stopgrad: false,
            plain_sgd: false,
            single_thread: false,
        }
    }
}

impl TrainConfig {
    /// Collects every configuration problem instead of stopping at the first.
    pub fn validation_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.l == 0 {
            issues.push("l: need at least one sub-distribution".into());
        }
        if self.tau <= 0.0 {
            issues.push(format!("tau: must be positive, got {}", self.tau));
        }
        if self.learning_rate <= 0.0 {
            issues.push(format!(
                "learning_rate: must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            issues.push("batch_size: must be >= 1".into());
        }
        if self.embedding_dim == 0 {
            issues.push("embedding_dim: must be >= 1".into());
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.validation_issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues.join("; ")))
        }
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            num_subdistributions: self.l,
            embedding_dim: self.embedding_dim,
            shared_bottom: self.shared_bottom.clone(),
            sdn_tower: self.sdn_tower.clone(),
            selection_hidden: self.selection_mlp.clone(),
            seed: self.seed,
        }
    }

    pub fn flags(&self) -> LossFlags {
        LossFlags {
            hard_selection: !self.no_gumbel,
            ce: !self.no_ce,
            kl: !self.no_kl,
            stop_gradient: !self.no_stopgrad,
            tau: self.tau,
        }
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub validation: Option<MetricsReport>,
    /// How many validation examples each sub-distribution was selected for.
    pub selection_counts: Vec<usize>,
    pub seconds: f64,
}

/// Per-epoch records plus the index of the best-validation epoch.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best_validation_gini(&self) -> Option<f64> {
        self.best_epoch
            .and_then(|i| self.epochs[i].validation.as_ref())
            .and_then(|m| m.norm_gini)
    }
}

/// Builds the configured model for a dataset shape.
pub fn build_model(config: &TrainConfig, schema: &FeatureSchema, dims: &DataDims) -> Result<Model> {
    config.validate()?;
    Model::build(config.model, &config.arch(), schema, dims)
}

/// Optimizer state for one model.
pub struct Optimizer {
    adam: Option<AdamState>,
    learning_rate: f64,
}

impl Optimizer {
    pub fn new(model: &Model, config: &TrainConfig) -> Self {
        let adam = if config.plain_sgd {
            None
        } else {
            Some(AdamState::new(&model.tensor_shapes(), AdamHyper::default()))
        };
        Self {
            adam,
            learning_rate: config.learning_rate,
        }
    }
}

/// One joint update of all trainable parameters from one mini-batch.
/// Returns the pre-update loss. A non-finite loss skips the update and
/// logs the event.
pub fn train_step(
    model: &mut Model,
    batch: &[EncodedExample],
    optimizer: &mut Optimizer,
    config: &TrainConfig,
    noise_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<LossBreakdown> {
    let flags = config.flags();
    let noise: Vec<Vec<f64>> = if matches!(model, Model::OptDist(_)) && flags.hard_selection {
        batch
            .iter()
            .map(|_| sample_gumbel(config.l, noise_rng))
            .collect()
    } else {
        Vec::new()
    };

    let (loss, grads) = model.batch_gradients(batch, &noise, &flags, !config.single_thread)?;
    if !loss.total.is_finite() {
        log::warn!("non-finite batch loss {loss:?}; skipping update");
        return Ok(loss);
    }

    let grad_tensors = grads.tensors();
    let mut param_tensors = model.tensors_mut();
    let outcome = match optimizer.adam.as_mut() {
        Some(state) => adam_step(
            &mut param_tensors,
            &grad_tensors,
            state,
            optimizer.learning_rate,
        )?,
        None => sgd_step(&mut param_tensors, &grad_tensors, optimizer.learning_rate)?,
    };
    if outcome == StepOutcome::SkippedNonFinite {
        log::warn!("non-finite gradients; update skipped");
    }
    Ok(loss)
}

/// Train/validation/test splits, already encoded.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<EncodedExample>,
    pub validation: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

/// Full training loop with shuffled mini-batches and early stopping on the
/// validation normalized Gini. Returns the best-validation snapshot (the
/// final model if validation is empty or the metric undefined).
pub fn train(config: &TrainConfig, schema: &FeatureSchema, dims: &DataDims, splits: &Splits) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if splits.train.is_empty() {
        return Err(Error::InvalidConfig("empty training split".into()));
    }
    let mut model = build_model(config, schema, dims)?;
    let mut optimizer = Optimizer::new(&model, config);
    let mut shuffle_rng = seeded_rng(config.seed, streams::EPOCH_SHUFFLE);
    let mut noise_rng = seeded_rng(config.seed, streams::GUMBEL);

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model)> = None;
    let mut epochs_without_improvement = 0usize;

    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    for epoch in 0..config.max_epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut shuffle_rng);

        let mut sums = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        let mut batch_buf: Vec<EncodedExample> = Vec::with_capacity(config.batch_size);
        for chunk in order.chunks(config.batch_size) {
            batch_buf.clear();
            batch_buf.extend(chunk.iter().map(|&i| splits.train[i].clone()));
            let loss = train_step(&mut model, &batch_buf, &mut optimizer, config, &mut noise_rng)?;
            sums.0 += loss.dlm;
            sums.1 += loss.ce;
            sums.2 += loss.kl;
            batches += 1;
        }
        let denom = batches.max(1) as f64;
        let loss = LossBreakdown {
            dlm: sums.0 / denom,
            ce: sums.1 / denom,
            kl: sums.2 / denom,
            total: (sums.0 + sums.1 + sums.2) / denom,
        };

        let validation = if splits.validation.is_empty() {
            None
        } else {
            Some(evaluate(&model, &splits.validation)?)
        };
        let mut selection_counts = vec![0usize; model.num_subdistributions()];
        for ex in &splits.validation {
            selection_counts[model.selected_index(ex)?] += 1;
        }

        history.epochs.push(EpochRecord {
            epoch,
            loss,
            validation: validation.clone(),
            selection_counts,
            seconds: started.elapsed().as_secs_f64(),
        });

        if let Some(metric) = validation.as_ref().and_then(|m| m.norm_gini) {
            let improved = best.as_ref().map_or(true, |(b, _)| metric > *b);
            if improved {
                best = Some((metric, model.clone()));
                history.best_epoch = Some(epoch);
                epochs_without_improvement = 0;
            } else {
                epochs_without_improvement += 1;
                if epochs_without_improvement >= config.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, snapshot)) = best {
        model = snapshot;
    } else if !history.epochs.is_empty() {
        history.best_epoch = Some(history.epochs.len() - 1);
    }
    Ok((model, history))
}

/// A hyper-parameter axis for [`run_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "axis", content = "values")]
pub enum SweepAxis {
    Subdistributions(Vec<usize>),
    Temperature(Vec<f64>),
    LearningRate(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Subdistributions(_) => "l",
            SweepAxis::Temperature(_) => "tau",
            SweepAxis::LearningRate(_) => "learning_rate",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Subdistributions(v) => v.len(),
            SweepAxis::Temperature(v) => v.len(),
            SweepAxis::LearningRate(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn apply(&self, index: usize, config: &mut TrainConfig) -> f64 {
        match self {
            SweepAxis::Subdistributions(v) => {
                config.l = v[index];
                v[index] as f64
            }
            SweepAxis::Temperature(v) => {
                config.tau = v[index];
                v[index]
            }
            SweepAxis::LearningRate(v) => {
                config.learning_rate = v[index];
                v[index]
            }
        }
    }
}

/// One sweep row: a setting value and test metrics aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub value: f64,
    pub seeds: usize,
    pub norm_gini_mean: f64,
    pub norm_gini_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub spearman_mean: f64,
    pub spearman_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains and evaluates one configuration per axis point, with the same
/// fixed seed set for every point, and reports mean and standard deviation
/// of the test metrics.
pub fn run_sweep(
    base: &TrainConfig,
    axis: &SweepAxis,
    seeds: &[u64],
    schema: &FeatureSchema,
    dims: &DataDims,
    splits: &Splits,
) -> Result<Vec<SweepRow>> {
    if axis.is_empty() {
        return Err(Error::InvalidConfig("empty sweep axis".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("empty seed set".into()));
    }
    let mut rows = Vec::with_capacity(axis.len());
    for index in 0..axis.len() {
        let mut config = base.clone();
        let value = axis.apply(index, &mut config);
        let mut ginis = Vec::with_capacity(seeds.len());
        let mut maes = Vec::with_capacity(seeds.len());
        let mut rhos = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            config.seed = seed;
            let (model, _) = train(&config, schema, dims, splits)?;
            let report = evaluate(&model, &splits.test)?;
            ginis.push(report.norm_gini.unwrap_or(0.0));
            maes.push(report.mae);
            rhos.push(report.spearman_rho.unwrap_or(0.0));
        }
        let (g_mean, g_std) = mean_std(&ginis);
        let (m_mean, m_std) = mean_std(&maes);
        let (r_mean, r_std) = mean_std(&rhos);
        rows.push(SweepRow {
            setting: axis.name().to_string(),
            value,
            seeds: seeds.len(),
            norm_gini_mean: g_mean,
            norm_gini_std: g_std,
            mae_mean: m_mean,
            mae_std: m_std,
            spearman_mean: r_mean,
            spearman_std: r_std,
        });
    }
    Ok(rows)
}

/// Renders sweep rows as a CSV table.
pub fn sweep_table_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "setting,value,seeds,norm_gini_mean,norm_gini_std,mae_mean,mae_std,spearman_mean,spearman_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.setting,
            r.value,
            r.seeds,
            r.norm_gini_mean,
            r.norm_gini_std,
            r.mae_mean,
            r.mae_std,
            r.spearman_mean,
            r.spearman_std
        ));
    }
    out
}
