//! Run configuration: a TOML file with `[train]`, `[data]`, and
//! `[synthetic]` sections. Every `[train]` field can be overridden by a
//! command-line flag of the same name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use optdist_core::data::SyntheticConfig;
use optdist_core::{ModelKind, TrainConfig};

use crate::CliError;

/// Where the dataset comes from and how it is split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    pub csv: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    #[serde(default = "default_ratios")]
    pub ratios: (f64, f64, f64),
}

fn default_split_seed() -> u64 {
    13
}

fn default_ratios() -> (f64, f64, f64) {
    (0.7, 0.1, 0.2)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::new(format!("invalid config {}: {e}", path.display())))
    }
}

/// Optional overrides for every `[train]` field, mirrored as CLI flags.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainOverrides {
    /// Model kind: optdist, ziln, two_stage, or mtl_mse.
    #[arg(long)]
    pub model: Option<String>,
    /// Number of candidate sub-distributions.
    #[arg(long)]
    pub l: Option<usize>,
    /// Gumbel-softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Comma-separated hidden widths, e.g. 64,32.
    #[arg(long, value_delimiter = ',')]
    pub shared_bottom: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub sdn_tower: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub selection_mlp: Option<Vec<usize>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_gumbel: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_kl: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_ce: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_stopgrad: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub plain_sgd: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub single_thread: Option<bool>,
}

impl TrainOverrides {
    pub fn apply(&self, config: &mut TrainConfig) -> Result<(), CliError> {
        if let Some(model) = &self.model {
            config.model = parse_model_kind(model)?;
        }
        macro_rules! set {
            ($field:ident) => {
                if let Some(value) = self.$field.clone() {
                    config.$field = value;
                }
            };
        }
        set!(l);
        set!(tau);
        set!(learning_rate);
        set!(batch_size);
        set!(max_epochs);
        set!(patience);
        set!(seed);
        set!(embedding_dim);
        set!(shared_bottom);
        set!(sdn_tower);
        set!(selection_mlp);
        set!(no_gumbel);
        set!(no_kl);
        set!(no_ce);
        set!(no_stopgrad);
        set!(plain_sgd);
        set!(single_thread);
        Ok(())
    }
}

pub fn parse_model_kind(name: &str) -> Result<ModelKind, CliError> {
    match name {
        "optdist" => Ok(ModelKind::OptDist),
        "ziln" => Ok(ModelKind::Ziln),
        "two_stage" => Ok(ModelKind::TwoStage),
        "mtl_mse" => Ok(ModelKind::MtlMse),
        other => Err(CliError::new(format!(
            "unknown model kind {other:?} (expected optdist, ziln, two_stage, or mtl_mse)"
        ))),
    }
}
