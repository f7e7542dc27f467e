//! Customer-lifetime-value prediction with adaptive sub-distribution
//! selection.
//!
//! The model keeps L candidate zero-inflated log-normal networks over a
//! shared representation and learns, per example, which one to train and
//! score with: a selection network produces assignment probabilities,
//! straight-through Gumbel-softmax hardens them during training, and an
//! alignment mechanism (focal cross-entropy against the best-loss network
//! plus a KL term against softmax of the negated losses) supervises the
//! selection. Inference picks the argmax network and predicts
//! `p * exp(mu + sigma^2 / 2)`.
//!
//! Baselines (single ZILN network, two-stage classifier/regressor,
//! multi-task MSE), ranking metrics (normalized Gini, Spearman's rho), a
//! synthetic mixture generator, and a finite-difference gradient checker
//! round out the crate. Everything trains in `f64` with analytically
//! derived gradients.

pub mod alignment;
pub mod artifact;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod repr;
pub mod rng;
pub mod selection;
pub mod train;
pub mod ziln;

pub use alignment::LossBreakdown;
pub use artifact::ModelArtifact;
pub use data::{
    build_vocab, encode, encode_all, fit_normalizer, generate_synthetic, load_csv, split,
    EncodedExample, FeatureKind, FeatureSchema, Normalizer, RawExample, SyntheticConfig,
    Vocabularies,
};
pub use error::{Error, Result};
pub use metrics::{evaluate, mae, norm_gini, selection_purity, spearman_rho, MetricsReport};
pub use model::{ArchConfig, DataDims, LossFlags, Model, ModelGrads, ModelKind};
pub use train::{
    build_model, run_sweep, train, train_step, Optimizer, Splits, SweepAxis, SweepRow,
    TrainConfig, TrainHistory,
};
pub use ziln::{ziln_expectation, ziln_nll, ZilnParams};
