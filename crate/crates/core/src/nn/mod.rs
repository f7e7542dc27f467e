//! Minimal differentiable numeric core.
//!
//! Dense layers over `f64`, reverse-mode gradients for scalar losses, Adam
//! updates, and a central-finite-difference gradient checker. Forward passes
//! record the values needed for an exact backward pass (a per-call tape);
//! gradients are analytic, never stochastic estimates.
//!
//! Everything here is single-writer during training: one step owns the
//! parameters exclusively. Frozen networks may be read from many threads.

mod activation;
mod adam;
mod gradcheck;
mod layer;
mod mlp;

pub use activation::Activation;
pub use adam::{adam_step, sgd_step, AdamHyper, AdamState, StepOutcome};
pub use gradcheck::{finite_diff_check, finite_diff_check_with_floor, GradCheckReport};
pub use layer::{DenseLayer, LayerGrads};
pub use mlp::{init_mlp, Mlp, MlpGrads, MlpSpec, MlpTape};
