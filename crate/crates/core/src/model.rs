//! Model assembly: the full selection architecture and the baselines.
//!
//! `Model::batch_gradients` is the single gradient path used by training
//! and by the finite-difference checker. For the full architecture it
//! implements:
//!
//! - hard forward / soft backward selection: the loss value uses the hard
//!   one-hot mask (so unselected sub-distribution networks receive exactly
//!   zero gradient), while gradients with respect to the selection network
//!   flow through the relaxed Gumbel-softmax weights;
//! - detached pseudo labels: the alignment terms supervise the selection
//!   policy only, unless `stop_gradient` is lifted;
//! - per-chunk deterministic reduction: examples are folded in fixed-size
//!   chunks and chunk results merged in order, so results are bit-identical
//!   whether chunks run on one thread or many.
//!
//! `batch_loss_frozen` evaluates the matching differentiable surrogate at
//! frozen stochastic state (noise, masks, detached labels); its exact
//! gradient is what the analytic backward computes, which is what makes
//! central finite differences applicable to a model with sampling and
//! argmax inside.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    focal_ce, focal_ce_grad, kl_grad_alpha, kl_grad_q, kl_loss, pseudo_labels, soft_pseudo_label,
    LossBreakdown, PseudoLabels,
};
use crate::data::{EncodedExample, FeatureSchema, Vocabularies};
use crate::error::{Error, Result};
use crate::nn::{init_mlp, Activation, Mlp, MlpGrads, MlpSpec, MlpTape};
use crate::repr::{EmbeddingTable, FeatureLayout, Representation, ReprGrads};
use crate::rng::{derive_seed, seeded_rng, streams};
use crate::selection::{argmax, gumbel_softmax_st, log_softmax, softmax};
use crate::ziln::{ziln_expectation, ziln_nll_from_preacts, Sdn, SdnTape, ZilnPreacts};

/// Examples per reduction chunk. Fixed so that the merge order, and hence
/// every floating-point sum, is independent of thread count.
const CHUNK: usize = 256;

/// Which architecture to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Full architecture: L sub-distributions, selection network, alignment.
    #[serde(rename = "optdist")]
    OptDist,
    /// Single zero-inflated log-normal network.
    Ziln,
    /// Independent conversion classifier and log-value regressor.
    TwoStage,
    /// Shared bottom with conversion and value heads, MSE on the value.
    MtlMse,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ModelKind::OptDist => "optdist",
            ModelKind::Ziln => "ziln",
            ModelKind::TwoStage => "two_stage",
            ModelKind::MtlMse => "mtl_mse",
        };
        f.write_str(name)
    }
}

/// Network sizes and the run seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchConfig {
    pub num_subdistributions: usize,
    pub embedding_dim: usize,
    /// Hidden widths of the shared bottom; empty means identity.
    pub shared_bottom: Vec<usize>,
    /// Hidden widths of each sub-distribution tower.
    pub sdn_tower: Vec<usize>,
    /// Hidden widths of the selection network.
    pub selection_hidden: Vec<usize>,
    pub seed: u64,
}

/// Loss-shape switches derived from the training configuration.
#[derive(Debug, Clone, Copy)]
pub struct LossFlags {
    /// Hard straight-through selection with Gumbel noise. When false the
    /// plain softmax weights are used directly (the no-Gumbel ablation).
    pub hard_selection: bool,
    /// Include the focal cross-entropy alignment term.
    pub ce: bool,
    /// Include the KL alignment term.
    pub kl: bool,
    /// Detach pseudo labels from the loss-vector gradient.
    pub stop_gradient: bool,
    pub tau: f64,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self {
            hard_selection: true,
            ce: true,
            kl: true,
            stop_gradient: true,
            tau: 1.0,
        }
    }
}

/// Vocabulary-derived sizes needed to build a model.
#[derive(Debug, Clone)]
pub struct DataDims {
    pub table_sizes: Vec<usize>,
    pub num_continuous: usize,
}

impl DataDims {
    pub fn new(schema: &FeatureSchema, vocab: &Vocabularies) -> Self {
        Self {
            table_sizes: (0..vocab.maps.len()).map(|f| vocab.table_size(f)).collect(),
            num_continuous: schema.num_continuous(),
        }
    }
}

// ---------------------------------------------------------------------------
// Model variants.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptDistModel {
    pub repr: Representation,
    pub sdns: Vec<Sdn>,
    pub selection: Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZilnModel {
    pub repr: Representation,
    pub sdn: Sdn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStageModel {
    pub clf_repr: Representation,
    pub clf_tower: Mlp,
    pub reg_repr: Representation,
    pub reg_tower: Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtlMseModel {
    pub repr: Representation,
    pub conversion_tower: Mlp,
    pub value_tower: Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Model {
    OptDist(OptDistModel),
    Ziln(ZilnModel),
    TwoStage(TwoStageModel),
    MtlMse(MtlMseModel),
}

fn build_tables(dims: &DataDims, embedding_dim: usize, seed: u64, base: u64) -> Result<Vec<EmbeddingTable>> {
    dims.table_sizes
        .iter()
        .enumerate()
        .map(|(f, &rows)| {
            EmbeddingTable::init(rows, embedding_dim, &mut seeded_rng(seed, base + f as u64))
        })
        .collect()
}

fn build_mlp(
    input: usize,
    hidden: &[usize],
    output: usize,
    output_activation: Activation,
    seed: u64,
    stream: u64,
) -> Result<Mlp> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    init_mlp(
        &MlpSpec::new(sizes, Activation::Relu, derive_seed(seed, stream))
            .with_output_activation(output_activation),
    )
}

fn build_repr(
    layout: FeatureLayout,
    dims: &DataDims,
    arch: &ArchConfig,
    table_stream: u64,
    bottom_stream: u64,
) -> Result<Representation> {
    let tables = build_tables(dims, arch.embedding_dim, arch.seed, table_stream)?;
    let concat = dims.table_sizes.len() * arch.embedding_dim + dims.num_continuous;
    let bottom = if arch.shared_bottom.is_empty() {
        Mlp { layers: vec![] }
    } else {
        // Bottom layers are all hidden layers; the output keeps the hidden
        // activation.
        let (last, rest) = arch.shared_bottom.split_last().unwrap();
        build_mlp(
            concat,
            rest,
            *last,
            Activation::Relu,
            arch.seed,
            bottom_stream,
        )?
    };
    Ok(Representation {
        layout,
        tables,
        bottom,
    })
}

impl Model {
    pub fn build(
        kind: ModelKind,
        arch: &ArchConfig,
        schema: &FeatureSchema,
        dims: &DataDims,
    ) -> Result<Model> {
        if arch.num_subdistributions == 0 {
            return Err(Error::InvalidConfig(
                "need at least one sub-distribution".into(),
            ));
        }
        if arch.embedding_dim == 0 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 1".into()));
        }
        let layout = FeatureLayout::from_schema(schema);
        match kind {
            ModelKind::OptDist => {
                let repr = build_repr(
                    layout,
                    dims,
                    arch,
                    streams::EMBEDDING,
                    streams::SHARED_BOTTOM,
                )?;
                let h_dim = repr.output_dim();
                let sdns = (0..arch.num_subdistributions)
                    .map(|i| {
                        Ok(Sdn {
                            tower: build_mlp(
                                h_dim,
                                &arch.sdn_tower,
                                3,
                                Activation::Identity,
                                arch.seed,
                                streams::SDN + i as u64,
                            )?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let selection = build_mlp(
                    h_dim,
                    &arch.selection_hidden,
                    arch.num_subdistributions,
                    Activation::Identity,
                    arch.seed,
                    streams::SELECTION,
                )?;
                Ok(Model::OptDist(OptDistModel {
                    repr,
                    sdns,
                    selection,
                }))
            }
            ModelKind::Ziln => {
                let repr = build_repr(
                    layout,
                    dims,
                    arch,
                    streams::EMBEDDING,
                    streams::SHARED_BOTTOM,
                )?;
                let h_dim = repr.output_dim();
                let sdn = Sdn {
                    tower: build_mlp(
                        h_dim,
                        &arch.sdn_tower,
                        3,
                        Activation::Identity,
                        arch.seed,
                        streams::SDN,
                    )?,
                };
                Ok(Model::Ziln(ZilnModel { repr, sdn }))
            }
            ModelKind::TwoStage => {
                let clf_repr = build_repr(
                    layout.clone(),
                    dims,
                    arch,
                    streams::EMBEDDING,
                    streams::SHARED_BOTTOM,
                )?;
                let reg_repr = build_repr(
                    layout,
                    dims,
                    arch,
                    streams::REGRESSOR_EMBEDDING,
                    streams::REGRESSOR_BOTTOM,
                )?;
                let clf_tower = build_mlp(
                    clf_repr.output_dim(),
                    &arch.sdn_tower,
                    1,
                    Activation::Identity,
                    arch.seed,
                    streams::SDN,
                )?;
                let reg_tower = build_mlp(
                    reg_repr.output_dim(),
                    &arch.sdn_tower,
                    1,
                    Activation::Identity,
                    arch.seed,
                    streams::REGRESSOR_TOWER,
                )?;
                Ok(Model::TwoStage(TwoStageModel {
                    clf_repr,
                    clf_tower,
                    reg_repr,
                    reg_tower,
                }))
            }
            ModelKind::MtlMse => {
                let repr = build_repr(
                    layout,
                    dims,
                    arch,
                    streams::EMBEDDING,
                    streams::SHARED_BOTTOM,
                )?;
                let h_dim = repr.output_dim();
                let conversion_tower = build_mlp(
                    h_dim,
                    &arch.sdn_tower,
                    1,
                    Activation::Identity,
                    arch.seed,
                    streams::SDN,
                )?;
                let value_tower = build_mlp(
                    h_dim,
                    &arch.sdn_tower,
                    1,
                    Activation::Identity,
                    arch.seed,
                    streams::VALUE_TOWER,
                )?;
                Ok(Model::MtlMse(MtlMseModel {
                    repr,
                    conversion_tower,
                    value_tower,
                }))
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::OptDist(_) => ModelKind::OptDist,
            Model::Ziln(_) => ModelKind::Ziln,
            Model::TwoStage(_) => ModelKind::TwoStage,
            Model::MtlMse(_) => ModelKind::MtlMse,
        }
    }

    pub fn num_subdistributions(&self) -> usize {
        match self {
            Model::OptDist(m) => m.sdns.len(),
            _ => 1,
        }
    }

    /// Point prediction through the inference path.
    pub fn predict(&self, ex: &EncodedExample) -> Result<f64> {
        match self {
            Model::OptDist(m) => {
                let h = m.repr.forward_inference(ex)?;
                let alpha = softmax(&m.selection.forward_inference(&h));
                let s = argmax(&alpha);
                let preacts = m.sdns[s].forward_inference(&h);
                Ok(ziln_expectation(&preacts.params()))
            }
            Model::Ziln(m) => {
                let h = m.repr.forward_inference(ex)?;
                let preacts = m.sdn.forward_inference(&h);
                Ok(ziln_expectation(&preacts.params()))
            }
            Model::TwoStage(m) => {
                let hc = m.clf_repr.forward_inference(ex)?;
                let logit = m.clf_tower.forward_inference(&hc)[0];
                let p = Activation::Sigmoid.forward(logit);
                let hr = m.reg_repr.forward_inference(ex)?;
                let log_value = m.reg_tower.forward_inference(&hr)[0];
                Ok(p * (log_value.exp() - 1.0).max(0.0))
            }
            Model::MtlMse(m) => {
                let h = m.repr.forward_inference(ex)?;
                let logit = m.conversion_tower.forward_inference(&h)[0];
                let p = Activation::Sigmoid.forward(logit);
                let value = m.value_tower.forward_inference(&h)[0];
                Ok(p * value)
            }
        }
    }

    /// Index of the sub-distribution the model would use for this example
    /// (always 0 for single-network baselines).
    pub fn selected_index(&self, ex: &EncodedExample) -> Result<usize> {
        match self {
            Model::OptDist(m) => {
                let h = m.repr.forward_inference(ex)?;
                Ok(argmax(&softmax(&m.selection.forward_inference(&h))))
            }
            _ => Ok(0),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        self.visit_tensors(&mut |t| out.push(t));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::OptDist(m) => {
                let mut out = repr_tensors_mut(&mut m.repr);
                for sdn in &mut m.sdns {
                    out.extend(mlp_tensors_mut(&mut sdn.tower));
                }
                out.extend(mlp_tensors_mut(&mut m.selection));
                out
            }
            Model::Ziln(m) => {
                let mut out = repr_tensors_mut(&mut m.repr);
                out.extend(mlp_tensors_mut(&mut m.sdn.tower));
                out
            }
            Model::TwoStage(m) => {
                let mut out = repr_tensors_mut(&mut m.clf_repr);
                out.extend(mlp_tensors_mut(&mut m.clf_tower));
                out.extend(repr_tensors_mut(&mut m.reg_repr));
                out.extend(mlp_tensors_mut(&mut m.reg_tower));
                out
            }
            Model::MtlMse(m) => {
                let mut out = repr_tensors_mut(&mut m.repr);
                out.extend(mlp_tensors_mut(&mut m.conversion_tower));
                out.extend(mlp_tensors_mut(&mut m.value_tower));
                out
            }
        }
    }

    fn visit_tensors<'a>(&'a self, f: &mut dyn FnMut(&'a [f64])) {
        match self {
            Model::OptDist(m) => {
                repr_tensors(&m.repr, f);
                for sdn in &m.sdns {
                    mlp_tensors(&sdn.tower, f);
                }
                mlp_tensors(&m.selection, f);
            }
            Model::Ziln(m) => {
                repr_tensors(&m.repr, f);
                mlp_tensors(&m.sdn.tower, f);
            }
            Model::TwoStage(m) => {
                repr_tensors(&m.clf_repr, f);
                mlp_tensors(&m.clf_tower, f);
                repr_tensors(&m.reg_repr, f);
                mlp_tensors(&m.reg_tower, f);
            }
            Model::MtlMse(m) => {
                repr_tensors(&m.repr, f);
                mlp_tensors(&m.conversion_tower, f);
                mlp_tensors(&m.value_tower, f);
            }
        }
    }

    pub fn tensor_shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for t in self.tensors() {
            flat.extend_from_slice(t);
        }
        flat
    }

    pub fn assign_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// Mean loss and mean parameter gradients over a batch. `noise` must
    /// hold one Gumbel vector per example when hard selection is on (it is
    /// ignored otherwise). `parallel` only moves chunks across threads;
    /// results are identical either way.
    pub fn batch_gradients(
        &self,
        batch: &[EncodedExample],
        noise: &[Vec<f64>],
        flags: &LossFlags,
        parallel: bool,
    ) -> Result<(LossBreakdown, ModelGrads)> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        if matches!(self, Model::OptDist(_)) && flags.hard_selection && noise.len() != batch.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} noise vectors for {} examples",
                noise.len(),
                batch.len()
            )));
        }

        let chunk_of = |range: std::ops::Range<usize>| -> Result<(f64, f64, f64, ModelGrads)> {
            let mut grads = ModelGrads::zeros_like(self);
            let (mut s_dlm, mut s_ce, mut s_kl) = (0.0, 0.0, 0.0);
            for i in range {
                let ex = &batch[i];
                let g = noise.get(i).map(|v| v.as_slice()).unwrap_or(&[]);
                let (dlm, ce, kl) = self.example_gradients(ex, g, flags, &mut grads)?;
                s_dlm += dlm;
                s_ce += ce;
                s_kl += kl;
            }
            Ok((s_dlm, s_ce, s_kl, grads))
        };

        let ranges: Vec<std::ops::Range<usize>> = (0..batch.len())
            .step_by(CHUNK)
            .map(|start| start..(start + CHUNK).min(batch.len()))
            .collect();
        let partials: Vec<(f64, f64, f64, ModelGrads)> = if parallel && ranges.len() > 1 {
            ranges
                .into_par_iter()
                .map(chunk_of)
                .collect::<Result<Vec<_>>>()?
        } else {
            ranges
                .into_iter()
                .map(chunk_of)
                .collect::<Result<Vec<_>>>()?
        };

        let mut merged: Option<ModelGrads> = None;
        let (mut s_dlm, mut s_ce, mut s_kl) = (0.0, 0.0, 0.0);
        for (dlm, ce, kl, grads) in partials {
            s_dlm += dlm;
            s_ce += ce;
            s_kl += kl;
            match &mut merged {
                None => merged = Some(grads),
                Some(m) => m.add_assign(&grads),
            }
        }
        let mut grads = merged.expect("at least one chunk");
        grads.scale(1.0 / batch.len() as f64);
        Ok((
            LossBreakdown::from_sums(s_dlm, s_ce, s_kl, batch.len()),
            grads,
        ))
    }

    fn example_gradients(
        &self,
        ex: &EncodedExample,
        noise: &[f64],
        flags: &LossFlags,
        grads: &mut ModelGrads,
    ) -> Result<(f64, f64, f64)> {
        match (self, grads) {
            (Model::OptDist(m), ModelGrads::OptDist(g)) => {
                optdist_example_gradients(m, ex, noise, flags, g)
            }
            (Model::Ziln(m), ModelGrads::Ziln(g)) => {
                let (h, tape) = m.repr.forward(ex)?;
                let (preacts, sdn_tape) = m.sdn.forward(&h)?;
                let (loss, d_pre) = ziln_nll_from_preacts(&preacts, ex.label, ex.converted);
                let d_h = m.sdn.backward(&sdn_tape, d_pre, &mut g.sdn);
                m.repr.backward(ex, &tape, &d_h, &mut g.repr);
                Ok((loss, 0.0, 0.0))
            }
            (Model::TwoStage(m), ModelGrads::TwoStage(g)) => {
                let target = if ex.converted { 1.0 } else { 0.0 };

                let (hc, clf_repr_tape) = m.clf_repr.forward(ex)?;
                let (z_out, clf_tape) = m.clf_tower.forward(&hc)?;
                let z = z_out[0];
                let bce = Activation::Softplus.forward(z) - target * z;
                let dz = Activation::Sigmoid.forward(z) - target;
                let d_hc = m.clf_tower.backward(&clf_tape, &[dz], &mut g.clf_tower);
                m.clf_repr.backward(ex, &clf_repr_tape, &d_hc, &mut g.clf_repr);

                let mut loss = bce;
                if ex.converted {
                    // Regressor trains on positives only, in log space.
                    let (hr, reg_repr_tape) = m.reg_repr.forward(ex)?;
                    let (r_out, reg_tape) = m.reg_tower.forward(&hr)?;
                    let residual = r_out[0] - ex.label.ln_1p();
                    loss += residual * residual;
                    let d_hr =
                        m.reg_tower
                            .backward(&reg_tape, &[2.0 * residual], &mut g.reg_tower);
                    m.reg_repr.backward(ex, &reg_repr_tape, &d_hr, &mut g.reg_repr);
                }
                Ok((loss, 0.0, 0.0))
            }
            (Model::MtlMse(m), ModelGrads::MtlMse(g)) => {
                let target = if ex.converted { 1.0 } else { 0.0 };
                let (h, repr_tape) = m.repr.forward(ex)?;

                let (z_out, conv_tape) = m.conversion_tower.forward(&h)?;
                let z = z_out[0];
                let bce = Activation::Softplus.forward(z) - target * z;
                let dz = Activation::Sigmoid.forward(z) - target;
                let mut d_h = m
                    .conversion_tower
                    .backward(&conv_tape, &[dz], &mut g.conversion_tower);

                let (v_out, value_tape) = m.value_tower.forward(&h)?;
                let residual = v_out[0] - ex.label;
                let d_h_value =
                    m.value_tower
                        .backward(&value_tape, &[2.0 * residual], &mut g.value_tower);
                for (a, b) in d_h.iter_mut().zip(&d_h_value) {
                    *a += b;
                }
                m.repr.backward(ex, &repr_tape, &d_h, &mut g.repr);
                Ok((bce + residual * residual, 0.0, 0.0))
            }
            _ => unreachable!("gradient buffers built from a different model"),
        }
    }

    /// Freezes the stochastic state of a batch at the current parameters:
    /// Gumbel noise, hard masks, base soft weights, and detached labels.
    pub fn freeze_batch(
        &self,
        batch: &[EncodedExample],
        noise: &[Vec<f64>],
        flags: &LossFlags,
    ) -> Result<FrozenBatch> {
        let mut examples = Vec::with_capacity(batch.len());
        if let Model::OptDist(m) = self {
            for (i, ex) in batch.iter().enumerate() {
                let fwd = optdist_forward(
                    m,
                    ex,
                    noise.get(i).map(|v| v.as_slice()).unwrap_or(&[]),
                    flags,
                )?;
                examples.push(FrozenExample {
                    noise: fwd.noise,
                    chosen: fwd.chosen,
                    soft0: fwd.soft,
                    hard_label: fwd.labels.hard,
                    omega0: fwd.labels.soft,
                });
            }
        }
        Ok(FrozenBatch { examples })
    }

    /// Mean surrogate loss over the batch at frozen stochastic state. Its
    /// analytic gradient at the freezing point is exactly what
    /// [`Model::batch_gradients`] returns.
    pub fn batch_loss_frozen(
        &self,
        batch: &[EncodedExample],
        frozen: &FrozenBatch,
        flags: &LossFlags,
    ) -> Result<f64> {
        let mut sum = 0.0;
        match self {
            Model::OptDist(m) => {
                for (ex, fz) in batch.iter().zip(&frozen.examples) {
                    sum += optdist_surrogate_loss(m, ex, fz, flags)?;
                }
            }
            _ => {
                // Baselines have no stochastic or detached pieces; the
                // surrogate is the training loss itself.
                for ex in batch {
                    let mut grads = ModelGrads::zeros_like(self);
                    let (dlm, ce, kl) = self.example_gradients(ex, &[], flags, &mut grads)?;
                    sum += dlm + ce + kl;
                }
            }
        }
        Ok(sum / batch.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Full-architecture forward/backward.

struct OptDistForward {
    repr_tape: crate::repr::ReprTape,
    sdn_tapes: Vec<SdnTape>,
    q: Vec<f64>,
    q_grads: Vec<[f64; 3]>,
    sel_tape: MlpTape,
    alpha: Vec<f64>,
    noise: Vec<f64>,
    soft: Vec<f64>,
    chosen: usize,
    labels: PseudoLabels,
    terms: (f64, f64, f64),
}

fn optdist_forward(
    m: &OptDistModel,
    ex: &EncodedExample,
    noise: &[f64],
    flags: &LossFlags,
) -> Result<OptDistForward> {
    let (h, repr_tape) = m.repr.forward(ex)?;

    let l = m.sdns.len();
    let mut q = Vec::with_capacity(l);
    let mut q_grads = Vec::with_capacity(l);
    let mut sdn_tapes = Vec::with_capacity(l);
    for sdn in &m.sdns {
        let (preacts, tape) = sdn.forward(&h)?;
        let (loss, grad) = ziln_nll_from_preacts(&preacts, ex.label, ex.converted);
        q.push(loss);
        q_grads.push(grad);
        sdn_tapes.push(tape);
    }

    let (logits, sel_tape) = m.selection.forward(&h)?;
    let alpha = softmax(&logits);

    let (noise, soft, chosen, dlm_loss) = if flags.hard_selection {
        let (soft, _, chosen) = gumbel_softmax_st(&alpha, noise, flags.tau)?;
        // Hard forward value: the selected entry exactly.
        (noise.to_vec(), soft, chosen, q[chosen])
    } else {
        let weighted: f64 = alpha.iter().zip(&q).map(|(a, l)| a * l).sum();
        (Vec::new(), alpha.clone(), argmax(&alpha), weighted)
    };

    let labels = pseudo_labels(&q);
    let ce = if flags.ce { focal_ce(labels.hard, &alpha) } else { 0.0 };
    let kl = if flags.kl { kl_loss(&labels.soft, &alpha) } else { 0.0 };

    Ok(OptDistForward {
        repr_tape,
        sdn_tapes,
        q,
        q_grads,
        sel_tape,
        alpha,
        noise,
        soft,
        chosen,
        labels,
        terms: (dlm_loss, ce, kl),
    })
}

fn optdist_example_gradients(
    m: &OptDistModel,
    ex: &EncodedExample,
    noise: &[f64],
    flags: &LossFlags,
    grads: &mut OptDistGrads,
) -> Result<(f64, f64, f64)> {
    let fwd = optdist_forward(m, ex, noise, flags)?;
    let l = m.sdns.len();
    let alpha = &fwd.alpha;

    // Gradient of the total loss with respect to the loss vector Q.
    let mut d_q = vec![0.0; l];
    if flags.hard_selection {
        d_q[fwd.chosen] = 1.0;
    } else {
        d_q.copy_from_slice(alpha);
    }
    if flags.kl && !flags.stop_gradient {
        for (dst, src) in d_q.iter_mut().zip(kl_grad_q(&fwd.labels.soft, alpha)) {
            *dst += src;
        }
    }

    // Gradient with respect to alpha (direct) and ln(alpha) (through the
    // relaxed selection weights).
    let mut d_alpha = vec![0.0; l];
    let mut d_log_alpha = vec![0.0; l];
    if flags.hard_selection {
        // Straight-through: d loss / d soft_i = Q_i, back through the
        // tempered softmax into ln(alpha).
        let soft_dot_q: f64 = fwd.soft.iter().zip(&fwd.q).map(|(s, q)| s * q).sum();
        for i in 0..l {
            d_log_alpha[i] = fwd.soft[i] * (fwd.q[i] - soft_dot_q) / flags.tau;
        }
    } else {
        d_alpha.copy_from_slice(&fwd.q);
    }
    if flags.ce {
        for (dst, src) in d_alpha.iter_mut().zip(focal_ce_grad(fwd.labels.hard, alpha)) {
            *dst += src;
        }
    }
    if flags.kl {
        for (dst, src) in d_alpha.iter_mut().zip(kl_grad_alpha(&fwd.labels.soft, alpha)) {
            *dst += src;
        }
    }

    // Softmax Jacobians, combined into logit gradients:
    //   d/dz_k = alpha_k (d_alpha_k - <d_alpha, alpha>)
    //          + d_log_alpha_k - alpha_k * sum(d_log_alpha)
    let alpha_dot: f64 = d_alpha.iter().zip(alpha).map(|(d, a)| d * a).sum();
    let log_sum: f64 = d_log_alpha.iter().sum();
    let d_logits: Vec<f64> = (0..l)
        .map(|k| alpha[k] * (d_alpha[k] - alpha_dot) + d_log_alpha[k] - alpha[k] * log_sum)
        .collect();

    let mut d_h = m
        .selection
        .backward(&fwd.sel_tape, &d_logits, &mut grads.selection);

    for i in 0..l {
        if d_q[i] == 0.0 {
            continue;
        }
        let d_pre = [
            fwd.q_grads[i][0] * d_q[i],
            fwd.q_grads[i][1] * d_q[i],
            fwd.q_grads[i][2] * d_q[i],
        ];
        let d_h_sdn = m.sdns[i].backward(&fwd.sdn_tapes[i], d_pre, &mut grads.sdns[i]);
        for (a, b) in d_h.iter_mut().zip(&d_h_sdn) {
            *a += b;
        }
    }

    m.repr.backward(ex, &fwd.repr_tape, &d_h, &mut grads.repr);
    Ok(fwd.terms)
}

/// Per-example state captured by [`Model::freeze_batch`].
#[derive(Debug, Clone, Default)]
pub struct FrozenExample {
    pub noise: Vec<f64>,
    pub chosen: usize,
    pub soft0: Vec<f64>,
    pub hard_label: usize,
    pub omega0: Vec<f64>,
}

/// Frozen stochastic state for a whole batch (empty for baselines).
#[derive(Debug, Clone, Default)]
pub struct FrozenBatch {
    pub examples: Vec<FrozenExample>,
}

/// The differentiable surrogate the analytic gradients differentiate:
/// straight-through weights `mask0 - soft0 + soft(theta)` at frozen noise,
/// detached labels held at their frozen values.
fn optdist_surrogate_loss(
    m: &OptDistModel,
    ex: &EncodedExample,
    frozen: &FrozenExample,
    flags: &LossFlags,
) -> Result<f64> {
    let h = m.repr.forward_inference(ex)?;
    let l = m.sdns.len();
    let mut q = Vec::with_capacity(l);
    for sdn in &m.sdns {
        let out = sdn.forward_inference(&h);
        let (loss, _) = ziln_nll_from_preacts(
            &ZilnPreacts {
                a: out.a,
                b: out.b,
                c: out.c,
            },
            ex.label,
            ex.converted,
        );
        q.push(loss);
    }
    let alpha = softmax(&m.selection.forward_inference(&h));
    let log_alpha = log_softmax(&m.selection.forward_inference(&h));

    let dlm = if flags.hard_selection {
        let scaled: Vec<f64> = log_alpha
            .iter()
            .zip(&frozen.noise)
            .map(|(la, g)| (la + g) / flags.tau)
            .collect();
        let soft = softmax(&scaled);
        let mut value = 0.0;
        for i in 0..l {
            let mask0 = if i == frozen.chosen { 1.0 } else { 0.0 };
            value += (mask0 - frozen.soft0[i] + soft[i]) * q[i];
        }
        value
    } else {
        alpha.iter().zip(&q).map(|(a, l)| a * l).sum()
    };

    let ce = if flags.ce {
        focal_ce(frozen.hard_label, &alpha)
    } else {
        0.0
    };
    let kl = if flags.kl {
        if flags.stop_gradient {
            kl_loss(&frozen.omega0, &alpha)
        } else {
            kl_loss(&soft_pseudo_label(&q), &alpha)
        }
    } else {
        0.0
    };
    Ok(dlm + ce + kl)
}

// ---------------------------------------------------------------------------
// Gradient buffers.

#[derive(Debug, Clone)]
pub struct OptDistGrads {
    pub repr: ReprGrads,
    pub sdns: Vec<MlpGrads>,
    pub selection: MlpGrads,
}

#[derive(Debug, Clone)]
pub struct ZilnGrads {
    pub repr: ReprGrads,
    pub sdn: MlpGrads,
}

#[derive(Debug, Clone)]
pub struct TwoStageGrads {
    pub clf_repr: ReprGrads,
    pub clf_tower: MlpGrads,
    pub reg_repr: ReprGrads,
    pub reg_tower: MlpGrads,
}

#[derive(Debug, Clone)]
pub struct MtlMseGrads {
    pub repr: ReprGrads,
    pub conversion_tower: MlpGrads,
    pub value_tower: MlpGrads,
}

#[derive(Debug, Clone)]
pub enum ModelGrads {
    OptDist(OptDistGrads),
    Ziln(ZilnGrads),
    TwoStage(TwoStageGrads),
    MtlMse(MtlMseGrads),
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        match model {
            Model::OptDist(m) => ModelGrads::OptDist(OptDistGrads {
                repr: ReprGrads::zeros_like(&m.repr),
                sdns: m.sdns.iter().map(|s| MlpGrads::zeros_like(&s.tower)).collect(),
                selection: MlpGrads::zeros_like(&m.selection),
            }),
            Model::Ziln(m) => ModelGrads::Ziln(ZilnGrads {
                repr: ReprGrads::zeros_like(&m.repr),
                sdn: MlpGrads::zeros_like(&m.sdn.tower),
            }),
            Model::TwoStage(m) => ModelGrads::TwoStage(TwoStageGrads {
                clf_repr: ReprGrads::zeros_like(&m.clf_repr),
                clf_tower: MlpGrads::zeros_like(&m.clf_tower),
                reg_repr: ReprGrads::zeros_like(&m.reg_repr),
                reg_tower: MlpGrads::zeros_like(&m.reg_tower),
            }),
            Model::MtlMse(m) => ModelGrads::MtlMse(MtlMseGrads {
                repr: ReprGrads::zeros_like(&m.repr),
                conversion_tower: MlpGrads::zeros_like(&m.conversion_tower),
                value_tower: MlpGrads::zeros_like(&m.value_tower),
            }),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        match self {
            ModelGrads::OptDist(g) => {
                repr_grad_tensors(&g.repr, &mut out);
                for sdn in &g.sdns {
                    mlp_grad_tensors(sdn, &mut out);
                }
                mlp_grad_tensors(&g.selection, &mut out);
            }
            ModelGrads::Ziln(g) => {
                repr_grad_tensors(&g.repr, &mut out);
                mlp_grad_tensors(&g.sdn, &mut out);
            }
            ModelGrads::TwoStage(g) => {
                repr_grad_tensors(&g.clf_repr, &mut out);
                mlp_grad_tensors(&g.clf_tower, &mut out);
                repr_grad_tensors(&g.reg_repr, &mut out);
                mlp_grad_tensors(&g.reg_tower, &mut out);
            }
            ModelGrads::MtlMse(g) => {
                repr_grad_tensors(&g.repr, &mut out);
                mlp_grad_tensors(&g.conversion_tower, &mut out);
                mlp_grad_tensors(&g.value_tower, &mut out);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        match self {
            ModelGrads::OptDist(g) => {
                repr_grad_tensors_mut(&mut g.repr, &mut out);
                for sdn in &mut g.sdns {
                    mlp_grad_tensors_mut(sdn, &mut out);
                }
                mlp_grad_tensors_mut(&mut g.selection, &mut out);
            }
            ModelGrads::Ziln(g) => {
                repr_grad_tensors_mut(&mut g.repr, &mut out);
                mlp_grad_tensors_mut(&mut g.sdn, &mut out);
            }
            ModelGrads::TwoStage(g) => {
                repr_grad_tensors_mut(&mut g.clf_repr, &mut out);
                mlp_grad_tensors_mut(&mut g.clf_tower, &mut out);
                repr_grad_tensors_mut(&mut g.reg_repr, &mut out);
                mlp_grad_tensors_mut(&mut g.reg_tower, &mut out);
            }
            ModelGrads::MtlMse(g) => {
                repr_grad_tensors_mut(&mut g.repr, &mut out);
                mlp_grad_tensors_mut(&mut g.conversion_tower, &mut out);
                mlp_grad_tensors_mut(&mut g.value_tower, &mut out);
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for t in self.tensors() {
            flat.extend_from_slice(t);
        }
        flat
    }
}

fn repr_tensors<'a>(repr: &'a Representation, f: &mut dyn FnMut(&'a [f64])) {
    for t in &repr.tables {
        f(&t.weights);
    }
    mlp_tensors(&repr.bottom, f);
}

fn mlp_tensors<'a>(mlp: &'a Mlp, f: &mut dyn FnMut(&'a [f64])) {
    for layer in &mlp.layers {
        f(&layer.weights);
        f(&layer.bias);
    }
}

fn repr_tensors_mut(repr: &mut Representation) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for t in &mut repr.tables {
        out.push(&mut t.weights);
    }
    out.extend(mlp_tensors_mut(&mut repr.bottom));
    out
}

fn mlp_tensors_mut(mlp: &mut Mlp) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for layer in &mut mlp.layers {
        out.push(&mut layer.weights);
        out.push(&mut layer.bias);
    }
    out
}

fn repr_grad_tensors<'a>(g: &'a ReprGrads, out: &mut Vec<&'a [f64]>) {
    for t in &g.tables {
        out.push(t);
    }
    mlp_grad_tensors(&g.bottom, out);
}

fn mlp_grad_tensors<'a>(g: &'a MlpGrads, out: &mut Vec<&'a [f64]>) {
    for layer in &g.layers {
        out.push(&layer.weights);
        out.push(&layer.bias);
    }
}

fn repr_grad_tensors_mut<'a>(g: &'a mut ReprGrads, out: &mut Vec<&'a mut [f64]>) {
    for t in &mut g.tables {
        out.push(t);
    }
    mlp_grad_tensors_mut(&mut g.bottom, out);
}

fn mlp_grad_tensors_mut<'a>(g: &'a mut MlpGrads, out: &mut Vec<&'a mut [f64]>) {
    for layer in &mut g.layers {
        out.push(&mut layer.weights);
        out.push(&mut layer.bias);
    }
}
