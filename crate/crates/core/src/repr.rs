//! Shared representation learning.
//!
//! Categorical features are looked up in per-feature embedding tables,
//! concatenated with the z-scored continuous features in schema order, and
//! pushed through the shared bottom network. The resulting vector is the
//! single representation consumed by both the sub-distribution networks and
//! the selection network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedExample, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads, MlpTape};

/// Embedding matrix for one categorical feature: `rows x dim`, row-major.
/// Row 0 is the reserved unknown row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl EmbeddingTable {
    /// Zero-mean uniform init scaled by `1/sqrt(dim)`.
    pub fn init<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "embedding table must be non-empty, got {rows}x{dim}"
            )));
        }
        let limit = 1.0 / (dim as f64).sqrt();
        let weights = (0..rows * dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Ok(Self { rows, dim, weights })
    }

    #[inline]
    pub fn row(&self, index: usize) -> &[f64] {
        &self.weights[index * self.dim..(index + 1) * self.dim]
    }
}

/// Where each schema feature lands inside the concatenated vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSlot {
    /// Index into the categorical-feature list.
    Categorical(usize),
    /// Index into the continuous-feature list.
    Continuous(usize),
}

/// Concatenation order derived from a schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub slots: Vec<FeatureSlot>,
}

impl FeatureLayout {
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        let mut cat = 0;
        let mut cont = 0;
        let slots = schema
            .features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Categorical => {
                    let s = FeatureSlot::Categorical(cat);
                    cat += 1;
                    s
                }
                FeatureKind::Continuous => {
                    let s = FeatureSlot::Continuous(cont);
                    cont += 1;
                    s
                }
            })
            .collect();
        Self { slots }
    }
}

/// Embedding tables plus the shared bottom network.
///
/// An empty bottom (`Mlp` with no layers) passes the concatenated vector
/// through unchanged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Representation {
    pub layout: FeatureLayout,
    pub tables: Vec<EmbeddingTable>,
    pub bottom: Mlp,
}

/// Forward values recorded for the backward pass.
#[derive(Debug, Clone)]
pub struct ReprTape {
    pub concat: Vec<f64>,
    pub bottom: MlpTape,
}

/// Gradient buffers shaped like one [`Representation`].
#[derive(Debug, Clone)]
pub struct ReprGrads {
    pub tables: Vec<Vec<f64>>,
    pub bottom: MlpGrads,
}

impl Representation {
    pub fn concat_dim(&self) -> usize {
        self.layout
            .slots
            .iter()
            .map(|s| match s {
                FeatureSlot::Categorical(i) => self.tables[*i].dim,
                FeatureSlot::Continuous(_) => 1,
            })
            .sum()
    }

    pub fn output_dim(&self) -> usize {
        if self.bottom.layers.is_empty() {
            self.concat_dim()
        } else {
            self.bottom.out_dim()
        }
    }

    /// Embedding lookup and concatenation in schema order.
    pub fn embed_concat(&self, ex: &EncodedExample) -> Result<Vec<f64>> {
        let mut h = Vec::with_capacity(self.concat_dim());
        for slot in &self.layout.slots {
            match *slot {
                FeatureSlot::Categorical(i) => {
                    let idx = ex.categorical[i];
                    let table = &self.tables[i];
                    if idx >= table.rows {
                        return Err(Error::DimensionMismatch(format!(
                            "categorical index {idx} out of bounds for table of {} rows",
                            table.rows
                        )));
                    }
                    h.extend_from_slice(table.row(idx));
                }
                FeatureSlot::Continuous(i) => h.push(ex.continuous[i]),
            }
        }
        Ok(h)
    }

    /// Full forward: concat then shared bottom.
    pub fn forward(&self, ex: &EncodedExample) -> Result<(Vec<f64>, ReprTape)> {
        let concat = self.embed_concat(ex)?;
        if self.bottom.layers.is_empty() {
            let tape = ReprTape {
                concat: concat.clone(),
                bottom: MlpTape::default(),
            };
            return Ok((concat, tape));
        }
        let (out, bottom) = self.bottom.forward(&concat)?;
        Ok((out, ReprTape { concat, bottom }))
    }

    /// Inference-only forward.
    pub fn forward_inference(&self, ex: &EncodedExample) -> Result<Vec<f64>> {
        let concat = self.embed_concat(ex)?;
        if self.bottom.layers.is_empty() {
            return Ok(concat);
        }
        Ok(self.bottom.forward_inference(&concat))
    }

    /// Routes the representation gradient back through the bottom and into
    /// the embedding rows this example touched. Rows untouched by the
    /// example keep exactly zero gradient; continuous inputs are data, not
    /// parameters, so their slice of the gradient is dropped.
    pub fn backward(
        &self,
        ex: &EncodedExample,
        tape: &ReprTape,
        d_out: &[f64],
        grads: &mut ReprGrads,
    ) {
        let d_concat = if self.bottom.layers.is_empty() {
            d_out.to_vec()
        } else {
            self.bottom.backward(&tape.bottom, d_out, &mut grads.bottom)
        };
        let mut offset = 0;
        for slot in &self.layout.slots {
            match *slot {
                FeatureSlot::Categorical(i) => {
                    let dim = self.tables[i].dim;
                    let row = ex.categorical[i] * dim;
                    let table_grads = &mut grads.tables[i];
                    for d in 0..dim {
                        table_grads[row + d] += d_concat[offset + d];
                    }
                    offset += dim;
                }
                FeatureSlot::Continuous(_) => offset += 1,
            }
        }
    }
}

impl ReprGrads {
    pub fn zeros_like(repr: &Representation) -> Self {
        Self {
            tables: repr.tables.iter().map(|t| vec![0.0; t.weights.len()]).collect(),
            bottom: MlpGrads::zeros_like(&repr.bottom),
        }
    }
}
