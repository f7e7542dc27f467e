//! Self-describing model artifact.
//!
//! One JSON file carries everything needed to score new data: the model
//! parameters, the schema, the vocabularies, the normalizer, and a snapshot
//! of the training configuration. A version field is checked on load.
//! Floats serialize in shortest round-trip form, so save/load/evaluate is
//! bit-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureSchema, Normalizer, Vocabularies};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::train::TrainConfig;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub config: TrainConfig,
    pub schema: FeatureSchema,
    pub vocab: Vocabularies,
    pub normalizer: Normalizer,
    pub model: Model,
}

impl ModelArtifact {
    pub fn new(
        config: TrainConfig,
        schema: FeatureSchema,
        vocab: Vocabularies,
        normalizer: Normalizer,
        model: Model,
    ) -> Self {
        Self {
            version: ARTIFACT_VERSION,
            config,
            schema,
            vocab,
            normalizer,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Artifact(format!("serialize: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let artifact: ModelArtifact =
            serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("parse: {e}")))?;
        if artifact.version != ARTIFACT_VERSION {
            return Err(Error::Artifact(format!(
                "version {} not supported (expected {ARTIFACT_VERSION})",
                artifact.version
            )));
        }
        Ok(artifact)
    }

    /// Field-level comparison against another schema; returns one line per
    /// mismatch, empty when compatible.
    pub fn schema_diff(&self, other: &FeatureSchema) -> Vec<String> {
        let mut diffs = Vec::new();
        let ours = &self.schema;
        if ours.label != other.label {
            diffs.push(format!(
                "label: artifact {:?} vs data {:?}",
                ours.label, other.label
            ));
        }
        let n = ours.features.len().max(other.features.len());
        for i in 0..n {
            match (ours.features.get(i), other.features.get(i)) {
                (Some(a), Some(b)) => {
                    if a.name != b.name {
                        diffs.push(format!(
                            "feature {i}: name {:?} vs {:?}",
                            a.name, b.name
                        ));
                    } else if a.kind != b.kind {
                        diffs.push(format!(
                            "feature {i} ({}): kind {:?} vs {:?}",
                            a.name, a.kind, b.kind
                        ));
                    }
                }
                (Some(a), None) => diffs.push(format!("feature {i} ({}): missing in data", a.name)),
                (None, Some(b)) => diffs.push(format!("feature {i} ({}): not in artifact", b.name)),
                (None, None) => {}
            }
        }
        diffs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureDef, FeatureKind};
    use crate::model::{DataDims, ModelKind};
    use crate::train::build_model;

    fn schema() -> FeatureSchema {
        FeatureSchema {
            features: vec![
                FeatureDef {
                    name: "token".into(),
                    kind: FeatureKind::Categorical,
                },
                FeatureDef {
                    name: "x".into(),
                    kind: FeatureKind::Continuous,
                },
            ],
            label: "y".into(),
            horizon_days: None,
        }
    }

    fn tiny_artifact() -> ModelArtifact {
        let schema = schema();
        let vocab = Vocabularies {
            maps: vec![[("a".to_string(), 1usize)].into_iter().collect()],
        };
        let normalizer = Normalizer {
            stats: vec![crate::data::FeatureStats { mean: 0.0, std: 1.0 }],
        };
        let config = TrainConfig {
            l: 2,
            shared_bottom: vec![4],
            sdn_tower: vec![4],
            selection_mlp: vec![4],
            ..TrainConfig::default()
        };
        let dims = DataDims::new(&schema, &vocab);
        let model = build_model(&config, &schema, &dims).unwrap();
        ModelArtifact::new(config, schema, vocab, normalizer, model)
    }

    #[test]
    fn roundtrip_preserves_parameters_bitwise() {
        let artifact = tiny_artifact();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        artifact.save(tmp.path()).unwrap();
        let loaded = ModelArtifact::load(tmp.path()).unwrap();
        assert_eq!(artifact.model.flatten_params(), loaded.model.flatten_params());
        assert_eq!(loaded.config.model, ModelKind::OptDist);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut artifact = tiny_artifact();
        artifact.version = 99;
        let tmp = tempfile::NamedTempFile::new().unwrap();
        let json = serde_json::to_string(&artifact).unwrap();
        std::fs::write(tmp.path(), json).unwrap();
        assert!(matches!(
            ModelArtifact::load(tmp.path()),
            Err(Error::Artifact(_))
        ));
    }

    #[test]
    fn schema_diff_names_fields() {
        let artifact = tiny_artifact();
        let mut other = schema();
        other.features[1].name = "visits".into();
        let diffs = artifact.schema_diff(&other);
        assert_eq!(diffs.len(), 1);
        assert!(diffs[0].contains("visits"), "{diffs:?}");
        assert!(artifact.schema_diff(&schema()).is_empty());
    }
}
