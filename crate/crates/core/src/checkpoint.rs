//! Versioned JSON container for trained models.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BiomarkerSchema, NormStats};
use crate::error::{Error, Result};
use crate::harness::{AnyModel, ModelKind};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub schema_hash: String,
    /// Resolved run configuration, kept verbatim.
    pub config: serde_json::Value,
    pub normalizer: NormStats,
    pub model: AnyModel,
}

impl Checkpoint {
    pub fn new(model: AnyModel, normalizer: NormStats, config: serde_json::Value, schema: &BiomarkerSchema) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_kind: model.kind(),
            schema_hash: schema.hash(),
            config,
            normalizer,
            model,
        }
    }

    /// Checks version, schema, kind tag, tensor shapes and normalizer width.
    pub fn validate(&self, schema: &BiomarkerSchema) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.schema_hash != schema.hash() {
            return Err(Error::Checkpoint("biomarker schema hash does not match".into()));
        }
        if self.model_kind != self.model.kind() {
            return Err(Error::Checkpoint(format!(
                "kind tag {} does not match stored {} parameters",
                self.model_kind.tag(),
                self.model.kind().tag()
            )));
        }
        if self.normalizer.mean.len() != schema.len() || self.normalizer.std.len() != schema.len() {
            return Err(Error::Checkpoint("normalizer width does not match the schema".into()));
        }
        self.model
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid parameters: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str, schema: &BiomarkerSchema) -> Result<Self> {
        let c: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        c.validate(schema)?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, schema: &BiomarkerSchema) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, schema)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ModelConfig;
    use crate::trilstm::TriLstmDims;

    fn stats() -> NormStats {
        NormStats {
            mean: vec![[0.5, -1.25, 0.0]; 17],
            std: vec![[1.0, 2.0, 0.1]; 17],
            floored: vec![],
        }
    }

    fn small() -> ModelConfig {
        ModelConfig {
            tri: TriLstmDims {
                embed_dim: 3,
                hidden_dim: 4,
                head_hidden: 5,
            },
            baseline_embed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_every_kind() {
        let schema = BiomarkerSchema::glaucoma();
        for kind in ModelKind::ALL {
            let model = small().init(kind, 3);
            let c = Checkpoint::new(model, stats(), serde_json::json!({"seed": 3}), &schema);
            let back = Checkpoint::from_json(&c.to_json().unwrap(), &schema).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn file_round_trip() {
        let schema = BiomarkerSchema::glaucoma();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let c = Checkpoint::new(small().init(ModelKind::TriLstm, 1), stats(), serde_json::Value::Null, &schema);
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path, &schema).unwrap(), c);
    }

    #[test]
    fn rejects_mismatches() {
        let schema = BiomarkerSchema::glaucoma();
        let c = Checkpoint::new(small().init(ModelKind::Lstm, 1), stats(), serde_json::Value::Null, &schema);

        let mut bad = c.clone();
        bad.schema_hash = "0".repeat(64);
        assert!(matches!(bad.validate(&schema), Err(Error::Checkpoint(_))));

        let mut bad = c.clone();
        bad.model_kind = ModelKind::Rnn;
        assert!(bad.validate(&schema).is_err());

        let mut bad = c.clone();
        bad.format_version = 99;
        assert!(bad.validate(&schema).is_err());

        let text = c.to_json().unwrap().replacen("\"rows\":3", "\"rows\":4", 1);
        assert!(matches!(Checkpoint::from_json(&text, &schema), Err(Error::Checkpoint(_))));

        assert!(Checkpoint::load(Path::new("/nonexistent/model.json"), &schema).is_err());
    }
}
