use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use trilstm::data::GeneratorConfig;
use trilstm::{Error, ModelConfig, ModelKind, TrainConfig, TriLstmDims};

/// Everything a command needs, as read from `--config` and then overridden
/// by flags. The resolved value is written next to each command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub model_kind: ModelKind,
    /// Benchmark seeds are `train.seed .. train.seed + bench_seeds`.
    pub bench_seeds: usize,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            model_kind: ModelKind::TriLstm,
            bench_seeds: 5,
            data: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            jobs: None,
            gradcheck: GradcheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub dims: TriLstmDims,
    pub baseline_hidden: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            dims: TriLstmDims {
                embed_dim: 4,
                hidden_dim: 6,
                head_hidden: 5,
            },
            baseline_hidden: 6,
            eps: 1e-5,
            tolerance: 1e-4,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            .context("reading config")
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.bench_seeds as u64).map(|k| self.train.seed + k).collect()
    }

    pub fn validate(&self) -> trilstm::Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if self.bench_seeds == 0 {
            return Err(Error::Config("bench_seeds must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> anyhow::Result<()> {
        write_file(&dir.join("config.json"), &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

pub fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}
