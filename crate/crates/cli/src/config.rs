use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use lfs_core::synth::SyntheticSpec;
use lfs_core::trainer::TrainConfig;

use crate::UsageError;

/// Everything a run can be configured with. Every command reads the same
/// file and ignores the tables it does not need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    /// Number of videos `gen` writes.
    pub count: usize,
    pub synth: SyntheticSpec,
    pub captioner: CaptionerSpec,
    pub train: TrainConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            count: 200,
            synth: SyntheticSpec::default(),
            captioner: CaptionerSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Toy captioner built by `gen` alongside the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptionerSpec {
    pub gain: f64,
    pub seed: u64,
}

impl Default for CaptionerSpec {
    fn default() -> Self {
        Self { gain: 8.0, seed: 0 }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }
}
