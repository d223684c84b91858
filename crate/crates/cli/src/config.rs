//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use protdat::data::{SplitSizes, SplitSpec};
use protdat::generation::GenerationParams;
use protdat::model::ModelConfig;
use protdat::training::{AdamWConfig, TrainConfig};

pub const OUTPUT_DIR_ENV: &str = "PROTDAT_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of all randomness: split, initialization, shuffling and sampling.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub generation: GenerationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("protdat-out"),
            data: DataSection::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            generation: GenerationSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    /// Precomputed text embeddings; absent selects the trainable word table.
    pub embeddings: Option<PathBuf>,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_steps: Option<usize>,
    pub optimizer: AdamWConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { epochs: t.epochs, batch_size: t.batch_size, max_steps: t.max_steps, optimizer: t.optimizer }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub max_len: usize,
    pub num_candidates: usize,
    pub fragment_len: usize,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationParams::default();
        Self {
            temperature: g.temperature,
            top_p: g.top_p,
            repetition_penalty: g.repetition_penalty,
            max_len: g.max_len,
            num_candidates: g.num_candidates,
            fragment_len: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            max_steps: self.train.max_steps,
            seed: self.seed,
            optimizer: self.train.optimizer.clone(),
            best_checkpoint: None,
        }
    }

    pub fn generation_params(&self) -> GenerationParams {
        let g = &self.generation;
        GenerationParams {
            temperature: g.temperature,
            top_p: g.top_p,
            repetition_penalty: g.repetition_penalty,
            max_len: g.max_len,
            seed: self.seed,
            num_candidates: g.num_candidates,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            sizes: SplitSizes::Fractions { valid: self.data.valid_fraction, test: self.data.test_fraction },
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
