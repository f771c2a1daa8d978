//! The experiment configuration file: one JSON document that drives every
//! command. CLI flags override individual fields; the fully resolved config
//! is embedded in reports for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stemlm_core::error::{Error, Result};
use stemlm_core::eval::EvalFlags;
use stemlm_core::models::{ModelConfig, TrainParams, Variant};
use stemlm_core::stemmer::StemmerParams;
use stemlm_core::synth::SynthParams;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub stem_map: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Model shape settings; vocabulary size, architecture and seed are filled
/// in per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub k_mixtures: usize,
    pub dropout: f64,
    pub mtl_lambda: f64,
    pub s2w_switch_epoch: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::with_vocab(1);
        ModelSettings {
            embed_dim: d.embed_dim,
            hidden_dim: d.hidden_dim,
            num_layers: d.num_layers,
            k_mixtures: d.k_mixtures,
            dropout: d.dropout,
            mtl_lambda: d.mtl_lambda,
            s2w_switch_epoch: d.s2w_switch_epoch,
        }
    }
}

impl ModelSettings {
    pub fn to_model_config(&self, vocab_size: usize, variant: Variant, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            k_mixtures: if variant.arch() == stemlm_core::models::Arch::Mix {
                self.k_mixtures
            } else {
                1
            },
            dropout: self.dropout,
            arch: variant.arch(),
            heads: variant.heads(),
            mtl_lambda: self.mtl_lambda,
            s2w_switch_epoch: self.s2w_switch_epoch,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub include_unk: bool,
    pub include_eos: bool,
    pub slice_min_types: usize,
    pub slice_min_tokens: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            include_unk: true,
            include_eos: true,
            slice_min_types: 10,
            slice_min_tokens: 500,
        }
    }
}

impl EvalSettings {
    pub fn flags(&self) -> EvalFlags {
        EvalFlags {
            include_unk: self.include_unk,
            include_eos: self.include_eos,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_variants() -> Vec<Variant> {
    stemlm_core::models::ALL_VARIANTS.to_vec()
}

fn default_shuffle_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelSettings,
    pub train: TrainParams,
    pub stemmer: StemmerParams,
    pub eval: EvalSettings,
    pub synth: SynthParams,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_shuffle_seed")]
    pub shuffle_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            model: ModelSettings::default(),
            train: TrainParams::default(),
            stemmer: StemmerParams::default(),
            eval: EvalSettings::default(),
            synth: SynthParams::default(),
            seeds: default_seeds(),
            variants: default_variants(),
            shuffle_seed: default_shuffle_seed(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// A path that must exist at validation time.
    pub fn require_file(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| Error::Config(format!("missing required path: {what}")))?;
        if !p.is_file() {
            return Err(Error::Config(format!(
                "{what} file does not exist: {}",
                p.display()
            )));
        }
        Ok(p)
    }
}
