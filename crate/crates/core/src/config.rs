//! Unified run configuration as a flat `key=value` document.
//!
//! ```text
//! # comment
//! seed=7
//! encoder.d_model=64
//! train.learning_rate=0.001
//! aug.row_drop_frac=uniform:0.05:0.3
//! ```
//!
//! Keys are grouped by prefix: `aug.`, `encoder.`, `loss.`, `train.`,
//! `tokenizer.`, `bench.`, plus top-level `seed`, `threads`, `preset` and
//! `linearize`. Unknown keys are errors.

use std::path::Path;

use crate::augment::AugmentationConfig;
use crate::benchgen::BenchConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::tokenizer::{LinearizeMode, TokenizerSettings};
use crate::trainer::{TrainConfig, TrainSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full-size encoder with the published optimizer settings.
    Paper,
    /// Small encoder and optimizer settings for single-core runs.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Parse(format!("unknown preset `{s}` (paper|desk)"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub preset: Preset,
    pub linearize: LinearizeMode,
    pub augmentation: AugmentationConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub tokenizer: TokenizerSettings,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Paper)
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("bad value for {key}: `{value}`")))
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (encoder, train) = match preset {
            Preset::Paper => (EncoderConfig::paper_scale(), TrainConfig::default()),
            Preset::Desk => (EncoderConfig::desk(), TrainConfig::desk()),
        };
        RunConfig {
            seed: 0,
            threads: 1,
            preset,
            linearize: LinearizeMode::default(),
            augmentation: AugmentationConfig::default(),
            tokenizer: TokenizerSettings {
                vocab_size: encoder.vocab_size,
                ..TokenizerSettings::default()
            },
            encoder,
            loss: LossConfig::default(),
            train,
            bench: BenchConfig::default(),
        }
    }

    /// Parses a document on top of the preset it names (paper by default).
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = key_values(text)?;
        let preset = match pairs.iter().rev().find(|(k, _)| k == "preset") {
            Some((k, v)) => parse(k, v)?,
            None => Preset::Paper,
        };
        let mut cfg = RunConfig::preset(preset);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::InvalidConfig(format!("unknown config key `{key}`"));
        let (group, field) = key.split_once('.').unwrap_or(("", key));
        match group {
            "" => match field {
                "seed" => self.set_seed(parse(key, value)?),
                "threads" => self.threads = parse(key, value)?,
                "preset" => self.preset = parse(key, value)?,
                "linearize" => self.linearize = parse(key, value)?,
                _ => return Err(unknown()),
            },
            "aug" => {
                let a = &mut self.augmentation;
                match field {
                    "p_col_dropout" => a.p_col_dropout = parse(key, value)?,
                    "p_dummy" => a.p_dummy = parse(key, value)?,
                    "p_row_shuffle" => a.p_row_shuffle = parse(key, value)?,
                    "p_onehot" => a.p_onehot = parse(key, value)?,
                    "p_missing" => a.p_missing = parse(key, value)?,
                    "jitter_std" => a.jitter_std = parse(key, value)?,
                    "p_col_shuffle" => a.p_col_shuffle = parse(key, value)?,
                    "row_drop_frac" => a.row_drop_frac = parse(key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "encoder" => {
                if !self.encoder.set(field, value)? {
                    return Err(unknown());
                }
            }
            "loss" => match field {
                "temperature" => self.loss.temperature = parse(key, value)?,
                _ => return Err(unknown()),
            },
            "train" => {
                let t = &mut self.train;
                match field {
                    "learning_rate" => t.learning_rate = parse(key, value)?,
                    "weight_decay" => t.weight_decay = parse(key, value)?,
                    "beta1" => t.beta1 = parse(key, value)?,
                    "beta2" => t.beta2 = parse(key, value)?,
                    "batch_size" => t.batch_size = parse(key, value)?,
                    "max_epochs" => t.max_epochs = parse(key, value)?,
                    "warmup_fraction" => t.warmup_fraction = parse(key, value)?,
                    "clip_max_norm" => t.clip_max_norm = parse(key, value)?,
                    "patience" => t.patience = parse(key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "tokenizer" => {
                let s = &mut self.tokenizer;
                match field {
                    "vocab_size" => s.vocab_size = parse(key, value)?,
                    "min_frequency" => s.min_frequency = parse(key, value)?,
                    "lowercase" => s.lowercase = parse(key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "bench" => {
                let b = &mut self.bench;
                match field {
                    "families" => b.families = parse(key, value)?,
                    "versions_per_seed" => b.versions_per_seed = parse(key, value)?,
                    "depth_min" => b.depth_range.0 = parse(key, value)?,
                    "depth_max" => b.depth_range.1 = parse(key, value)?,
                    "rows" => b.rows = parse(key, value)?,
                    "num_numeric" => b.num_numeric = parse(key, value)?,
                    "num_categorical" => b.num_categorical = parse(key, value)?,
                    "decoys_per_family" => b.decoys_per_family = parse(key, value)?,
                    "max_jitter" => b.max_jitter = parse(key, value)?,
                    _ => return Err(unknown()),
                }
            }
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// The run seed drives augmentation, initialization, splits and benchmarks.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.augmentation.seed = seed;
        self.train.seed = seed;
        self.bench.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        self.setup().validate()?;
        self.tokenizer.validate()?;
        self.bench.validate()
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup {
            augmentation: self.augmentation.clone(),
            encoder: self.encoder.clone(),
            loss: self.loss,
            train: TrainConfig {
                parallel: self.threads > 1,
                ..self.train.clone()
            },
        }
    }

    pub fn to_text(&self) -> String {
        let a = &self.augmentation;
        let t = &self.train;
        let s = &self.tokenizer;
        let b = &self.bench;
        let mut lines = vec![
            format!("preset={}", self.preset),
            format!("seed={}", self.seed),
            format!("threads={}", self.threads),
            format!("linearize={}", self.linearize),
            format!("aug.p_col_dropout={}", a.p_col_dropout),
            format!("aug.p_dummy={}", a.p_dummy),
            format!("aug.p_row_shuffle={}", a.p_row_shuffle),
            format!("aug.p_onehot={}", a.p_onehot),
            format!("aug.p_missing={}", a.p_missing),
            format!("aug.jitter_std={}", a.jitter_std),
            format!("aug.p_col_shuffle={}", a.p_col_shuffle),
            format!("aug.row_drop_frac={}", a.row_drop_frac),
        ];
        lines.extend(
            self.encoder
                .to_key_values()
                .into_iter()
                .map(|(k, v)| format!("encoder.{k}={v}")),
        );
        lines.extend([
            format!("loss.temperature={}", self.loss.temperature),
            format!("train.learning_rate={}", t.learning_rate),
            format!("train.weight_decay={}", t.weight_decay),
            format!("train.beta1={}", t.beta1),
            format!("train.beta2={}", t.beta2),
            format!("train.batch_size={}", t.batch_size),
            format!("train.max_epochs={}", t.max_epochs),
            format!("train.warmup_fraction={}", t.warmup_fraction),
            format!("train.clip_max_norm={}", t.clip_max_norm),
            format!("train.patience={}", t.patience),
            format!("tokenizer.vocab_size={}", s.vocab_size),
            format!("tokenizer.min_frequency={}", s.min_frequency),
            format!("tokenizer.lowercase={}", s.lowercase),
            format!("bench.families={}", b.families),
            format!("bench.versions_per_seed={}", b.versions_per_seed),
            format!("bench.depth_min={}", b.depth_range.0),
            format!("bench.depth_max={}", b.depth_range.1),
            format!("bench.rows={}", b.rows),
            format!("bench.num_numeric={}", b.num_numeric),
            format!("bench.num_categorical={}", b.num_categorical),
            format!("bench.decoys_per_family={}", b.decoys_per_family),
            format!("bench.max_jitter={}", b.max_jitter),
        ]);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

/// Non-comment `key=value` lines of a document, in order.
pub fn key_values(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key=value", n + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.set_seed(42);
        cfg.set("aug.row_drop_frac", "uniform:0.1:0.2").unwrap();
        cfg.set("encoder.num_layers", "3").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn preset_applies_before_overrides() {
        let cfg = RunConfig::parse("train.max_epochs=3\npreset=desk\n").unwrap();
        assert_eq!(cfg.encoder, EncoderConfig::desk());
        assert_eq!(cfg.train.max_epochs, 3);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(RunConfig::parse("train.lr=1").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("seed=abc").is_err());
        let mut cfg = RunConfig::default();
        cfg.set("train.max_epochs", "0").unwrap();
        assert!(cfg.validate().is_err());
    }
}
