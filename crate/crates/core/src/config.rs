//! Flat run configuration, read from TOML and written back resolved.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::PretrainConfig;
use crate::corpus::{default_bag_sizes, SyntheticConfig};
use crate::featurize::EmbeddingDims;
use crate::rltrain::{ClassifierConfig, TrainerConfig};
use crate::seeds::{derive, SPLIT_SCHEME};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field {field}: {msg}")]
    Invalid { field: &'static str, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Recorded so a snapshot names how component seeds were derived.
    pub seed_scheme: String,

    pub n_relations: usize,
    pub instances_per_relation: usize,
    pub na_instances: usize,
    pub noise_rate: f64,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub bag_sizes: Vec<f64>,
    /// Size of the held-out test corpus relative to the training corpus.
    pub test_scale: f64,

    pub l_max: usize,
    pub word_dim: usize,
    pub position_dim: usize,
    pub embeddings: Option<PathBuf>,
    pub window: usize,
    pub kernels: usize,
    pub batch_size: usize,

    pub positive_cap: usize,
    pub pretrain_negative_ratio: usize,
    pub reward_negative_ratio: usize,

    pub lambda: f64,
    pub pretrain_lr: f64,
    pub pretrain_momentum: f64,
    pub pretrain_max_epochs: usize,
    pub stop_band_low: f64,
    pub stop_band_high: f64,
    pub holdout_fraction: f64,

    pub rl_epochs: usize,
    pub alpha: f64,
    pub rl_lr: f64,
    pub f1_window: usize,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub classifier_momentum: f64,

    pub zero_state_redistribution: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        let pre = PretrainConfig::default();
        let tr = TrainerConfig::default();
        let clf = ClassifierConfig::default();
        RunConfig {
            seed: 0,
            seed_scheme: SPLIT_SCHEME.to_string(),
            n_relations: syn.n_relations,
            instances_per_relation: syn.instances_per_relation,
            na_instances: syn.na_instances,
            noise_rate: syn.noise_rate,
            vocab_size: syn.vocab_size,
            min_len: syn.min_len,
            max_len: syn.max_len,
            bag_sizes: default_bag_sizes(),
            test_scale: 0.25,
            l_max: 40,
            word_dim: 50,
            position_dim: 5,
            embeddings: None,
            window: clf.window,
            kernels: clf.kernels,
            batch_size: clf.batch_size,
            positive_cap: 7500,
            pretrain_negative_ratio: pre.negative_ratio,
            reward_negative_ratio: 2,
            lambda: 2.0,
            pretrain_lr: pre.lr,
            pretrain_momentum: pre.momentum,
            pretrain_max_epochs: pre.max_epochs,
            stop_band_low: pre.stop_band.0,
            stop_band_high: pre.stop_band.1,
            holdout_fraction: pre.holdout_fraction,
            rl_epochs: tr.epochs,
            alpha: tr.alpha,
            rl_lr: tr.lr,
            f1_window: tr.f1_window,
            classifier_epochs: clf.epochs,
            classifier_lr: clf.lr,
            classifier_momentum: clf.momentum,
            zero_state_redistribution: false,
        }
    }
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, msg: msg.into() }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seed_scheme != SPLIT_SCHEME {
            return Err(invalid("seed_scheme", format!("only {SPLIT_SCHEME:?} is supported")));
        }
        self.synthetic(self.seed).validate().map_err(|e| invalid("synthetic corpus", e.to_string()))?;
        if !(self.test_scale > 0.0 && self.test_scale <= 1.0) {
            return Err(invalid("test_scale", "must lie in (0, 1]"));
        }
        if self.l_max < self.window || self.window == 0 {
            return Err(invalid("l_max", format!("must be at least window ({})", self.window)));
        }
        for (field, v) in [("word_dim", self.word_dim), ("position_dim", self.position_dim), ("kernels", self.kernels), ("batch_size", self.batch_size), ("positive_cap", self.positive_cap)] {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        if !(self.lambda > 0.0) {
            return Err(invalid("lambda", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.stop_band_low) || !(self.stop_band_low..=1.0).contains(&self.stop_band_high) {
            return Err(invalid("stop_band_low", "band must satisfy 0 <= low <= high <= 1"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || self.holdout_fraction == 0.0 {
            return Err(invalid("holdout_fraction", "must lie in (0, 1)"));
        }
        if self.pretrain_max_epochs == 0 || self.classifier_epochs == 0 {
            return Err(invalid("pretrain_max_epochs", "epoch counts must be positive"));
        }
        self.trainer(0).validate().map_err(|e| invalid("rl", e.to_string()))?;
        Ok(())
    }

    pub fn dims(&self) -> EmbeddingDims {
        EmbeddingDims { word: self.word_dim, position: self.position_dim }
    }

    pub fn synthetic(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_relations: self.n_relations,
            instances_per_relation: self.instances_per_relation,
            na_instances: self.na_instances,
            noise_rate: self.noise_rate,
            vocab_size: self.vocab_size,
            min_len: self.min_len,
            max_len: self.max_len,
            bag_size_distribution: self.bag_sizes.clone(),
            seed,
        }
    }

    pub fn pretrain(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            stop_band: (self.stop_band_low, self.stop_band_high),
            max_epochs: self.pretrain_max_epochs,
            negative_ratio: self.pretrain_negative_ratio,
            holdout_fraction: self.holdout_fraction,
            lr: self.pretrain_lr,
            momentum: self.pretrain_momentum,
            batch_size: self.batch_size,
            seed,
        }
    }

    pub fn classifier(&self, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            epochs: self.classifier_epochs,
            lr: self.classifier_lr,
            momentum: self.classifier_momentum,
            batch_size: self.batch_size,
            window: self.window,
            kernels: self.kernels,
            seed,
        }
    }

    pub fn trainer(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            epochs: self.rl_epochs,
            alpha: self.alpha,
            lr: self.rl_lr,
            f1_window: self.f1_window,
            classifier: self.classifier(derive(seed, "classifier")),
            seed,
        }
    }
}
