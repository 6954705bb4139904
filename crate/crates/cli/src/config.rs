//! Run configuration: defaults, then the JSON file, then `HINT_SEED`, then
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use coherent_core::decode::DecodeConfig;
use coherent_core::model::ModelConfig;
use coherent_core::objectives::{ObjectiveConfig, SpecialTokenLmWeight};
use coherent_core::trainer::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::exit::{usage, UsageError};

pub const SEED_ENV: &str = "HINT_SEED";

/// Every key of the JSON config file. Model, training, objective and
/// decoding settings share one flat namespace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Precomputed sentence embeddings; the hashed bag-of-words teacher
    /// is used when absent.
    pub teacher_embeddings: Option<PathBuf>,
    pub seed: u64,
    pub min_freq: usize,
    /// Re-frame each target text as (one input sentence, up to `k_target`
    /// following sentences) windows.
    pub frame_corpus: bool,
    pub k_target: usize,

    pub d_model: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,

    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub negatives_per_human: usize,
    pub log_every: u64,

    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub special_token_lm_weight: SpecialTokenLmWeight,

    pub top_p: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub max_sentences: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let o = ObjectiveConfig::default();
        let d = DecodeConfig::default();
        RunConfig {
            corpus: None,
            vocab: None,
            checkpoint: None,
            output_dir: PathBuf::from("run"),
            teacher_embeddings: None,
            seed: 0,
            min_freq: 1,
            frame_corpus: false,
            k_target: 10,
            d_model: m.d_model,
            n_layers_enc: m.n_layers_enc,
            n_layers_dec: m.n_layers_dec,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            max_len: m.max_len,
            dropout_rate: m.dropout_rate,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            negatives_per_human: t.negatives_per_human,
            log_every: 50,
            delta: o.delta,
            lambda1: o.lambda1,
            lambda2: o.lambda2,
            special_token_lm_weight: o.special_token_lm_weight,
            top_p: d.top_p,
            temperature: d.temperature,
            max_new_tokens: d.max_new_tokens,
            max_sentences: d.max_sentences,
        }
    }
}

/// Config file plus one optional flag per config key. Flags beat
/// `HINT_SEED`, which beats the file, which beats the built-in defaults.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ConfigArgs {
    /// JSON config file; any key may also be given as a --kebab-case flag.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_embeddings: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_freq: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_corpus: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_target: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_layers_enc: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_layers_dec: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_ff: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negatives_per_human: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_every: Option<u64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Weight of the order loss.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    /// Weight of the similarity loss.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    /// `count` or `skip`: whether <sen>/<dis> targets enter the LM loss.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub special_token_lm_weight: Option<String>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sentences: Option<usize>,
}

impl ConfigArgs {
    /// Resolves the layered configuration; `seed_env` is the value of
    /// `HINT_SEED`, if set.
    pub fn resolve(&self, seed_env: Option<&str>) -> Result<RunConfig, UsageError> {
        let mut merged = match serde_json::to_value(RunConfig::default()).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is an object"),
        };
        if let Some(path) = &self.config {
            overlay(&mut merged, read_config_file(path)?);
        }
        if let Some(s) = seed_env {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
            merged.insert("seed".into(), seed.into());
        }
        match serde_json::to_value(self).expect("flags serialize") {
            Value::Object(flags) => overlay(&mut merged, flags),
            _ => unreachable!("flags are an object"),
        }
        serde_json::from_value(Value::Object(merged)).map_err(|e| UsageError(format!("invalid configuration: {e}")))
    }
}

fn overlay(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        base.insert(k, v);
    }
}

fn read_config_file(path: &Path) -> Result<Map<String, Value>, UsageError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(usage(format!("config {} must be a JSON object", path.display()))),
        Err(e) => Err(usage(format!("config {} is not valid JSON: {e}", path.display()))),
    }
}

impl RunConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers_enc: self.n_layers_enc,
            n_layers_dec: self.n_layers_dec,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_len: self.max_len,
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            delta: self.delta,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            special_token_lm_weight: self.special_token_lm_weight,
        }
    }

    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            seed: self.seed,
            negatives_per_human: self.negatives_per_human,
            mode,
            objective: self.objective(),
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            top_p: self.top_p,
            temperature: self.temperature,
            max_new_tokens: self.max_new_tokens,
            max_sentences: self.max_sentences,
            seed: self.seed,
        }
    }

    /// Checks every numeric setting a command might use.
    pub fn validate(&self) -> Result<(), UsageError> {
        let check = |r: coherent_core::Result<()>| r.map_err(|e| usage(e.to_string()));
        check(self.model_config(coherent_core::corpus::FIRST_WORD_ID as usize + 1).validate())?;
        check(self.train_config(TrainMode::Pretrain).validate())?;
        check(self.decode_config().validate())?;
        if self.k_target == 0 {
            return Err(usage("k_target must be positive"));
        }
        Ok(())
    }
}
