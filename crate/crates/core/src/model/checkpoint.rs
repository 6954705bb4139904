//! Checkpoint directories: `params.bin` (little-endian f64 parameters,
//! followed by Adam first and second moments when present), `manifest.json`
//! and an optional `vocab.txt`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, TensorSpec};
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Adam moments plus the number of updates applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn zeros(n: usize) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelConfig,
    pub step: u64,
    pub has_moments: bool,
    pub seed: u64,
    pub num_parameters: usize,
    pub params_sha256: String,
    pub tensors: Vec<TensorSpec>,
    /// Training configuration snapshot, opaque to this module.
    #[serde(default)]
    pub train_config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    pub manifest: CheckpointManifest,
    pub vocab: Option<Vocab>,
}

fn to_bytes(chunks: &[&[f64]]) -> Vec<u8> {
    let n: usize = chunks.iter().map(|c| c.len()).sum();
    let mut out = Vec::with_capacity(8 * n);
    for c in chunks {
        for v in c.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    optimizer: Option<&OptimizerState>,
    seed: u64,
    vocab: Option<&Vocab>,
    train_config: serde_json::Value,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut chunks: Vec<&[f64]> = vec![model.params()];
    if let Some(o) = optimizer {
        chunks.push(&o.m);
        chunks.push(&o.v);
    }
    let bytes = to_bytes(&chunks);
    let manifest = CheckpointManifest {
        model: model.config().clone(),
        step: optimizer.map_or(0, |o| o.step),
        has_moments: optimizer.is_some(),
        seed,
        num_parameters: model.num_parameters(),
        params_sha256: sha256_hex(&bytes),
        tensors: model.layout().specs.clone(),
        train_config,
    };
    let p = dir.join(PARAMS_FILE);
    fs::write(&p, &bytes).map_err(|e| Error::io(&p, e))?;
    let p = dir.join(MANIFEST_FILE);
    fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    if let Some(v) = vocab {
        v.save(&dir.join(VOCAB_FILE))?;
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let p = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let p = dir.join(PARAMS_FILE);
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if sha256_hex(&bytes) != manifest.params_sha256 {
        return Err(Error::Checkpoint(format!("{} does not match its recorded hash", p.display())));
    }
    let n = manifest.num_parameters;
    let expected = if manifest.has_moments { 3 * n } else { n };
    if bytes.len() != 8 * expected {
        return Err(Error::Checkpoint(format!(
            "{} holds {} values, expected {expected}",
            p.display(),
            bytes.len() / 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let model = Model::from_parts(manifest.model.clone(), values[..n].to_vec())?;
    if model.layout().specs != manifest.tensors {
        return Err(Error::Checkpoint("tensor layout differs from model configuration".into()));
    }
    let optimizer = manifest.has_moments.then(|| OptimizerState {
        step: manifest.step,
        m: values[n..2 * n].to_vec(),
        v: values[2 * n..].to_vec(),
    });
    let vp = dir.join(VOCAB_FILE);
    let vocab = if vp.exists() {
        let v = Vocab::load(&vp)?;
        if v.len() != manifest.model.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocab.txt has {} entries, model expects {}",
                v.len(),
                manifest.model.vocab_size
            )));
        }
        Some(v)
    } else {
        None
    };
    Ok(Checkpoint {
        model,
        optimizer,
        manifest,
        vocab,
    })
}
