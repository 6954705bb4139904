//! Input loading with usage-error mapping, and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use coherent_core::corpus::{frame_windows, read_jsonl, split_sentences, Document, Vocab};
use coherent_core::model::{load_checkpoint, Checkpoint};
use coherent_core::seed::sha256_hex;
use coherent_core::teacher::{CachedOracle, ExternalOracle, HashOracle, SimilarityOracle};
use serde::Serialize;

use crate::config::RunConfig;
use crate::exit::usage;

pub fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    match path {
        Some(p) => Ok(p),
        None => Err(usage(format!("missing required setting {key} (--{})", key.replace('_', "-"))).into()),
    }
}

fn must_exist(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())).into())
    }
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    must_exist(path, "corpus")?;
    read_jsonl(path).map_err(|e| usage(format!("cannot read corpus {}: {e}", path.display())).into())
}

/// Corpus documents, re-framed into windows when `frame_corpus` is set.
pub fn load_corpus(cfg: &RunConfig) -> Result<Vec<Document>> {
    let docs = load_documents(require(&cfg.corpus, "corpus")?)?;
    if !cfg.frame_corpus {
        return Ok(docs);
    }
    Ok(docs
        .iter()
        .flat_map(|d| {
            let mut sentences = split_sentences(&d.input_text);
            sentences.extend(split_sentences(&d.target_text));
            frame_windows(&d.id, &sentences, cfg.k_target)
        })
        .collect())
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    must_exist(path, "vocabulary")?;
    Vocab::load(path).map_err(|e| usage(format!("cannot read vocabulary {}: {e}", path.display())).into())
}

pub fn load_model(cfg: &RunConfig) -> Result<Checkpoint> {
    let dir = require(&cfg.checkpoint, "checkpoint")?;
    must_exist(dir, "checkpoint")?;
    load_checkpoint(dir).map_err(|e| usage(format!("cannot load checkpoint {}: {e}", dir.display())).into())
}

/// Vocabulary from `vocab`, else the checkpoint's.
pub fn vocab_for(cfg: &RunConfig, ckpt: Option<&Checkpoint>) -> Result<Vocab> {
    if let Some(p) = &cfg.vocab {
        return load_vocab(p);
    }
    ckpt.and_then(|c| c.vocab.clone())
        .ok_or_else(|| usage("no vocabulary: set --vocab or use a checkpoint that stores one").into())
}

pub fn oracle(cfg: &RunConfig, vocab: &Vocab) -> Result<Box<dyn SimilarityOracle>> {
    Ok(match &cfg.teacher_embeddings {
        Some(p) => {
            must_exist(p, "teacher embeddings")?;
            let ext = ExternalOracle::load(p, vocab.clone())
                .map_err(|e| usage(format!("cannot read teacher embeddings {}: {e}", p.display())))?;
            Box::new(CachedOracle::new(ext))
        }
        None => Box::new(CachedOracle::new(HashOracle::default())),
    })
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    Ok(())
}

/// SHA-256 of a file, or of every file below a directory keyed by
/// relative path.
fn hash_path(path: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            hash_path(&e, out)?;
        }
    } else if path.is_file() {
        let bytes = fs::read(path).with_context(|| format!("cannot hash {}", path.display()))?;
        out.insert(path.display().to_string(), sha256_hex(&bytes));
    }
    Ok(())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Records the resolved config, seed and input/output hashes next to the
/// outputs.
pub fn write_manifest(path: &Path, command: &str, cfg: &RunConfig, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    let mut m = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
    };
    for p in inputs {
        hash_path(p, &mut m.inputs)?;
    }
    for p in outputs {
        hash_path(p, &mut m.outputs)?;
    }
    create_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

/// `<file>.manifest.json` beside a single-file output.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
