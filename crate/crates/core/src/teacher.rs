//! Sentence-similarity oracles supplying golden targets for the similarity
//! head.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Salt};

pub const DEFAULT_TEACHER_DIM: usize = 64;
pub const DEFAULT_TEACHER_SEED: u64 = 0x5eed_7eac;

/// Unit-norm sentence vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding(Vec<f64>);

impl SentenceEmbedding {
    /// Normalizes `v`; fails on a zero vector.
    pub fn normalized(mut v: Vec<f64>) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(SentenceEmbedding(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &SentenceEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

pub trait SimilarityOracle: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, sentence: &[TokenId]) -> Result<SentenceEmbedding>;
}

/// Fixed pseudo-random unit vector for one token id.
pub fn token_vector(id: TokenId, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, &[Salt::Str("token-vector"), Salt::Int(id as u64)]);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Bag-of-words embedding: the renormalized mean of seeded token vectors.
pub fn default_embed(sentence: &[TokenId], seed: u64, dim: usize) -> Result<SentenceEmbedding> {
    let first = *sentence.first().ok_or(Error::EmptySentence)?;
    let mut mean = vec![0.0; dim];
    for &id in sentence {
        for (m, x) in mean.iter_mut().zip(token_vector(id, seed, dim)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= sentence.len() as f64);
    SentenceEmbedding::normalized(mean).or_else(|_| SentenceEmbedding::normalized(token_vector(first, seed, dim)))
}

/// Built-in deterministic oracle backed by [`default_embed`].
#[derive(Debug, Clone)]
pub struct HashOracle {
    pub seed: u64,
    pub dim: usize,
}

impl Default for HashOracle {
    fn default() -> Self {
        HashOracle {
            seed: DEFAULT_TEACHER_SEED,
            dim: DEFAULT_TEACHER_DIM,
        }
    }
}

impl SimilarityOracle for HashOracle {
    fn name(&self) -> &str {
        "hash-bow"
    }

    fn embed(&self, sentence: &[TokenId]) -> Result<SentenceEmbedding> {
        default_embed(sentence, self.seed, self.dim)
    }
}

/// Precomputed embeddings keyed by lowercase space-joined sentence text.
#[derive(Debug, Clone)]
pub struct ExternalOracle {
    vocab: Vocab,
    table: HashMap<String, SentenceEmbedding>,
    dim: usize,
}

impl ExternalOracle {
    /// Reads `key<TAB>f1 f2 ...` lines.
    pub fn load(path: &Path, vocab: Vocab) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected sentence-key<TAB>values".into()))?;
            let v = values
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(e.to_string()))?;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => return Err(parse_err(format!("expected {d} values, got {}", v.len()))),
                _ => {}
            }
            let emb = SentenceEmbedding::normalized(v).map_err(|e| parse_err(e.to_string()))?;
            table.insert(key.trim().to_lowercase(), emb);
        }
        Ok(ExternalOracle {
            vocab,
            table,
            dim: dim.unwrap_or(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl SimilarityOracle for ExternalOracle {
    fn name(&self) -> &str {
        "external"
    }

    fn embed(&self, sentence: &[TokenId]) -> Result<SentenceEmbedding> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let key = self.vocab.decode(sentence);
        self.table.get(&key).cloned().ok_or(Error::UnknownSentence(key))
    }
}

/// Memoizes another oracle's embeddings by token sequence.
pub struct CachedOracle<O> {
    inner: O,
    cache: Mutex<HashMap<Vec<TokenId>, SentenceEmbedding>>,
}

impl<O: SimilarityOracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        CachedOracle {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<O: SimilarityOracle> SimilarityOracle for CachedOracle<O> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn embed(&self, sentence: &[TokenId]) -> Result<SentenceEmbedding> {
        if let Some(e) = self.cache.lock().expect("oracle cache").get(sentence) {
            return Ok(e.clone());
        }
        let e = self.inner.embed(sentence)?;
        self.cache.lock().expect("oracle cache").insert(sentence.to_vec(), e.clone());
        Ok(e)
    }
}

impl SimilarityOracle for Box<dyn SimilarityOracle> {
    fn name(&self) -> &str {
        self.as_ref().name()
    }

    fn embed(&self, sentence: &[TokenId]) -> Result<SentenceEmbedding> {
        self.as_ref().embed(sentence)
    }
}

/// Maps cosine from [-1, 1] onto [0, 1] by `(cos + 1) / 2`.
pub fn scaled_similarity(a: &SentenceEmbedding, b: &SentenceEmbedding) -> f64 {
    ((a.cosine(b) + 1.0) / 2.0).clamp(0.0, 1.0)
}

pub fn golden_similarity(a: &[TokenId], b: &[TokenId], oracle: &dyn SimilarityOracle) -> Result<f64> {
    Ok(scaled_similarity(&oracle.embed(a)?, &oracle.embed(b)?))
}

/// K x K matrix of golden similarities, diagonal included.
pub fn similarity_matrix(sentences: &[Vec<TokenId>], oracle: &dyn SimilarityOracle) -> Result<Vec<Vec<f64>>> {
    let embs = sentences.iter().map(|s| oracle.embed(s)).collect::<Result<Vec<_>>>()?;
    let k = embs.len();
    let mut t = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = scaled_similarity(&embs[i], &embs[j]);
            t[i][j] = v;
            t[j][i] = v;
        }
    }
    Ok(t)
}
