//! Reference-based and reference-free generation metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::teacher::{golden_similarity, SimilarityOracle};

const BLEU_EPSILON: f64 = 1e-9;

/// Metric values keyed by name (`ppl`, `b1`, `lr2`, ...) plus bookkeeping
/// counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

pub fn ngrams(tokens: &[TokenId], n: usize) -> impl Iterator<Item = &[TokenId]> {
    tokens.windows(n.max(1)).filter(move |_| n > 0)
}

fn counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut m = HashMap::new();
    for g in ngrams(tokens, n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Corpus-level BLEU-n with clipped counts against one reference per
/// candidate and the standard brevity penalty. Zero precisions become
/// 1e-9 unless every order is zero, which scores exactly 0.
pub fn bleu_n(candidates: &[Vec<TokenId>], references: &[Vec<TokenId>], n: usize) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if candidates.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} candidates, {} references",
            candidates.len(),
            references.len()
        )));
    }
    if n == 0 {
        return Err(Error::Config("BLEU order must be at least 1".into()));
    }
    let mut precisions = Vec::with_capacity(n);
    for k in 1..=n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (c, r) in candidates.iter().zip(references) {
            let rc = counts(r, k);
            for (g, cnt) in counts(c, k) {
                matched += cnt.min(rc.get(g).copied().unwrap_or(0));
                total += cnt;
            }
        }
        precisions.push(if total == 0 { 0.0 } else { matched as f64 / total as f64 });
    }
    if precisions.iter().all(|&p| p == 0.0) {
        return Ok(0.0);
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    let log_mean = precisions.iter().map(|&p| p.max(BLEU_EPSILON).ln()).sum::<f64>() / n as f64;
    Ok(bp * log_mean.exp())
}

/// How "repeats a 4-gram at least n times" is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrMode {
    /// Some 4-gram occurs at least `n` times.
    #[default]
    Occurrences,
    /// Some 4-gram occurs at least `n + 1` times (n repeats after the first).
    Repeats,
}

/// Fraction of texts in which some 4-gram occurs often enough.
pub fn lexical_repetition(texts: &[Vec<TokenId>], n: usize, mode: LrMode) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::Empty("text set"));
    }
    if n == 0 {
        return Err(Error::Config("LR-n needs n >= 1".into()));
    }
    let need = match mode {
        LrMode::Occurrences => n,
        LrMode::Repeats => n + 1,
    };
    let hits = texts
        .iter()
        .filter(|t| counts(t, 4).values().any(|&c| c >= need))
        .count();
    Ok(hits as f64 / texts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrResult {
    pub value: f64,
    pub texts: usize,
    /// Texts with fewer than two sentences.
    pub skipped: usize,
}

/// Mean over texts of the average of each text's `n` largest pairwise
/// sentence similarities.
pub fn semantic_repetition(texts: &[Vec<Vec<TokenId>>], n: usize, oracle: &dyn SimilarityOracle) -> Result<SrResult> {
    if n == 0 {
        return Err(Error::Config("SR-n needs n >= 1".into()));
    }
    let mut scores = Vec::new();
    let mut skipped = 0;
    for sentences in texts {
        if sentences.len() < 2 {
            skipped += 1;
            continue;
        }
        let mut sims = Vec::new();
        for i in 0..sentences.len() {
            for j in i + 1..sentences.len() {
                sims.push(golden_similarity(&sentences[i], &sentences[j], oracle)?);
            }
        }
        sims.sort_by(|a, b| b.total_cmp(a));
        let top = &sims[..n.min(sims.len())];
        scores.push(top.iter().sum::<f64>() / top.len() as f64);
    }
    if scores.is_empty() {
        return Err(Error::Empty("texts with at least two sentences"));
    }
    Ok(SrResult {
        value: scores.iter().sum::<f64>() / scores.len() as f64,
        texts: scores.len(),
        skipped,
    })
}

/// Unique 4-grams over all 4-grams, pooled across the corpus.
pub fn distinct4(texts: &[Vec<TokenId>]) -> Result<f64> {
    let mut seen = std::collections::HashSet::new();
    let mut total = 0usize;
    for t in texts {
        for g in ngrams(t, 4) {
            seen.insert(g);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("4-grams"));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Per-text distinct-4 averaged over texts that have at least one 4-gram.
pub fn distinct4_per_text(texts: &[Vec<TokenId>]) -> Result<f64> {
    let ratios: Vec<f64> = texts
        .iter()
        .filter(|t| t.len() >= 4)
        .map(|t| distinct4(std::slice::from_ref(t)).expect("text has a 4-gram"))
        .collect();
    if ratios.is_empty() {
        return Err(Error::Empty("4-grams"));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}
