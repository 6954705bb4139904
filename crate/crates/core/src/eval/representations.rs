//! Cosine probes on sentence (`H^s`) and discourse (`H^d`) representations,
//! z-normalized against a reference sample of pairs.

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{AugmentedSequence, TokenId};
use crate::error::{Error, Result};
use crate::model::{extract_reps, Model};

/// Mean and population standard deviation of a reference sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZNormalizer {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl ZNormalizer {
    pub fn fit(reference: &[f64]) -> Result<Self> {
        if reference.len() < 2 {
            return Err(Error::Empty("reference sample"));
        }
        let n = reference.len() as f64;
        let mean = reference.iter().sum::<f64>() / n;
        let var = reference.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::DegenerateReference);
        }
        Ok(ZNormalizer {
            mean,
            std,
            n: reference.len(),
        })
    }

    pub fn z(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    /// Mean and population std of the z-scores of `reference`; (0, 1) up to
    /// rounding when `reference` is the fitted sample.
    pub fn self_check(&self, reference: &[f64]) -> (f64, f64) {
        let zs: Vec<f64> = reference.iter().map(|&x| self.z(x)).collect();
        let n = zs.len() as f64;
        let mean = zs.iter().sum::<f64>() / n;
        let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepProbeResult {
    pub raw: f64,
    pub z: Option<f64>,
}

impl RepProbeResult {
    fn new(raw: f64, norm: Option<&ZNormalizer>) -> Self {
        RepProbeResult {
            raw,
            z: norm.map(|n| n.z(raw)),
        }
    }
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(a.dot(&b) / (na * nb))
}

/// `H^s` of `sentence` decoded after `context` sentences.
pub fn sentence_rep(
    model: &Model,
    input: &[TokenId],
    context: &[Vec<TokenId>],
    sentence: &[TokenId],
) -> Result<Array1<f64>> {
    let mut sentences = context.to_vec();
    sentences.push(sentence.to_vec());
    let seq = AugmentedSequence::from_sentences(&sentences);
    let h = model.forward(input, &seq.ids, None)?.decoder.h;
    let reps = extract_reps(&h.view(), &seq)?;
    Ok(reps.sentence.row(context.len()).to_owned())
}

/// Cosine of two sentence representations, each decoded in its own context
/// (`(input, preceding sentences, sentence)`).
pub fn probe_sentence_similarity(
    model: &Model,
    a: (&[TokenId], &[Vec<TokenId>], &[TokenId]),
    b: (&[TokenId], &[Vec<TokenId>], &[TokenId]),
    norm: Option<&ZNormalizer>,
) -> Result<RepProbeResult> {
    let ra = sentence_rep(model, a.0, a.1, a.2)?;
    let rb = sentence_rep(model, b.0, b.1, b.2)?;
    Ok(RepProbeResult::new(cosine(ra.view(), rb.view())?, norm))
}

/// `H^d` for every sentence of a text.
pub fn discourse_reps(model: &Model, input: &[TokenId], sentences: &[Vec<TokenId>]) -> Result<Array2<f64>> {
    let seq = AugmentedSequence::from_sentences(sentences);
    let h = model.forward(input, &seq.ids, None)?.decoder.h;
    Ok(extract_reps(&h.view(), &seq)?.discourse)
}

fn segment(hd: &Array2<f64>, first: usize, second: usize) -> Array1<f64> {
    concatenate(Axis(0), &[hd.row(first), hd.row(second)]).expect("equal widths")
}

/// Cosine between the segment `(k, k+1)` of one text and `(l, l+1)` of
/// another, from their normal-order discourse representations.
pub fn segment_cosine(hd_a: &Array2<f64>, k: usize, hd_b: &Array2<f64>, l: usize) -> Result<f64> {
    for (hd, i) in [(hd_a, k), (hd_b, l)] {
        if i + 1 >= hd.nrows() {
            return Err(Error::PositionOutOfRange {
                pos: i + 1,
                rows: hd.nrows(),
            });
        }
    }
    cosine(segment(hd_a, k, k + 1).view(), segment(hd_b, l, l + 1).view())
}

/// Cosine between the segment `(k, k+1)` before and after swapping the two
/// sentences; after the swap the representations are still concatenated
/// in original-sentence order.
pub fn reversal_cosine(model: &Model, input: &[TokenId], sentences: &[Vec<TokenId>], k: usize) -> Result<f64> {
    if k + 1 >= sentences.len() {
        return Err(Error::PositionOutOfRange {
            pos: k + 1,
            rows: sentences.len(),
        });
    }
    let normal = discourse_reps(model, input, sentences)?;
    let mut swapped = sentences.to_vec();
    swapped.swap(k, k + 1);
    let rev = discourse_reps(model, input, &swapped)?;
    cosine(segment(&normal, k, k + 1).view(), segment(&rev, k + 1, k).view())
}

pub fn probe_segment_reversal(
    model: &Model,
    input: &[TokenId],
    sentences: &[Vec<TokenId>],
    k: usize,
    norm: Option<&ZNormalizer>,
) -> Result<RepProbeResult> {
    Ok(RepProbeResult::new(reversal_cosine(model, input, sentences, k)?, norm))
}
