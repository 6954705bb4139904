//! Negative samples for the auxiliary objectives and per-aspect probe sets.

mod lexicon;
mod probes;

pub use lexicon::Lexicons;
pub use probes::{
    build_probe_set, read_probes, write_probes, Aspect, Polarity, ProbeConfig, ProbeExample, ProbeMode, ProbeRecord,
    ProbeSet,
};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AugmentedSequence, SegmentedDocument, TokenId, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Human,
    Shuffled,
    Repeated,
    Substituted,
}

impl SampleKind {
    pub const NEGATIVES: [SampleKind; 3] = [SampleKind::Shuffled, SampleKind::Repeated, SampleKind::Substituted];

    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Human => "human",
            SampleKind::Shuffled => "shuffled",
            SampleKind::Repeated => "repeated",
            SampleKind::Substituted => "substituted",
        }
    }

    /// L_LM applies to human-written texts only.
    pub fn trains_lm(self) -> bool {
        self == SampleKind::Human
    }

    /// L_Dis applies to human-written and shuffled texts.
    pub fn trains_order(self) -> bool {
        matches!(self, SampleKind::Human | SampleKind::Shuffled)
    }

    /// L_Sen applies to every sample.
    pub fn trains_similarity(self) -> bool {
        true
    }
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(SampleKind::Human),
            "shuffled" => Ok(SampleKind::Shuffled),
            "repeated" => Ok(SampleKind::Repeated),
            "substituted" => Ok(SampleKind::Substituted),
            other => Err(Error::Config(format!("unknown sample kind {other:?}"))),
        }
    }
}

/// A decoder target with provenance and order ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input_tokens: Vec<TokenId>,
    pub seq: AugmentedSequence,
    pub kind: SampleKind,
    pub source_id: String,
    /// `original_order[presented] = original index`; identity unless shuffled.
    pub original_order: Vec<usize>,
}

impl TrainingSample {
    pub fn human(seg: &SegmentedDocument) -> Self {
        Self::with_sentences(seg, &seg.sentences, SampleKind::Human, identity(seg.sentences.len()))
    }

    fn with_sentences(seg: &SegmentedDocument, sentences: &[Vec<TokenId>], kind: SampleKind, order: Vec<usize>) -> Self {
        TrainingSample {
            input_tokens: seg.input_tokens.clone(),
            seq: AugmentedSequence::from_sentences(sentences),
            kind,
            source_id: seg.id.clone(),
            original_order: order,
        }
    }

    pub fn num_sentences(&self) -> usize {
        self.seq.num_sentences()
    }

    /// `o_ij` for every presented pair `i < j`: 1 when sentence i originally
    /// preceded sentence j.
    pub fn order_labels(&self) -> Vec<(usize, usize, f64)> {
        let k = self.original_order.len();
        let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
        for i in 0..k {
            for j in i + 1..k {
                let o = if self.original_order[i] < self.original_order[j] { 1.0 } else { 0.0 };
                out.push((i, j, o));
            }
        }
        out
    }
}

fn identity(k: usize) -> Vec<usize> {
    (0..k).collect()
}

/// Sentences permuted by a uniformly drawn non-identity permutation.
pub fn make_shuffled<R: Rng + ?Sized>(seg: &SegmentedDocument, rng: &mut R) -> Result<TrainingSample> {
    let k = seg.sentences.len();
    if k < 2 {
        return Err(Error::Unshufflable);
    }
    let mut order = identity(k);
    loop {
        order.shuffle(rng);
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            break;
        }
    }
    let sentences: Vec<Vec<TokenId>> = order.iter().map(|&o| seg.sentences[o].clone()).collect();
    Ok(TrainingSample::with_sentences(seg, &sentences, SampleKind::Shuffled, order))
}

/// Inserts a verbatim copy of a uniformly chosen sentence right after it.
pub fn make_repeated<R: Rng + ?Sized>(seg: &SegmentedDocument, rng: &mut R) -> Result<TrainingSample> {
    let k = seg.sentences.len();
    if k == 0 {
        return Err(Error::EmptyTarget);
    }
    let i = rng.random_range(0..k);
    let mut sentences = seg.sentences.clone();
    sentences.insert(i + 1, seg.sentences[i].clone());
    Ok(TrainingSample::with_sentences(seg, &sentences, SampleKind::Repeated, identity(k + 1)))
}

/// Replaces a uniformly chosen sentence with a uniformly chosen sentence of
/// a uniformly chosen other document.
pub fn make_substituted<R: Rng + ?Sized>(
    seg: &SegmentedDocument,
    corpus: &[SegmentedDocument],
    rng: &mut R,
) -> Result<TrainingSample> {
    let k = seg.sentences.len();
    if k == 0 {
        return Err(Error::EmptyTarget);
    }
    let donors: Vec<&SegmentedDocument> = corpus
        .iter()
        .filter(|d| d.id != seg.id && !d.sentences.is_empty())
        .collect();
    if donors.is_empty() {
        return Err(Error::CorpusTooSmall);
    }
    let slot = rng.random_range(0..k);
    let donor = donors[rng.random_range(0..donors.len())];
    let replacement = donor.sentences[rng.random_range(0..donor.sentences.len())].clone();
    let mut sentences = seg.sentences.clone();
    sentences[slot] = replacement;
    Ok(TrainingSample::with_sentences(seg, &sentences, SampleKind::Substituted, identity(k)))
}

/// Draws a kind uniformly among shuffled/repeated/substituted, redrawing
/// among the remaining kinds when the chosen constructor is infeasible.
pub fn sample_negative<R: Rng + ?Sized>(
    seg: &SegmentedDocument,
    corpus: &[SegmentedDocument],
    rng: &mut R,
) -> Result<TrainingSample> {
    let mut kinds = SampleKind::NEGATIVES.to_vec();
    while !kinds.is_empty() {
        let kind = kinds.remove(rng.random_range(0..kinds.len()));
        let made = match kind {
            SampleKind::Shuffled => make_shuffled(seg, rng),
            SampleKind::Repeated => make_repeated(seg, rng),
            SampleKind::Substituted => make_substituted(seg, corpus, rng),
            SampleKind::Human => unreachable!(),
        };
        match made {
            Ok(sample) => return Ok(sample),
            Err(Error::Unshufflable | Error::CorpusTooSmall) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoFeasibleNegative(seg.id.clone()))
}

/// JSON-Lines form of a training sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NegativeRecord {
    pub source_id: String,
    pub kind: SampleKind,
    pub original_order: Vec<usize>,
    pub input: String,
    pub tokens: String,
}

impl NegativeRecord {
    pub fn from_sample(sample: &TrainingSample, vocab: &Vocab) -> Self {
        NegativeRecord {
            source_id: sample.source_id.clone(),
            kind: sample.kind,
            original_order: sample.original_order.clone(),
            input: vocab.decode(&sample.input_tokens),
            tokens: vocab.decode(&sample.seq.ids),
        }
    }
}
