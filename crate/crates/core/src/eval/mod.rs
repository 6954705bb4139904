//! Perplexity, generation metrics, per-aspect perplexity, head diagnostics
//! and representation probes.

mod diagnostics;
mod metrics;
mod representations;

pub use diagnostics::{auc, order_auc, order_pairs, similarity_pairs, similarity_spearman, spearman};
pub use metrics::{
    bleu_n, distinct4, distinct4_per_text, lexical_repetition, ngrams, semantic_repetition, LrMode, MetricReport,
    SrResult,
};
pub use representations::{
    discourse_reps, probe_segment_reversal, probe_sentence_similarity, reversal_cosine, segment_cosine, sentence_rep,
    RepProbeResult, ZNormalizer,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::augment::{Aspect, Polarity, ProbeExample};
use crate::corpus::{TokenId, BOS, DIS, SEN};
use crate::error::{Error, Result};
use crate::model::{log_softmax, Model};

/// Anything that assigns `log P(target[t] | input, target[..t])`.
pub trait SequenceScorer: Sync {
    fn target_log_probs(&self, input: &[TokenId], target: &[TokenId]) -> Result<Vec<f64>>;
}

/// Teacher-forced scoring with a trained model.
pub struct ModelScorer<'a>(pub &'a Model);

impl SequenceScorer for ModelScorer<'_> {
    fn target_log_probs(&self, input: &[TokenId], target: &[TokenId]) -> Result<Vec<f64>> {
        let pass = self.0.forward(input, target, None)?;
        let logits = self.0.lm_logits(&pass.decoder.h.view());
        Ok(target
            .iter()
            .zip(logits.rows())
            .map(|(&y, row)| log_softmax(&row.to_vec())[y as usize])
            .collect())
    }
}

/// Whether target position `t` (holding `id`) counts toward perplexity.
pub fn counts_for_ppl(t: usize, id: TokenId) -> bool {
    !(t == 0 && id == BOS) && id != SEN && id != DIS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub ppl: f64,
    pub positions: usize,
    pub texts: usize,
}

/// `exp` of the mean NLL over counted positions of every `(input, target)`.
pub fn perplexity(scorer: &dyn SequenceScorer, examples: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<Perplexity> {
    use rayon::prelude::*;
    if examples.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    let per_text: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|(input, target)| {
            let lp = scorer.target_log_probs(input, target)?;
            let mut nll = 0.0;
            let mut n = 0;
            for (t, (&id, l)) in target.iter().zip(&lp).enumerate() {
                if counts_for_ppl(t, id) {
                    nll -= l;
                    n += 1;
                }
            }
            Ok((nll, n))
        })
        .collect::<Result<_>>()?;
    let nll: f64 = per_text.iter().map(|p| p.0).sum();
    let positions: usize = per_text.iter().map(|p| p.1).sum();
    if positions == 0 {
        return Err(Error::NoLmPositions);
    }
    Ok(Perplexity {
        ppl: (nll / positions as f64).exp(),
        positions,
        texts: examples.len(),
    })
}

/// Perplexity per aspect and polarity; groups with no examples are absent.
pub fn aspect_ppl(
    scorer: &dyn SequenceScorer,
    probes: &[ProbeExample],
) -> Result<BTreeMap<Aspect, BTreeMap<Polarity, Perplexity>>> {
    if probes.is_empty() {
        return Err(Error::Empty("probe set"));
    }
    let mut groups: BTreeMap<(Aspect, Polarity), Vec<(Vec<TokenId>, Vec<TokenId>)>> = BTreeMap::new();
    for p in probes {
        groups
            .entry((p.aspect, p.polarity))
            .or_default()
            .push((p.input_tokens.clone(), p.seq.ids.clone()));
    }
    let mut out: BTreeMap<Aspect, BTreeMap<Polarity, Perplexity>> = BTreeMap::new();
    for ((aspect, polarity), examples) in groups {
        out.entry(aspect).or_default().insert(polarity, perplexity(scorer, &examples)?);
    }
    Ok(out)
}
