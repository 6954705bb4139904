//! Nucleus sampling with temperature and the forced `<dis>` rule.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, BOS, DIS, EOS, PAD, SEN, UNK};
use crate::error::{Error, Result};
use crate::model::{softmax_in_place, Model, DECODER_START};
use crate::seed::{rng_for, Salt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub top_p: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub max_sentences: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            top_p: 0.9,
            temperature: 0.7,
            max_new_tokens: 120,
            max_sentences: 10,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.max_new_tokens == 0 || self.max_sentences == 0 {
            return Err(Error::Config("max_new_tokens and max_sentences must be positive".into()));
        }
        Ok(())
    }
}

pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    Ok(logits.iter().map(|l| l / temperature).collect())
}

/// Keeps the smallest most-probable prefix (ties by ascending id) whose
/// mass reaches `p`, renormalized; everything else becomes 0.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Vec<f64> {
    if p >= 1.0 {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = 0;
    let mut mass = 0.0;
    for &i in &order {
        mass += probs[i];
        kept += 1;
        if mass >= p {
            break;
        }
    }
    let mut out = vec![0.0; probs.len()];
    for &i in &order[..kept] {
        out[i] = probs[i] / mass;
    }
    out
}

/// Drops the structural tokens. `<unk>` is kept: it is never sampled, and
/// in reference texts it stands for a real word.
pub fn strip_special(ids: &[TokenId]) -> Vec<TokenId> {
    ids.iter()
        .copied()
        .filter(|&t| !matches!(t, PAD | BOS | EOS | SEN | DIS))
        .collect()
}

/// Index drawn from a distribution that sums to 1 (up to rounding).
fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Samples a continuation of `input`. The returned ids follow the implicit
/// leading `<bos>` and never contain it. `<dis>` appears only, and always,
/// right after `<sen>` (a `<sen>` is never sampled without room for it);
/// `<pad>` and `<unk>` are never produced, and a sentence cannot start with
/// `<sen>`.
pub fn generate<R: Rng + ?Sized>(model: &Model, input: &[TokenId], cfg: &DecodeConfig, rng: &mut R) -> Result<Vec<TokenId>> {
    cfg.validate()?;
    let max_len = model.config().max_len;
    let memory = model.encode(input, None)?.memory;
    // Decoder input is the shifted target: start token, <bos>, then output.
    let mut prefix = vec![DECODER_START, BOS];
    let mut out: Vec<TokenId> = Vec::new();
    let mut sentences = 0;
    while out.len() < cfg.max_new_tokens && prefix.len() <= max_len {
        let next = if out.last() == Some(&SEN) {
            DIS
        } else {
            let h = model.decode_states(&prefix, &memory.view(), None)?.h;
            let mut logits = model.lm_logits(&h.slice(ndarray::s![h.nrows() - 1.., ..])).row(0).to_vec();
            let sentence_start = matches!(out.last(), None | Some(&DIS));
            // A <sen> needs room for its forced <dis>.
            let no_room = out.len() + 2 > cfg.max_new_tokens || prefix.len() + 1 > max_len;
            for (id, l) in logits.iter_mut().enumerate() {
                let id = id as TokenId;
                if matches!(id, PAD | UNK | BOS | DIS) || (id == SEN && (sentence_start || no_room)) {
                    *l = f64::NEG_INFINITY;
                }
            }
            let mut probs = apply_temperature(&logits, cfg.temperature)?;
            softmax_in_place(&mut probs);
            sample_index(&nucleus_filter(&probs, cfg.top_p), rng) as TokenId
        };
        out.push(next);
        prefix.push(next);
        if next == EOS {
            break;
        }
        if next == DIS {
            sentences += 1;
            if sentences >= cfg.max_sentences {
                break;
            }
        }
    }
    Ok(out)
}

/// Generates for every `(id, input)` prompt in parallel; each prompt draws
/// from its own stream seeded by `(cfg.seed, id)`, so output does not
/// depend on prompt order or thread count.
pub fn generate_all(model: &Model, prompts: &[(String, Vec<TokenId>)], cfg: &DecodeConfig) -> Result<Vec<Vec<TokenId>>> {
    cfg.validate()?;
    prompts
        .par_iter()
        .map(|(id, input)| {
            let mut rng = rng_for(cfg.seed, &[Salt::Str("decode"), Salt::Str(id)]);
            generate(model, input, cfg, &mut rng)
        })
        .collect()
}
