//! Language-modeling, similarity and order losses, and their combination
//! over a mixed batch of human-written and negative samples.

use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::TrainingSample;
use crate::corpus::{TokenId, BOS, DIS, SEN};
use crate::error::{Error, Result};
use crate::model::{extract_reps, log_softmax, scatter_rows, sigmoid, Model};
use crate::seed::{rng_for, Salt};
use crate::teacher::{similarity_matrix, SimilarityOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecialTokenLmWeight {
    /// `<sen>`/`<dis>` targets contribute to the LM loss.
    #[default]
    Count,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    /// Margin below which similarity errors are not penalized.
    pub delta: f64,
    /// Weight of the order loss.
    pub lambda1: f64,
    /// Weight of the similarity loss.
    pub lambda2: f64,
    pub special_token_lm_weight: SpecialTokenLmWeight,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            delta: 0.1,
            lambda1: 0.1,
            lambda2: 0.1,
            special_token_lm_weight: SpecialTokenLmWeight::Count,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} outside [0, 1]", self.delta)));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        Ok(())
    }

    /// Plain language modeling: both auxiliary weights zeroed.
    pub fn lm_only(&self) -> Self {
        ObjectiveConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub lm_samples: usize,
    pub lm_positions: usize,
    pub sen_samples: usize,
    pub sen_pairs: usize,
    pub dis_samples: usize,
    pub dis_pairs: usize,
    /// Order-eligible samples skipped for having fewer than two sentences.
    pub dis_skipped: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_lm: f64,
    pub l_sen: f64,
    pub l_dis: f64,
    pub l_total: f64,
    pub pair_counts: PairCounts,
}

/// Mean negative log-likelihood of `targets` at the masked-in positions.
pub fn loss_lm(distributions: &[Vec<f64>], targets: &[TokenId], mask: &[bool]) -> Result<f64> {
    if distributions.len() != targets.len() || mask.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} distributions, {} targets, {} mask entries",
            distributions.len(),
            targets.len(),
            mask.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for ((d, &y), &m) in distributions.iter().zip(targets).zip(mask) {
        if m {
            total -= d[y as usize].ln();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoLmPositions);
    }
    Ok(total / n as f64)
}

/// `loss_lm` on logits, returning `dL/dlogits` as well.
pub fn loss_lm_logits(logits: &ArrayView2<f64>, targets: &[TokenId], mask: &[bool]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != targets.len() || mask.len() != targets.len() {
        return Err(Error::Shape(format!("{} logit rows, {} targets", logits.nrows(), targets.len())));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::NoLmPositions);
    }
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (t, (&y, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        let row = logits.row(t).to_vec();
        let lp = log_softmax(&row);
        total -= lp[y as usize];
        let mut g = grad.row_mut(t);
        for (gv, l) in g.iter_mut().zip(&lp) {
            *gv = l.exp() / n as f64;
        }
        g[y as usize] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}

fn check_square(name: &str, a: &ArrayView2<f64>, k: usize) -> Result<()> {
    if a.dim() != (k, k) {
        return Err(Error::Shape(format!("{name} is {:?}, expected {k}x{k}", a.dim())));
    }
    Ok(())
}

/// `(1/K²) Σ_ij max(|p_ij − t_ij|, Δ)` over all ordered pairs.
pub fn loss_sen(p: &ArrayView2<f64>, t: &ArrayView2<f64>, delta: f64) -> Result<f64> {
    Ok(loss_sen_grad(p, t, delta)?.0)
}

/// Loss and `dL/dP`; pairs inside the margin (including the kink) get zero
/// gradient.
pub fn loss_sen_grad(p: &ArrayView2<f64>, t: &ArrayView2<f64>, delta: f64) -> Result<(f64, Array2<f64>)> {
    let k = p.nrows();
    check_square("P", p, k)?;
    check_square("T", t, k)?;
    if k == 0 {
        return Err(Error::Empty("similarity matrix"));
    }
    let norm = (k * k) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let diff = p[[i, j]] - t[[i, j]];
            if diff.abs() > delta {
                total += diff.abs();
                grad[[i, j]] = diff.signum() / norm;
            } else {
                total += delta;
            }
        }
    }
    Ok((total / norm, grad))
}

/// Mean binary cross-entropy over presented pairs `i < j`; `None` when there
/// are no pairs (fewer than two sentences).
pub fn loss_dis(q: &ArrayView2<f64>, labels: &[(usize, usize, f64)]) -> Result<Option<f64>> {
    if labels.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &(i, j, o) in labels {
        let v = *q
            .get((i, j))
            .ok_or_else(|| Error::Shape(format!("pair ({i}, {j}) outside {:?}", q.dim())))?;
        total -= o * v.ln() + (1.0 - o) * (1.0 - v).ln();
    }
    Ok(Some(total / labels.len() as f64))
}

/// `loss_dis` on logits `z` (`q = sigmoid(z)`), with `dL/dz`.
pub fn loss_dis_logits(z: &ArrayView2<f64>, labels: &[(usize, usize, f64)]) -> Result<Option<(f64, Array2<f64>)>> {
    if labels.is_empty() {
        return Ok(None);
    }
    let c = 1.0 / labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(z.dim());
    for &(i, j, o) in labels {
        let v = *z
            .get((i, j))
            .ok_or_else(|| Error::Shape(format!("pair ({i}, {j}) outside {:?}", z.dim())))?;
        // softplus(v) - o v == -o log q - (1 - o) log(1 - q)
        let softplus = v.max(0.0) + (-v.abs()).exp().ln_1p();
        total += softplus - o * v;
        grad[[i, j]] = c * (sigmoid(v) - o);
    }
    Ok(Some((total * c, grad)))
}

/// Golden similarity matrix for the sample's presented sentences.
pub fn teacher_targets(sample: &TrainingSample, oracle: &dyn SimilarityOracle) -> Result<Array2<f64>> {
    let t = similarity_matrix(&sample.seq.sentences(), oracle)?;
    let k = t.len();
    Ok(Array2::from_shape_fn((k, k), |(i, j)| t[i][j]))
}

/// LM position mask over the target: never the leading `<bos>`; `<sen>` and
/// `<dis>` only under [`SpecialTokenLmWeight::Count`].
pub fn lm_mask(ids: &[TokenId], weight: SpecialTokenLmWeight) -> Vec<bool> {
    ids.iter()
        .enumerate()
        .map(|(t, &id)| {
            if t == 0 && id == BOS {
                return false;
            }
            weight == SpecialTokenLmWeight::Count || (id != SEN && id != DIS)
        })
        .collect()
}

/// Per-sample loss terms; `None` marks a loss that does not apply.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleLoss {
    pub lm: Option<f64>,
    pub sen: Option<f64>,
    pub dis: Option<f64>,
    pub lm_positions: usize,
    pub sen_pairs: usize,
    pub dis_pairs: usize,
    pub dis_skipped: bool,
}

/// Gradient scales for each loss term of one sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossWeights {
    pub lm: f64,
    pub sen: f64,
    pub dis: f64,
}

/// Forward (and, when `grads` is given, backward) for one sample. Terms with
/// zero weight are still evaluated but send no gradient.
pub fn sample_loss(
    model: &Model,
    sample: &TrainingSample,
    teacher: Option<&ArrayView2<f64>>,
    cfg: &ObjectiveConfig,
    weights: LossWeights,
    dropout: Option<&mut ChaCha8Rng>,
    grads: Option<&mut [f64]>,
) -> Result<SampleLoss> {
    let kind = sample.kind;
    let ids = &sample.seq.ids;
    let pass = model.forward(&sample.input_tokens, ids, dropout)?;
    let h = pass.decoder.h.view();
    let mut dh = Array2::zeros(h.dim());
    let mut out = SampleLoss::default();
    let mut grads = grads;
    let want = |w: f64| w != 0.0;

    if kind.trains_lm() {
        let mask = lm_mask(ids, cfg.special_token_lm_weight);
        let logits = model.lm_logits(&h);
        let (l, dlogits) = loss_lm_logits(&logits.view(), ids, &mask)?;
        out.lm = Some(l);
        out.lm_positions = mask.iter().filter(|&&m| m).count();
        if let Some(g) = grads.as_deref_mut() {
            if want(weights.lm) {
                dh += &model.lm_backward(&h, &(dlogits * weights.lm).view(), g);
            }
        }
    }

    let needs_sen = kind.trains_similarity() && sample.num_sentences() > 0;
    let needs_dis = kind.trains_order();
    if needs_sen || needs_dis {
        let reps = extract_reps(&h, &sample.seq)?;
        if needs_sen {
            let t = teacher.ok_or(Error::Empty("teacher targets"))?;
            let hs = reps.sentence.view();
            let p = model.similarity_matrix(&hs);
            let (l, dp) = loss_sen_grad(&p.view(), t, cfg.delta)?;
            out.sen = Some(l);
            out.sen_pairs = p.len();
            if let Some(g) = grads.as_deref_mut() {
                if want(weights.sen) {
                    let dhs = model.similarity_backward(&hs, &p.view(), &(dp * weights.sen).view(), g);
                    scatter_rows(&mut dh, &sample.seq.sen_positions, &dhs);
                }
            }
        }
        if needs_dis {
            let labels = sample.order_labels();
            let hd = reps.discourse.view();
            let z = hd.dot(&model.order_weights()).dot(&hd.t());
            match loss_dis_logits(&z.view(), &labels)? {
                Some((l, dz)) => {
                    out.dis = Some(l);
                    out.dis_pairs = labels.len();
                    if let Some(g) = grads.as_deref_mut() {
                        if want(weights.dis) {
                            let dhd = model.order_backward(&hd, &(dz * weights.dis).view(), g);
                            scatter_rows(&mut dh, &sample.seq.dis_positions, &dhd);
                        }
                    }
                }
                None => out.dis_skipped = true,
            }
        }
    }

    if let Some(g) = grads {
        if dh.iter().any(|&v| v != 0.0) {
            model.backward(&pass, &dh.view(), g);
        }
    }
    Ok(out)
}

/// Number of samples each loss applies to; each loss is a batch mean over
/// exactly these samples.
fn batch_counts(batch: &[TrainingSample], cfg: &ObjectiveConfig) -> Result<(usize, usize, usize)> {
    let n_lm = batch.iter().filter(|s| s.kind.trains_lm()).count();
    if n_lm == 0 {
        return Err(Error::NoHumanSample);
    }
    let n_sen = batch
        .iter()
        .filter(|s| s.kind.trains_similarity() && s.num_sentences() > 0)
        .count();
    let n_dis = batch
        .iter()
        .filter(|s| s.kind.trains_order() && s.num_sentences() >= 2)
        .count();
    cfg.validate()?;
    Ok((n_lm, n_sen, n_dis))
}

/// Batch loss (and gradient of `l_total` when `with_grads`). Per-sample work
/// runs in parallel; results are reduced in batch order so sums are
/// reproducible. `dropout_seed` enables seeded dropout masks per sample.
pub fn loss_pre(
    batch: &[TrainingSample],
    model: &Model,
    oracle: &dyn SimilarityOracle,
    cfg: &ObjectiveConfig,
    dropout_seed: Option<u64>,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let scales = LossWeights {
        lm: 1.0,
        sen: cfg.lambda2,
        dis: cfg.lambda1,
    };
    batch_loss(batch, model, oracle, cfg, scales, dropout_seed, with_grads)
}

/// Like [`loss_pre`], but the returned gradient is that of
/// `scales.lm * l_lm + scales.sen * l_sen + scales.dis * l_dis`. The
/// breakdown's `l_total` still uses the configured λs.
pub fn batch_loss(
    batch: &[TrainingSample],
    model: &Model,
    oracle: &dyn SimilarityOracle,
    cfg: &ObjectiveConfig,
    scales: LossWeights,
    dropout_seed: Option<u64>,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let (n_lm, n_sen, n_dis) = batch_counts(batch, cfg)?;
    let weights = LossWeights {
        lm: scales.lm / n_lm as f64,
        sen: if n_sen > 0 { scales.sen / n_sen as f64 } else { 0.0 },
        dis: if n_dis > 0 { scales.dis / n_dis as f64 } else { 0.0 },
    };
    let per_sample: Vec<(SampleLoss, Option<Vec<f64>>)> = batch
        .par_iter()
        .enumerate()
        .map(|(idx, sample)| {
            let teacher = if sample.kind.trains_similarity() && sample.num_sentences() > 0 {
                Some(teacher_targets(sample, oracle)?)
            } else {
                None
            };
            let mut rng = dropout_seed.map(|s| rng_for(s, &[Salt::Str("dropout"), Salt::Int(idx as u64)]));
            let mut g = with_grads.then(|| model.zero_grads());
            let loss = sample_loss(
                model,
                sample,
                teacher.as_ref().map(|t| t.view()).as_ref(),
                cfg,
                weights,
                rng.as_mut(),
                g.as_deref_mut(),
            )?;
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;

    let mut b = LossBreakdown::default();
    let mut grads = with_grads.then(|| model.zero_grads());
    for (loss, g) in per_sample {
        let c = &mut b.pair_counts;
        if let Some(l) = loss.lm {
            b.l_lm += l;
            c.lm_samples += 1;
            c.lm_positions += loss.lm_positions;
        }
        if let Some(l) = loss.sen {
            b.l_sen += l;
            c.sen_samples += 1;
            c.sen_pairs += loss.sen_pairs;
        }
        if let Some(l) = loss.dis {
            b.l_dis += l;
            c.dis_samples += 1;
            c.dis_pairs += loss.dis_pairs;
        }
        c.dis_skipped += loss.dis_skipped as usize;
        if let (Some(acc), Some(g)) = (grads.as_mut(), g) {
            acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
        }
    }
    b.l_lm /= n_lm as f64;
    if n_sen > 0 {
        b.l_sen /= n_sen as f64;
    }
    if n_dis > 0 {
        b.l_dis /= n_dis as f64;
    }
    b.l_total = b.l_lm + cfg.lambda1 * b.l_dis + cfg.lambda2 * b.l_sen;
    Ok((b, grads))
}
