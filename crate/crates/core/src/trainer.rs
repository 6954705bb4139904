//! Pretraining and fine-tuning loops, Adam, batching, and the
//! finite-difference gradient check.

use log::{debug, warn};
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::augment::{sample_negative, TrainingSample};
use crate::corpus::{encode_document, AugmentedSequence, Document, SegmentedDocument, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, OptimizerState};
use crate::objectives::{batch_loss, loss_pre, LossBreakdown, LossWeights, ObjectiveConfig};
use crate::seed::{derive_seed, rng_for, Salt};
use crate::teacher::SimilarityOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Human texts plus negatives under the combined loss.
    #[default]
    Pretrain,
    /// Language modeling on human texts only.
    Finetune,
    /// Fine-tuning with the auxiliary losses kept on.
    FinetuneAux,
}

impl TrainMode {
    pub fn uses_negatives(self) -> bool {
        self != TrainMode::Finetune
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Human-written samples per batch.
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub negatives_per_human: usize,
    pub mode: TrainMode,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            batch_size: 8,
            max_steps: 1000,
            seed: 0,
            negatives_per_human: 1,
            mode: TrainMode::Pretrain,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        self.objective.validate()
    }

    /// Objective actually optimized in this mode.
    pub fn effective_objective(&self) -> ObjectiveConfig {
        match self.mode {
            TrainMode::Finetune => self.objective.lm_only(),
            _ => self.objective.clone(),
        }
    }
}

/// One bias-corrected Adam update; increments `state.step`.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
    }
}

/// Loss log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub l_lm: f64,
    pub l_sen: f64,
    pub l_dis: f64,
    pub l_total: f64,
}

impl LossRecord {
    fn new(step: u64, b: &LossBreakdown) -> Self {
        LossRecord {
            step,
            l_lm: b.l_lm,
            l_sen: b.l_sen,
            l_dis: b.l_dis,
            l_total: b.l_total,
        }
    }
}

/// Encodes documents and clips them to the model's `max_len`: inputs keep
/// their first `max_len` tokens, targets keep whole leading sentences.
/// Documents whose first sentence does not fit are dropped.
pub fn prepare_corpus(docs: &[Document], vocab: &Vocab, max_len: usize) -> Result<Vec<SegmentedDocument>> {
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        let mut seg = encode_document(d, vocab)?;
        seg.input_tokens.truncate(max_len);
        match seg.truncated(max_len) {
            Some(s) => out.push(s),
            None => warn!("dropping document {}: first sentence exceeds max_len {max_len}", d.id),
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    Ok(out)
}

/// Batch for update `step` (0-based). Humans come from an epoch-seeded
/// permutation; negatives are drawn with epoch-salted seeds per source
/// document, so any step's batch can be rebuilt without replaying earlier
/// ones.
///
/// Negatives that outgrow `max_len` lose trailing sentences.
pub fn make_batch(
    corpus: &[SegmentedDocument],
    cfg: &TrainConfig,
    step: u64,
    max_len: usize,
) -> Result<Vec<TrainingSample>> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let n = corpus.len();
    let b = cfg.batch_size.min(n);
    let per_epoch = n.div_ceil(b) as u64;
    let epoch = step / per_epoch;
    let slot = (step % per_epoch) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(cfg.seed, &[Salt::Str("epoch"), Salt::Int(epoch)]));
    let humans = &order[slot * b..((slot + 1) * b).min(n)];

    let mut batch: Vec<TrainingSample> = humans.iter().map(|&i| TrainingSample::human(&corpus[i])).collect();
    if cfg.mode.uses_negatives() {
        for &i in humans {
            let doc = &corpus[i];
            for r in 0..cfg.negatives_per_human {
                let mut rng = rng_for(
                    cfg.seed,
                    &[
                        Salt::Str("negative"),
                        Salt::Int(epoch),
                        Salt::Str(&doc.id),
                        Salt::Int(r as u64),
                    ],
                );
                match sample_negative(doc, corpus, &mut rng) {
                    Ok(s) => batch.extend(fit_length(s, max_len)),
                    Err(Error::NoFeasibleNegative(id)) => debug!("no negative for {id}"),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(batch)
}

fn fit_length(sample: TrainingSample, max_len: usize) -> Option<TrainingSample> {
    if sample.seq.len() <= max_len {
        return Some(sample);
    }
    let mut sentences = sample.seq.sentences();
    while sample_len(&sentences) > max_len {
        sentences.pop();
    }
    if sentences.is_empty() {
        return None;
    }
    let k = sentences.len();
    Some(TrainingSample {
        seq: AugmentedSequence::from_sentences(&sentences),
        original_order: sample.original_order[..k].to_vec(),
        ..sample
    })
}

fn sample_len(sentences: &[Vec<TokenId>]) -> usize {
    2 + sentences.iter().map(|s| s.len() + 2).sum::<usize>()
}

/// Owns the model and optimizer state for a training run.
pub struct Trainer<'a> {
    model: Model,
    opt: OptimizerState,
    cfg: TrainConfig,
    corpus: &'a [SegmentedDocument],
    oracle: &'a dyn SimilarityOracle,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: Model,
        cfg: TrainConfig,
        corpus: &'a [SegmentedDocument],
        oracle: &'a dyn SimilarityOracle,
    ) -> Result<Self> {
        let opt = OptimizerState::zeros(model.num_parameters());
        Self::resume(model, opt, cfg, corpus, oracle)
    }

    /// Continues from saved optimizer state; the next update is
    /// `opt.step + 1`.
    pub fn resume(
        model: Model,
        opt: OptimizerState,
        cfg: TrainConfig,
        corpus: &'a [SegmentedDocument],
        oracle: &'a dyn SimilarityOracle,
    ) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::Empty("training corpus"));
        }
        if opt.m.len() != model.num_parameters() || opt.v.len() != model.num_parameters() {
            return Err(Error::Checkpoint("optimizer moments do not match the model".into()));
        }
        Ok(Trainer {
            model,
            opt,
            cfg,
            corpus,
            oracle,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    pub fn into_parts(self) -> (Model, OptimizerState) {
        (self.model, self.opt)
    }

    /// One update; aborts on a non-finite loss before touching parameters.
    pub fn step(&mut self) -> Result<LossRecord> {
        let step = self.opt.step;
        let batch = make_batch(self.corpus, &self.cfg, step, self.model.config().max_len)?;
        let objective = self.cfg.effective_objective();
        let dropout_seed = (self.model.config().dropout_rate > 0.0)
            .then(|| derive_seed(self.cfg.seed, &[Salt::Str("dropout"), Salt::Int(step)]));
        let (breakdown, grads) = loss_pre(&batch, &self.model, self.oracle, &objective, dropout_seed, true)?;
        if !breakdown.l_total.is_finite() {
            return Err(Error::NonFiniteLoss { step: step + 1 });
        }
        let grads = grads.expect("gradients requested");
        adam_update(self.model.params_mut(), &grads, &mut self.opt, &self.cfg);
        Ok(LossRecord::new(self.opt.step, &breakdown))
    }

    /// Runs until `max_steps` updates have been applied in total.
    pub fn run(&mut self, mut on_step: impl FnMut(&LossRecord)) -> Result<Vec<LossRecord>> {
        let mut log = Vec::new();
        while self.opt.step < self.cfg.max_steps {
            let rec = self.step()?;
            on_step(&rec);
            log.push(rec);
        }
        Ok(log)
    }
}

/// Relative drop of the final loss against the mean of the first `window`
/// logged values.
pub fn relative_decrease(log: &[LossRecord], window: usize) -> Option<f64> {
    if log.len() <= window || window == 0 {
        return None;
    }
    let early = log[..window].iter().map(|r| r.l_total).sum::<f64>() / window as f64;
    let tail = window.min(log.len() - window);
    let late = log[log.len() - tail..].iter().map(|r| r.l_total).sum::<f64>() / tail as f64;
    Some((early - late) / early)
}

/// Which scalar a gradient check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Lm,
    Sen,
    Dis,
    /// `l_lm + λ1 l_dis + λ2 l_sen`.
    Total,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::Lm, LossTerm::Sen, LossTerm::Dis, LossTerm::Total];

    pub fn as_str(self) -> &'static str {
        match self {
            LossTerm::Lm => "l_lm",
            LossTerm::Sen => "l_sen",
            LossTerm::Dis => "l_dis",
            LossTerm::Total => "l_total",
        }
    }

    fn scales(self, cfg: &ObjectiveConfig) -> LossWeights {
        let (lm, sen, dis) = match self {
            LossTerm::Lm => (1.0, 0.0, 0.0),
            LossTerm::Sen => (0.0, 1.0, 0.0),
            LossTerm::Dis => (0.0, 0.0, 1.0),
            LossTerm::Total => (1.0, cfg.lambda2, cfg.lambda1),
        };
        LossWeights { lm, sen, dis }
    }

    fn pick(self, b: &LossBreakdown) -> f64 {
        match self {
            LossTerm::Lm => b.l_lm,
            LossTerm::Sen => b.l_sen,
            LossTerm::Dis => b.l_dis,
            LossTerm::Total => b.l_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Minimum number of coordinates, spread evenly over tensors.
    pub coords: usize,
    pub tolerance: f64,
    /// Absolute differences below this count as exact agreement.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            coords: 200,
            tolerance: 1e-4,
            abs_floor: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    /// `abs_err / max(|analytic|, |numeric|)`.
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub term: LossTerm,
    pub coords_checked: usize,
    /// Coordinates whose absolute error is below `abs_floor`; they pass
    /// whatever their relative error.
    pub within_abs_floor: usize,
    /// Largest relative error among the remaining coordinates.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst: Option<CoordCheck>,
    /// Coordinates above tolerance.
    pub failures: Vec<CoordCheck>,
    pub passed: bool,
}

fn sample_coords(model: &Model, cfg: &GradCheckConfig, term: LossTerm) -> Vec<usize> {
    let specs = &model.layout().specs;
    let per = cfg.coords.div_ceil(specs.len()).max(1);
    let mut rng = rng_for(cfg.seed, &[Salt::Str("gradcheck"), Salt::Str(term.as_str())]);
    let mut coords = Vec::new();
    for s in specs {
        let all: Vec<usize> = s.range().collect();
        coords.extend(all.choose_multiple(&mut rng, per.min(all.len())).copied());
    }
    // Small tensors can leave the stratified draw short of the target.
    let mut rest: Vec<usize> = (0..model.num_parameters()).filter(|i| !coords.contains(i)).collect();
    rest.shuffle(&mut rng);
    let short = cfg.coords.saturating_sub(coords.len());
    coords.extend(rest.into_iter().take(short));
    coords.sort_unstable();
    coords
}

/// Central finite differences against the analytic gradient of `term` on a
/// fixed batch (dropout off).
pub fn gradient_check(
    model: &Model,
    batch: &[TrainingSample],
    oracle: &dyn SimilarityOracle,
    objective: &ObjectiveConfig,
    term: LossTerm,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let scales = term.scales(objective);
    let (_, grads) = batch_loss(batch, model, oracle, objective, scales, None, true)?;
    let grads = grads.expect("gradients requested");
    let mut probe = model.clone();
    let value = |m: &Model| -> Result<f64> {
        let (b, _) = batch_loss(batch, m, oracle, objective, scales, None, false)?;
        Ok(term.pick(&b))
    };
    let mut checks = Vec::new();
    for i in sample_coords(model, cfg, term) {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + cfg.step;
        let up = value(&probe)?;
        probe.params_mut()[i] = orig - cfg.step;
        let down = value(&probe)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        let analytic = grads[i];
        let abs_err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        checks.push(CoordCheck {
            tensor: model.layout().tensor_of(i).map(|s| s.name.clone()).unwrap_or_default(),
            index: i,
            analytic,
            numeric,
            abs_err,
            rel_err: if scale > 0.0 { abs_err / scale } else { 0.0 },
        });
    }
    let (floored, gated): (Vec<&CoordCheck>, Vec<&CoordCheck>) = checks.iter().partition(|c| c.abs_err < cfg.abs_floor);
    let worst = gated.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).map(|c| (*c).clone());
    let failures: Vec<CoordCheck> = gated.iter().filter(|c| !(c.rel_err <= cfg.tolerance)).map(|c| (*c).clone()).collect();
    Ok(GradCheckReport {
        term,
        coords_checked: checks.len(),
        within_abs_floor: floored.len(),
        max_rel_err: worst.as_ref().map_or(0.0, |w| w.rel_err),
        max_abs_err: checks.iter().map(|c| c.abs_err).fold(0.0, f64::max),
        worst,
        passed: failures.is_empty(),
        failures,
    })
}

#[cfg(test)]
mod tests;
