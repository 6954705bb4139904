//! How well the similarity and order heads fit their targets.

use crate::augment::TrainingSample;
use crate::error::{Error, Result};
use crate::model::{extract_reps, Model};
use crate::objectives::teacher_targets;
use crate::teacher::SimilarityOracle;

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!("need two equal series of length >= 2, got {} and {}", a.len(), b.len())));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Area under the ROC curve of `scores` for binary `labels` (ties count
/// one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Empty("one of the two classes"));
    }
    let r = ranks(scores);
    let rank_sum: f64 = r.iter().zip(labels).filter(|(_, &l)| l).map(|(x, _)| x).sum();
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Order-head logits and labels for every presented pair `i < j` of the
/// order-trained samples.
pub fn order_pairs(model: &Model, samples: &[TrainingSample]) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in samples.iter().filter(|s| s.kind.trains_order()) {
        let h = model.forward(&s.input_tokens, &s.seq.ids, None)?.decoder.h;
        let reps = extract_reps(&h.view(), &s.seq)?;
        let hd = reps.discourse;
        let z = hd.dot(&model.order_weights()).dot(&hd.t());
        for (i, j, o) in s.order_labels() {
            scores.push(z[[i, j]]);
            labels.push(o == 1.0);
        }
    }
    Ok((scores, labels))
}

/// AUC of the order head separating correctly ordered from inverted pairs.
pub fn order_auc(model: &Model, samples: &[TrainingSample]) -> Result<f64> {
    let (scores, labels) = order_pairs(model, samples)?;
    auc(&scores, &labels)
}

/// Similarity-head logits `s_ij + s_ji` and teacher targets for every
/// unordered pair `i < j`.
pub fn similarity_pairs(
    model: &Model,
    samples: &[TrainingSample],
    oracle: &dyn SimilarityOracle,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for s in samples {
        let h = model.forward(&s.input_tokens, &s.seq.ids, None)?.decoder.h;
        let hs = extract_reps(&h.view(), &s.seq)?.sentence;
        let sm = hs.dot(&model.similarity_weights()).dot(&hs.t());
        let t = teacher_targets(s, oracle)?;
        let k = hs.nrows();
        for i in 0..k {
            for j in i + 1..k {
                pred.push(sm[[i, j]] + sm[[j, i]]);
                gold.push(t[[i, j]]);
            }
        }
    }
    Ok((pred, gold))
}

/// Spearman correlation between predicted `p_ij` and teacher `t_ij`.
pub fn similarity_spearman(model: &Model, samples: &[TrainingSample], oracle: &dyn SimilarityOracle) -> Result<f64> {
    let (pred, gold) = similarity_pairs(model, samples, oracle)?;
    spearman(&pred, &gold)
}
