//! Micro/macro F1 and rank-statistic ROC AUC.

use crate::error::{Error, Result};

/// Evaluation summary. `None` marks a value that is undefined on the data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub auc: Option<f64>,
    /// Classes left out of the macro averages for lack of positives (or,
    /// for AUC, of negatives).
    pub skipped: Vec<usize>,
}

/// Model outputs to score.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    /// Predicted tag per token.
    Tags(Vec<Vec<u32>>),
    /// Per-label probabilities per document.
    Scores(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Golds {
    /// Gold tags; tag 0 is "outside". Carries the number of tag classes.
    Tags { tags: Vec<Vec<u32>>, n_tags: usize },
    Labels(Vec<Vec<bool>>),
}

pub fn evaluate(preds: &Predictions, golds: &Golds) -> Result<Metrics> {
    match (preds, golds) {
        (Predictions::Tags(p), Golds::Tags { tags, n_tags }) => evaluate_tagging(p, tags, *n_tags),
        (Predictions::Scores(p), Golds::Labels(g)) => evaluate_multilabel(p, g),
        _ => Err(Error::input("prediction kind does not match gold kind")),
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> Option<f64> {
    let d = 2 * tp + fp + fn_;
    (d > 0).then(|| 2.0 * tp as f64 / d as f64)
}

/// Token-level F1 over every tag except O.
pub fn evaluate_tagging(pred: &[Vec<u32>], gold: &[Vec<u32>], n_tags: usize) -> Result<Metrics> {
    if pred.len() != gold.len() {
        return Err(Error::input(format!("{} predictions for {} gold sequences", pred.len(), gold.len())));
    }
    let mut tp = vec![0u64; n_tags];
    let mut fp = vec![0u64; n_tags];
    let mut fn_ = vec![0u64; n_tags];
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::input(format!("sequence {i}: {} predicted tags for {} gold tags", p.len(), g.len())));
        }
        for (&pt, &gt) in p.iter().zip(g) {
            if pt as usize >= n_tags || gt as usize >= n_tags {
                return Err(Error::input(format!("sequence {i}: tag out of range 0..{n_tags}")));
            }
            if pt == gt {
                tp[gt as usize] += 1;
            } else {
                fp[pt as usize] += 1;
                fn_[gt as usize] += 1;
            }
        }
    }
    let sum = |v: &[u64]| v[1..].iter().sum::<u64>();
    let micro = f1(sum(&tp), sum(&fp), sum(&fn_));
    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for c in 1..n_tags {
        if tp[c] + fn_[c] == 0 {
            skipped.push(c);
        } else {
            per_class.push(f1(tp[c], fp[c], fn_[c]).expect("has positives"));
        }
    }
    let macro_f1 = (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64);
    Ok(Metrics { micro_f1: micro, macro_f1, auc: None, skipped })
}

/// ROC AUC as the Mann-Whitney statistic with midranks for ties, or `None`
/// when either class is empty.
pub fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Micro and macro F1 at probability 0.5, and macro one-vs-rest AUC.
pub fn evaluate_multilabel(scores: &[Vec<f64>], gold: &[Vec<bool>]) -> Result<Metrics> {
    if scores.len() != gold.len() {
        return Err(Error::input(format!("{} predictions for {} gold documents", scores.len(), gold.len())));
    }
    let k = gold.first().map_or(0, Vec::len);
    for (i, (s, g)) in scores.iter().zip(gold).enumerate() {
        if s.len() != k || g.len() != k {
            return Err(Error::input(format!("document {i}: expected {k} labels")));
        }
    }
    let (mut tp, mut fp, mut fn_) = (vec![0u64; k], vec![0u64; k], vec![0u64; k]);
    for (s, g) in scores.iter().zip(gold) {
        for c in 0..k {
            match (s[c] >= 0.5, g[c]) {
                (true, true) => tp[c] += 1,
                (true, false) => fp[c] += 1,
                (false, true) => fn_[c] += 1,
                (false, false) => {}
            }
        }
    }
    let micro = f1(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    let mut f1s = Vec::new();
    let mut aucs = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..k {
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = gold.iter().map(|g| g[c]).collect();
        if tp[c] + fn_[c] > 0 {
            f1s.push(f1(tp[c], fp[c], fn_[c]).expect("has positives"));
        }
        match rank_auc(&col, &pos) {
            Some(a) => aucs.push(a),
            None => skipped.push(c),
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(Metrics { micro_f1: micro, macro_f1: mean(&f1s), auc: mean(&aucs), skipped })
}
