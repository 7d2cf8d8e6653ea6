//! F1 at a fixed threshold, AUROC, AUPRC (average precision) and Brier score.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default decision threshold for F1.
pub const DEFAULT_THRESHOLD: f64 = 0.595;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PredictionSet {
    pub fn new(probs: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} probabilities for {} labels",
                probs.len(),
                labels.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("probability {p} outside [0, 1]")));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Config("labels must be 0 or 1".into()));
        }
        Ok(PredictionSet { probs, labels })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let precision = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let recall = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

/// Positive iff `prob >= threshold`.
pub fn f1_at_threshold(preds: &PredictionSet, threshold: f64) -> (f64, Confusion) {
    let mut c = Confusion::default();
    for (&p, &y) in preds.probs.iter().zip(&preds.labels) {
        match (p >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    (c.f1(), c)
}

fn desc(a: &f64, b: &f64) -> Ordering {
    b.partial_cmp(a).expect("probabilities are not NaN")
}

/// Mann-Whitney statistic with midranks: the probability that a random
/// positive outscores a random negative, ties counted one half.
pub fn auroc(preds: &PredictionSet) -> Result<f64> {
    let (n_pos, n_neg) = (preds.positives(), preds.negatives());
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::MetricUndefined {
            metric: "AUROC",
            reason: "needs at least one positive and one negative",
        });
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds.probs[a].partial_cmp(&preds.probs[b]).expect("no NaN"));
    // Twice the rank sum keeps midranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && preds.probs[order[j + 1]] == preds.probs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, midrank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            if preds.labels[k] == 1 {
                twice_rank_sum += twice_mid;
            }
        }
        i = j + 1;
    }
    let np = n_pos as u64;
    // U = R - P(P+1)/2, kept doubled until the final halving.
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok((twice_u as f64 * 0.5) / (n_pos as f64 * n_neg as f64))
}

/// Average precision with tied scores treated as one threshold: every
/// positive in a tie group receives the precision measured after the whole
/// group.
pub fn auprc(preds: &PredictionSet) -> Result<f64> {
    let n_pos = preds.positives();
    if n_pos == 0 {
        return Err(Error::MetricUndefined {
            metric: "AUPRC",
            reason: "needs at least one positive",
        });
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| desc(&preds.probs[a], &preds.probs[b]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && preds.probs[order[j + 1]] == preds.probs[order[i]] {
            j += 1;
        }
        let group_pos = order[i..=j].iter().filter(|&&k| preds.labels[k] == 1).count();
        tp += group_pos;
        seen += j - i + 1;
        if group_pos > 0 {
            let precision = tp as f64 / seen as f64;
            ap += precision * group_pos as f64 / n_pos as f64;
        }
        i = j + 1;
    }
    Ok(ap)
}

pub fn brier(preds: &PredictionSet) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds
        .probs
        .iter()
        .zip(&preds.labels)
        .map(|(&p, &y)| (p - y as f64).powi(2))
        .sum::<f64>()
        / preds.len() as f64
}

/// The four headline numbers. AUROC/AUPRC are `None` when the set does not
/// contain both classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub brier: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub n: usize,
}

pub fn evaluate(preds: &PredictionSet, threshold: f64) -> MetricsReport {
    let (f1, confusion) = f1_at_threshold(preds, threshold);
    MetricsReport {
        f1,
        auroc: auroc(preds).ok(),
        auprc: if preds.negatives() == 0 {
            // single-class sets leave both ranking metrics undefined
            None
        } else {
            auprc(preds).ok()
        },
        brier: brier(preds),
        threshold,
        confusion,
        n: preds.len(),
    }
}

/// Threshold equal to the share of positives, for callers that derive it
/// from the training split instead of using [`DEFAULT_THRESHOLD`].
pub fn prevalence_threshold(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return DEFAULT_THRESHOLD;
    }
    labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64
}
