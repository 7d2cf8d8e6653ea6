//! TF-IDF features with L2-regularized logistic regression.
//!
//! `tf` is the raw term count, `idf = ln((1 + N) / (1 + df)) + 1`, and every
//! transformed row is scaled to unit L2 norm.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfidfConfig {
    /// Longest n-gram; 1 means unigrams only.
    pub max_ngram: usize,
    /// Terms seen in fewer documents are dropped.
    pub min_df: usize,
    /// Keep only the most frequent terms (by df) when set.
    pub max_features: Option<usize>,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            max_ngram: 1,
            min_df: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub terms: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub config: TfidfConfig,
    pub n_docs: usize,
}

/// Sorted column indices with their values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v * dense[i])
            .sum()
    }
}

fn terms_of(text: &str, max_ngram: usize) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut out = Vec::new();
    for n in 1..=max_ngram.max(1) {
        for w in words.windows(n) {
            out.push(w.join(" "));
        }
    }
    out
}

pub fn fit_tfidf<S: AsRef<str>>(docs: &[S], config: TfidfConfig) -> Result<TfidfModel> {
    if docs.is_empty() {
        return Err(Error::Config("TF-IDF needs at least one document".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for d in docs {
        let uniq: BTreeSet<String> = terms_of(d.as_ref(), config.max_ngram).into_iter().collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    df.retain(|_, &mut c| c >= config.min_df);
    if let Some(cap) = config.max_features {
        if df.len() > cap {
            let mut by_df: Vec<(&String, &usize)> = df.iter().collect();
            by_df.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
            let keep: BTreeSet<String> = by_df.into_iter().take(cap).map(|(t, _)| t.clone()).collect();
            df.retain(|t, _| keep.contains(t));
        }
    }
    let n = docs.len() as f64;
    let mut terms = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (i, (t, c)) in df.into_iter().enumerate() {
        terms.insert(t, i);
        idf.push(((1.0 + n) / (1.0 + c as f64)).ln() + 1.0);
    }
    Ok(TfidfModel {
        terms,
        idf,
        config,
        n_docs: docs.len(),
    })
}

impl TfidfModel {
    pub fn n_features(&self) -> usize {
        self.idf.len()
    }

    /// Unseen terms are ignored; a text with no known term maps to the zero
    /// vector.
    pub fn transform(&self, text: &str) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in terms_of(text, self.config.max_ngram) {
            if let Some(&col) = self.terms.get(&t) {
                *counts.entry(col).or_default() += 1.0;
            }
        }
        let mut v = SparseVec {
            indices: Vec::with_capacity(counts.len()),
            values: Vec::with_capacity(counts.len()),
        };
        for (col, tf) in counts {
            v.indices.push(col);
            v.values.push(tf * self.idf[col]);
        }
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn transform_all<S: AsRef<str>>(&self, docs: &[S]) -> Vec<SparseVec> {
        docs.iter().map(|d| self.transform(d.as_ref())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-4,
            epochs: 2000,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    /// Iterations actually run.
    pub iterations: usize,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_shapes(x: &[SparseVec], n_features: usize) -> Result<()> {
    for (r, row) in x.iter().enumerate() {
        if let Some(&i) = row.indices.iter().find(|&&i| i >= n_features) {
            return Err(Error::Shape(format!(
                "row {r} references feature {i} but the model has {n_features}"
            )));
        }
    }
    Ok(())
}

/// Mean log loss plus `l2/2 * |w|^2`, and its gradient `(dw, db)`.
pub fn logreg_loss_and_grad(
    x: &[SparseVec],
    y: &[u8],
    model: &LogRegModel,
) -> Result<(f64, Vec<f64>, f64)> {
    check_shapes(x, model.weights.len())?;
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!("{} rows for {} labels", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut dw = vec![0.0; model.weights.len()];
    let mut db = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let z = row.dot(&model.weights) + model.bias;
        let t = label as f64;
        loss += softplus(z) - t * z;
        let r = (sigmoid(z) - t) / n;
        for (&i, &v) in row.indices.iter().zip(&row.values) {
            dw[i] += r * v;
        }
        db += r;
    }
    loss /= n;
    let reg: f64 = model.weights.iter().map(|w| w * w).sum::<f64>() * model.l2 * 0.5;
    for (g, w) in dw.iter_mut().zip(&model.weights) {
        *g += model.l2 * w;
    }
    Ok((loss + reg, dw, db))
}

/// Full-batch proximal gradient descent: a plain step on the log loss
/// followed by the closed-form L2 shrink `w / (1 + lr * l2)`. Stops once the
/// gradient norm drops below `1e-6` or after `epochs` iterations.
pub fn train_logreg(
    x: &[SparseVec],
    y: &[u8],
    n_features: usize,
    config: LogRegConfig,
) -> Result<LogRegModel> {
    if config.learning_rate <= 0.0 || config.l2 < 0.0 {
        return Err(Error::Config("learning rate must be positive and l2 non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = LogRegModel {
        weights: (0..n_features).map(|_| rng.random_range(-1e-3..1e-3)).collect(),
        bias: 0.0,
        l2: config.l2,
        iterations: 0,
    };
    let unregularized = |m: &LogRegModel| LogRegModel { l2: 0.0, ..m.clone() };
    for it in 0..config.epochs {
        let (loss, dw, db) = logreg_loss_and_grad(x, y, &unregularized(&model))?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: it,
                step: it,
                loss,
            });
        }
        let full_norm = dw
            .iter()
            .zip(&model.weights)
            .map(|(g, w)| (g + config.l2 * w).powi(2))
            .sum::<f64>()
            + db * db;
        model.iterations = it;
        if full_norm.sqrt() < 1e-6 {
            break;
        }
        let shrink = 1.0 / (1.0 + config.learning_rate * config.l2);
        for (w, g) in model.weights.iter_mut().zip(&dw) {
            *w = (*w - config.learning_rate * g) * shrink;
        }
        model.bias -= config.learning_rate * db;
        model.iterations = it + 1;
    }
    if model.weights.iter().any(|w| !w.is_finite()) || !model.bias.is_finite() {
        return Err(Error::NonFinite("logistic regression weights".into()));
    }
    Ok(model)
}

pub fn predict_logreg(x: &[SparseVec], model: &LogRegModel) -> Result<Vec<f64>> {
    check_shapes(x, model.weights.len())?;
    Ok(x.iter()
        .map(|row| sigmoid(row.dot(&model.weights) + model.bias))
        .collect())
}
