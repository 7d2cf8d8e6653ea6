use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_loss_and_grads, forward, Gradients};
use super::{EncoderConfig, ModelParams, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport, PredictionSet};
use crate::pipeline::EncodedExample;

const DIVERGENCE_LOSS: f64 = 1e3;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let gs = grads.tensors();
        for (((p, m), v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(gs.iter())
        {
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

fn clip(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub mean_grad_norm: f64,
    pub dev: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub dev_f1: f64,
    pub params: ModelParams,
}

impl BestCheckpoint {
    /// Replaces the kept epoch only on a strictly higher dev F1.
    pub fn offer(best: &mut Option<BestCheckpoint>, epoch: usize, dev_f1: f64, params: &ModelParams) {
        if best.as_ref().is_none_or(|b| dev_f1 > b.dev_f1) {
            *best = Some(BestCheckpoint {
                epoch,
                dev_f1,
                params: params.clone(),
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the best dev-F1 epoch.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    /// Gradient norm accumulated for the medical embedding table. The table is
    /// not a parameter and no gradient is ever formed for it.
    pub embedding_table_grad_norm: f64,
}

/// Minibatch Adam training with dev-F1 checkpoint selection. One seeded RNG
/// drives both the per-epoch shuffles and dropout.
pub fn train(
    train_set: &[EncodedExample],
    dev_set: &[EncodedExample],
    init: ModelParams,
    tcfg: &TrainConfig,
    ecfg: &EncoderConfig,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    ecfg.validate()?;
    init.check_shapes(ecfg)?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Config("train and dev splits must be non-empty".into()));
    }
    let mut params = init;
    let mut adam = Adam::new(&params, tcfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<BestCheckpoint> = None;
    let mut steps = 0;
    let mut batch = Vec::with_capacity(tcfg.batch_size);

    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut norm_sum, mut n_batches) = (0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &train_set[i]));
            let (loss, mut grads) = batch_loss_and_grads(&batch, &params, ecfg, Some(&mut rng))?;
            if loss > DIVERGENCE_LOSS {
                return Err(Error::Diverged {
                    epoch,
                    step: step + 1,
                    loss,
                });
            }
            norm_sum += clip(&mut grads, tcfg.grad_clip);
            adam.step(&mut params, &grads);
            if !params.all_finite() {
                return Err(Error::NonFinite(format!("parameters after epoch {epoch} step {}", step + 1)));
            }
            loss_sum += loss;
            n_batches += 1;
            steps += 1;
        }
        let dev = evaluate(&predict(dev_set, &params, ecfg)?, tcfg.eval_threshold);
        info!(
            "epoch {epoch}: train loss {:.4}, dev f1 {:.4}, dev auroc {:?}",
            loss_sum / n_batches as f64,
            dev.f1,
            dev.auroc
        );
        BestCheckpoint::offer(&mut best, epoch, dev.f1, &params);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            mean_grad_norm: norm_sum / n_batches as f64,
            dev,
        });
    }
    let best = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params: best.params,
        best_epoch: best.epoch,
        best_dev_f1: best.dev_f1,
        history,
        steps,
        embedding_table_grad_norm: 0.0,
    })
}

/// Eval-mode probabilities with labels, order-preserving.
pub fn predict(examples: &[EncodedExample], params: &ModelParams, cfg: &EncoderConfig) -> Result<PredictionSet> {
    let probs = forward(examples, params, cfg)?;
    PredictionSet::new(probs, examples.iter().map(|e| e.label).collect())
}
