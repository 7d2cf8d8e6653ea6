//! A small post-LayerNorm transformer encoder trained from scratch, with
//! hand-written backpropagation in `f64`.
//!
//! The classifier reads the final hidden state of `[CLS]` (position 0).
//! Because nothing else is read from the last layer, that layer only computes
//! the `[CLS]` query row; keys and values still cover the whole sequence.

mod checkpoint;
mod model;
mod ops;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{embed_batch, embed_tokens, forward, forward_one, loss_and_grads, Gradients};
pub use train::{predict, train, Adam, BestCheckpoint, EpochRecord, TrainOutcome};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bioembed::LinearMapper;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Hidden width `h_M`.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 128,
            layers: 2,
            heads: 4,
            ffn: 256,
            dropout: 0.1,
            max_len: 128,
            vocab_size: 4000,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder.{m}")));
        if self.hidden == 0 || self.layers == 0 || self.heads == 0 || self.ffn == 0 {
            return bad("hidden, layers, heads and ffn must be positive");
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be divisible by heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_len < 2 || self.max_len > 512 {
            return bad("max_len must lie in [2, 512]");
        }
        if self.vocab_size < crate::tokenizer::SPECIAL_TOKENS.len() {
            return bad("vocab_size must cover the special tokens");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub eval_threshold: f64,
    pub use_bridging: bool,
    pub use_bioembed: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 3e-4,
            epochs: 5,
            seed: 0,
            grad_clip: 1.0,
            eval_threshold: DEFAULT_THRESHOLD,
            use_bridging: true,
            use_bioembed: true,
        }
    }
}

/// Learning rates searched for the full-size pretrained encoders.
pub const REFERENCE_LR_GRID: [f64; 9] = [2e-6, 3e-6, 5e-6, 1e-5, 2e-5, 3e-5, 4e-5, 5e-5, 6e-5];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.eval_threshold) {
            return bad("eval_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

/// Every trainable tensor. The frozen embedding table is not in here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub emb_ln_g: Array1<f64>,
    pub emb_ln_b: Array1<f64>,
    pub layers: Vec<LayerParams>,
    pub mapper: Option<LinearMapper>,
    pub cls_w: Array1<f64>,
    pub cls_b: Array1<f64>,
}

/// Borrowed view of one named tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn v1(name: String, a: &Array1<f64>) -> TensorRef<'_> {
    TensorRef {
        name,
        shape: vec![a.len()],
        data: a.as_slice().expect("standard layout"),
    }
}

fn v2(name: String, a: &Array2<f64>) -> TensorRef<'_> {
    TensorRef {
        name,
        shape: vec![a.nrows(), a.ncols()],
        data: a.as_slice().expect("standard layout"),
    }
}

fn m1(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn m2(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

impl ModelParams {
    /// Normal(0, 0.02) weights, unit LayerNorm gains, zero biases. The mapper
    /// is present iff `bio_dim` is given.
    pub fn init(cfg: &EncoderConfig, bio_dim: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut mat = |r: usize, c: usize| {
            Array2::from_shape_simple_fn((r, c), || normal.sample(&mut rng))
        };
        let h = cfg.hidden;
        let tok_emb = mat(cfg.vocab_size, h);
        let pos_emb = mat(cfg.max_len, h);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                wq: mat(h, h),
                bq: Array1::zeros(h),
                wk: mat(h, h),
                bk: Array1::zeros(h),
                wv: mat(h, h),
                bv: Array1::zeros(h),
                wo: mat(h, h),
                bo: Array1::zeros(h),
                ln1_g: Array1::ones(h),
                ln1_b: Array1::zeros(h),
                w1: mat(h, cfg.ffn),
                b1: Array1::zeros(cfg.ffn),
                w2: mat(cfg.ffn, h),
                b2: Array1::zeros(h),
                ln2_g: Array1::ones(h),
                ln2_b: Array1::zeros(h),
            })
            .collect();
        let mapper = bio_dim.map(|d| LinearMapper {
            weight: mat(d, h),
            bias: Array1::zeros(h),
        });
        let cls_w = mat(1, h).into_shape_with_order(h).expect("1 x h");
        ModelParams {
            tok_emb,
            pos_emb,
            emb_ln_g: Array1::ones(h),
            emb_ln_b: Array1::zeros(h),
            layers,
            mapper,
            cls_w,
            cls_b: Array1::zeros(1),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let z1 = |a: &Array1<f64>| Array1::zeros(a.len());
        let z2 = |a: &Array2<f64>| Array2::zeros(a.dim());
        ModelParams {
            tok_emb: z2(&self.tok_emb),
            pos_emb: z2(&self.pos_emb),
            emb_ln_g: z1(&self.emb_ln_g),
            emb_ln_b: z1(&self.emb_ln_b),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: z2(&l.wq),
                    bq: z1(&l.bq),
                    wk: z2(&l.wk),
                    bk: z1(&l.bk),
                    wv: z2(&l.wv),
                    bv: z1(&l.bv),
                    wo: z2(&l.wo),
                    bo: z1(&l.bo),
                    ln1_g: z1(&l.ln1_g),
                    ln1_b: z1(&l.ln1_b),
                    w1: z2(&l.w1),
                    b1: z1(&l.b1),
                    w2: z2(&l.w2),
                    b2: z1(&l.b2),
                    ln2_g: z1(&l.ln2_g),
                    ln2_b: z1(&l.ln2_b),
                })
                .collect(),
            mapper: self.mapper.as_ref().map(|m| LinearMapper {
                weight: z2(&m.weight),
                bias: z1(&m.bias),
            }),
            cls_w: z1(&self.cls_w),
            cls_b: z1(&self.cls_b),
        }
    }

    /// All tensors in a fixed order (the checkpoint order).
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![
            v2("tok_emb".into(), &self.tok_emb),
            v2("pos_emb".into(), &self.pos_emb),
            v1("emb_ln_g".into(), &self.emb_ln_g),
            v1("emb_ln_b".into(), &self.emb_ln_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let n = |s: &str| format!("layer{i}.{s}");
            out.extend([
                v2(n("wq"), &l.wq),
                v1(n("bq"), &l.bq),
                v2(n("wk"), &l.wk),
                v1(n("bk"), &l.bk),
                v2(n("wv"), &l.wv),
                v1(n("bv"), &l.bv),
                v2(n("wo"), &l.wo),
                v1(n("bo"), &l.bo),
                v1(n("ln1_g"), &l.ln1_g),
                v1(n("ln1_b"), &l.ln1_b),
                v2(n("w1"), &l.w1),
                v1(n("b1"), &l.b1),
                v2(n("w2"), &l.w2),
                v1(n("b2"), &l.b2),
                v1(n("ln2_g"), &l.ln2_g),
                v1(n("ln2_b"), &l.ln2_b),
            ]);
        }
        if let Some(m) = &self.mapper {
            out.push(v2("mapper.weight".into(), &m.weight));
            out.push(v1("mapper.bias".into(), &m.bias));
        }
        out.push(v1("cls_w".into(), &self.cls_w));
        out.push(v1("cls_b".into(), &self.cls_b));
        out
    }

    /// Mutable slices in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            m2(&mut self.tok_emb),
            m2(&mut self.pos_emb),
            m1(&mut self.emb_ln_g),
            m1(&mut self.emb_ln_b),
        ];
        for l in self.layers.iter_mut() {
            out.extend([
                m2(&mut l.wq),
                m1(&mut l.bq),
                m2(&mut l.wk),
                m1(&mut l.bk),
                m2(&mut l.wv),
                m1(&mut l.bv),
                m2(&mut l.wo),
                m1(&mut l.bo),
                m1(&mut l.ln1_g),
                m1(&mut l.ln1_b),
                m2(&mut l.w1),
                m1(&mut l.b1),
                m2(&mut l.w2),
                m1(&mut l.b2),
                m1(&mut l.ln2_g),
                m1(&mut l.ln2_b),
            ]);
        }
        if let Some(m) = self.mapper.as_mut() {
            out.push(m2(&mut m.weight));
            out.push(m1(&mut m.bias));
        }
        out.push(m1(&mut self.cls_w));
        out.push(m1(&mut self.cls_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks every tensor against `cfg` (and the mapper's input width).
    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let h = cfg.hidden;
        let err = |what: &str| Err(Error::Shape(format!("parameter {what} does not match config")));
        if self.tok_emb.dim() != (cfg.vocab_size, h) {
            return err("tok_emb");
        }
        if self.pos_emb.dim() != (cfg.max_len, h) {
            return err("pos_emb");
        }
        if self.layers.len() != cfg.layers {
            return err("layers");
        }
        for l in &self.layers {
            if l.wq.dim() != (h, h) || l.w1.dim() != (h, cfg.ffn) || l.w2.dim() != (cfg.ffn, h) {
                return err("layer weights");
            }
        }
        if let Some(m) = &self.mapper {
            if m.out_dim() != h || m.bias.len() != h {
                return err("mapper");
            }
        }
        if self.cls_w.len() != h || self.cls_b.len() != 1 {
            return err("classifier");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig {
            hidden: 10,
            heads: 4,
            ..EncoderConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig {
            dropout: 1.0,
            ..EncoderConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(REFERENCE_LR_GRID.iter().all(|&lr| TrainConfig {
            learning_rate: lr,
            ..TrainConfig::default()
        }
        .validate()
        .is_ok()));
    }

    #[test]
    fn init_shapes_and_determinism() {
        let cfg = EncoderConfig {
            hidden: 8,
            layers: 2,
            heads: 2,
            ffn: 12,
            dropout: 0.0,
            max_len: 10,
            vocab_size: 30,
        };
        let p = ModelParams::init(&cfg, Some(5), 7);
        p.check_shapes(&cfg).unwrap();
        assert_eq!(p, ModelParams::init(&cfg, Some(5), 7));
        assert_ne!(p, ModelParams::init(&cfg, Some(5), 8));
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names.len(), 4 + 16 * 2 + 2 + 2);
        let mut q = p.clone();
        assert_eq!(q.tensors_mut().len(), names.len());
        assert_eq!(p.zeros_like().sq_norm(), 0.0);
        assert!(ModelParams::init(&cfg, None, 7).mapper.is_none());
    }
}
