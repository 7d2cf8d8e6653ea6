use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;

use super::ops::{
    apply_mask, attention, attention_backward, dropout_mask, gelu, gelu_backward, layer_norm,
    layer_norm_backward, linear, linear_backward, AttnCache, AttnGrads, AttnWeights, LnCache,
};
use super::{EncoderConfig, LayerParams, ModelParams};
use crate::baseline::{sigmoid, softplus};
use crate::bioembed::map_features;
use crate::error::{Error, Result};
use crate::pipeline::EncodedExample;

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

/// Token plus positional embedding rows, `ids.len() x h_M`.
pub fn embed_tokens(ids: &[u32], params: &ModelParams) -> Result<Array2<f64>> {
    let (vocab, h) = params.tok_emb.dim();
    if ids.len() > params.pos_emb.nrows() {
        return Err(Error::Shape(format!(
            "sequence of {} tokens exceeds max_len {}",
            ids.len(),
            params.pos_emb.nrows()
        )));
    }
    let mut out = Array2::zeros((ids.len(), h));
    for (p, &id) in ids.iter().enumerate() {
        if id as usize >= vocab {
            return Err(Error::Shape(format!(
                "token id {id} at position {p} is outside a vocabulary of {vocab}"
            )));
        }
        let mut row = out.row_mut(p);
        row.assign(&params.tok_emb.row(id as usize));
        row += &params.pos_emb.row(p);
    }
    Ok(out)
}

/// `(b, seq_len, h_M)` for equal-length sequences.
pub fn embed_batch(batch: &[&[u32]], params: &ModelParams) -> Result<Array3<f64>> {
    let len = batch.first().map_or(0, |s| s.len());
    let mut out = Array3::zeros((batch.len(), len, params.tok_emb.ncols()));
    for (b, ids) in batch.iter().enumerate() {
        if ids.len() != len {
            return Err(Error::Shape(format!(
                "sequence {b} has length {} but the batch uses {len}",
                ids.len()
            )));
        }
        out.slice_mut(s![b, .., ..]).assign(&embed_tokens(ids, params)?);
    }
    Ok(out)
}

struct LayerCache {
    input: Array2<f64>,
    q_rows: usize,
    attn: AttnCache,
    attn_drop: Option<Array2<f64>>,
    ln1: LnCache,
    y1: Array2<f64>,
    pre_gelu: Array2<f64>,
    act: Array2<f64>,
    ffn_drop: Option<Array2<f64>>,
    ln2: LnCache,
}

struct Trace {
    n: usize,
    mapped: Option<Array2<f64>>,
    emb_ln: LnCache,
    emb_drop: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    cls: Array1<f64>,
    logit: f64,
}

fn attn_weights(l: &LayerParams) -> AttnWeights<'_> {
    AttnWeights {
        wq: &l.wq,
        bq: &l.bq,
        wk: &l.wk,
        bk: &l.bk,
        wv: &l.wv,
        bv: &l.bv,
        wo: &l.wo,
        bo: &l.bo,
    }
}

fn ensure_finite(a: &Array2<f64>, what: impl FnOnce() -> String) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Runs one example. Only the active (non-PAD) prefix is computed, so PAD
/// ids are never read.
fn run<R: Rng>(
    ex: &EncodedExample,
    params: &ModelParams,
    cfg: &EncoderConfig,
    mut rng: Option<&mut R>,
) -> Result<Trace> {
    if ex.ids.len() != ex.attn_mask.len() {
        return Err(Error::Shape("ids and attention mask differ in length".into()));
    }
    let n = ex.active_len();
    if n == 0 || ex.attn_mask[..n].iter().any(|&m| m != 1) {
        return Err(Error::Shape("attention mask must be a non-empty prefix of ones".into()));
    }
    let mut x = embed_tokens(&ex.ids[..n], params)?;

    let mapped = match (&ex.bio, &params.mapper) {
        (Some(bio), Some(mapper)) => {
            let mapped = map_features(&bio.raw, &bio.hits, mapper)?;
            for (j, sp) in bio.spans.iter().enumerate() {
                if sp.token_end > n || sp.token_start >= sp.token_end {
                    return Err(Error::Shape(format!(
                        "word span {}..{} outside the {n} active tokens",
                        sp.token_start, sp.token_end
                    )));
                }
                let mut rows = x.slice_mut(s![sp.token_start..sp.token_end, ..]);
                rows += &mapped.row(j);
            }
            Some(mapped)
        }
        (Some(_), None) => {
            return Err(Error::Shape(
                "bio features given but the model has no mapper".into(),
            ))
        }
        (None, _) => None,
    };

    let (mut x, emb_ln) = layer_norm(&x, &params.emb_ln_g, &params.emb_ln_b);
    let emb_drop = dropout_mask(rng.as_deref_mut(), cfg.dropout, x.dim());
    apply_mask(&mut x, &emb_drop);
    ensure_finite(&x, || "embedding output".into())?;

    let key_mask = vec![1u8; n];
    let mut caches = Vec::with_capacity(params.layers.len());
    let last = params.layers.len().saturating_sub(1);
    for (li, l) in params.layers.iter().enumerate() {
        let q_rows = if li == last { 1 } else { n };
        let (mut a, attn) = attention(&x, q_rows, &key_mask, cfg.heads, &attn_weights(l));
        let attn_drop = dropout_mask(rng.as_deref_mut(), cfg.dropout, a.dim());
        apply_mask(&mut a, &attn_drop);
        let r1 = &x.slice(s![..q_rows, ..]) + &a;
        let (y1, ln1) = layer_norm(&r1, &l.ln1_g, &l.ln1_b);
        let pre_gelu = linear(y1.view(), &l.w1, &l.b1);
        let act = gelu(&pre_gelu);
        let mut f = linear(act.view(), &l.w2, &l.b2);
        let ffn_drop = dropout_mask(rng.as_deref_mut(), cfg.dropout, f.dim());
        apply_mask(&mut f, &ffn_drop);
        let r2 = &y1 + &f;
        let (out, ln2) = layer_norm(&r2, &l.ln2_g, &l.ln2_b);
        ensure_finite(&out, || format!("encoder layer {li}"))?;
        caches.push(LayerCache {
            input: x,
            q_rows,
            attn,
            attn_drop,
            ln1,
            y1,
            pre_gelu,
            act,
            ffn_drop,
            ln2,
        });
        x = out;
    }

    let cls = x.row(0).to_owned();
    let logit = cls.dot(&params.cls_w) + params.cls_b[0];
    if !logit.is_finite() {
        return Err(Error::NonFinite("classifier logit".into()));
    }
    Ok(Trace {
        n,
        mapped,
        emb_ln,
        emb_drop,
        layers: caches,
        cls,
        logit,
    })
}

/// Eval-mode probability for one example.
pub fn forward_one(ex: &EncodedExample, params: &ModelParams, cfg: &EncoderConfig) -> Result<f64> {
    let t = run::<rand_chacha::ChaCha8Rng>(ex, params, cfg, None)?;
    Ok(sigmoid(t.logit))
}

/// Eval-mode probabilities, one per example, in order.
pub fn forward(
    batch: &[EncodedExample],
    params: &ModelParams,
    cfg: &EncoderConfig,
) -> Result<Vec<f64>> {
    batch.iter().map(|ex| forward_one(ex, params, cfg)).collect()
}

fn backward(ex: &EncodedExample, t: &Trace, params: &ModelParams, cfg: &EncoderConfig, dlogit: f64, g: &mut Gradients) {
    let h = params.tok_emb.ncols();
    g.cls_w.scaled_add(dlogit, &t.cls);
    g.cls_b[0] += dlogit;

    let q_last = t.layers.last().map_or(t.n, |c| c.q_rows);
    let mut dx = Array2::zeros((q_last, h));
    dx.row_mut(0).scaled_add(dlogit, &params.cls_w);

    for (li, c) in t.layers.iter().enumerate().rev() {
        let l = &params.layers[li];
        let gl = &mut g.layers[li];
        let mut dr2 = layer_norm_backward(&dx, &c.ln2, &l.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
        let mut df = dr2.clone();
        apply_mask(&mut df, &c.ffn_drop);
        let dact = linear_backward(c.act.view(), &l.w2, &df, &mut gl.w2, &mut gl.b2);
        let dpre = gelu_backward(&c.pre_gelu, &dact);
        dr2 += &linear_backward(c.y1.view(), &l.w1, &dpre, &mut gl.w1, &mut gl.b1);
        let dr1 = layer_norm_backward(&dr2, &c.ln1, &l.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
        let mut da = dr1.clone();
        apply_mask(&mut da, &c.attn_drop);
        let mut ag = AttnGrads {
            wq: &mut gl.wq,
            bq: &mut gl.bq,
            wk: &mut gl.wk,
            bk: &mut gl.bk,
            wv: &mut gl.wv,
            bv: &mut gl.bv,
            wo: &mut gl.wo,
            bo: &mut gl.bo,
        };
        let mut dinput =
            attention_backward(&c.input, c.q_rows, cfg.heads, &attn_weights(l), &c.attn, &da, &mut ag);
        let mut top = dinput.slice_mut(s![..c.q_rows, ..]);
        top += &dr1;
        dx = dinput;
    }

    apply_mask(&mut dx, &t.emb_drop);
    let dx0 = layer_norm_backward(&dx, &t.emb_ln, &params.emb_ln_g, &mut g.emb_ln_g, &mut g.emb_ln_b);
    for p in 0..t.n {
        let mut tr = g.tok_emb.row_mut(ex.ids[p] as usize);
        tr += &dx0.row(p);
        let mut pr = g.pos_emb.row_mut(p);
        pr += &dx0.row(p);
    }

    if let (Some(bio), Some(_), Some(gm)) = (&ex.bio, &t.mapped, g.mapper.as_mut()) {
        for (j, sp) in bio.spans.iter().enumerate() {
            if !bio.hits[j] {
                continue;
            }
            let dm = dx0.slice(s![sp.token_start..sp.token_end, ..]).sum_axis(ndarray::Axis(0));
            gm.bias += &dm;
            for (k, &r) in bio.raw.row(j).iter().enumerate() {
                if r != 0.0 {
                    gm.weight.row_mut(k).scaled_add(r, &dm);
                }
            }
        }
    }
}

/// Mean binary cross-entropy over `batch` and its gradient for every
/// trainable tensor. With `rng` set, dropout is active.
pub fn loss_and_grads<R: Rng>(
    batch: &[EncodedExample],
    params: &ModelParams,
    cfg: &EncoderConfig,
    rng: Option<&mut R>,
) -> Result<(f64, Gradients)> {
    let refs: Vec<&EncodedExample> = batch.iter().collect();
    batch_loss_and_grads(&refs, params, cfg, rng)
}

pub(crate) fn batch_loss_and_grads<R: Rng>(
    batch: &[&EncodedExample],
    params: &ModelParams,
    cfg: &EncoderConfig,
    mut rng: Option<&mut R>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut g = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        if ex.label > 1 {
            return Err(Error::Shape(format!("label {} is not 0 or 1", ex.label)));
        }
        let t = run(ex, params, cfg, rng.as_deref_mut())?;
        let y = ex.label as f64;
        // softplus(z) - y z is BCE on sigmoid(z) without forming log(p)
        loss += (softplus(t.logit) - y * t.logit) * scale;
        let dlogit = (sigmoid(t.logit) - y) * scale;
        backward(ex, &t, params, cfg, dlogit, &mut g);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok((loss, g))
}
