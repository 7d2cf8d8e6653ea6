use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub(crate) fn linear(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Returns `dx` and accumulates `dw`, `db`.
pub(crate) fn linear_backward(
    x: ArrayView2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    dw.scaled_add(1.0, &x.t().dot(dy));
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *s = 1.0 / (var + LN_EPS).sqrt();
        row *= *s;
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    let h = dy.ncols() as f64;
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let mut dx = Array2::zeros(dy.dim());
    for (((mut out, dxh), xh), &s) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let sum_d = dxh.sum();
        let sum_dx = dxh.dot(&xh);
        Zip::from(&mut out)
            .and(&dxh)
            .and(&xh)
            .for_each(|o, &d, &x| *o = s / h * (h * d - sum_d - x * sum_dx));
    }
    dx
}

pub(crate) fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
}

pub(crate) fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        let t = (GELU_C * (v + 0.044715 * v * v * v)).tanh();
        let grad = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
        *d *= grad;
    });
    dx
}

/// Inverted dropout mask (`0` or `1/(1-p)`), or `None` when inactive.
pub(crate) fn dropout_mask<R: Rng>(
    rng: Option<&mut R>,
    p: f64,
    shape: (usize, usize),
) -> Option<Array2<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

pub(crate) fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

pub(crate) struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per head, `q_rows x n` attention weights.
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

pub(crate) struct AttnWeights<'a> {
    pub wq: &'a Array2<f64>,
    pub bq: &'a Array1<f64>,
    pub wk: &'a Array2<f64>,
    pub bk: &'a Array1<f64>,
    pub wv: &'a Array2<f64>,
    pub bv: &'a Array1<f64>,
    pub wo: &'a Array2<f64>,
    pub bo: &'a Array1<f64>,
}

pub(crate) struct AttnGrads<'a> {
    pub wq: &'a mut Array2<f64>,
    pub bq: &'a mut Array1<f64>,
    pub wk: &'a mut Array2<f64>,
    pub bk: &'a mut Array1<f64>,
    pub wv: &'a mut Array2<f64>,
    pub bv: &'a mut Array1<f64>,
    pub wo: &'a mut Array2<f64>,
    pub bo: &'a mut Array1<f64>,
}

/// Multi-head self-attention for the first `q_rows` positions of `x`, with
/// masked keys (`key_mask[j] == 0`) excluded from the softmax.
pub(crate) fn attention(
    x: &Array2<f64>,
    q_rows: usize,
    key_mask: &[u8],
    heads: usize,
    w: &AttnWeights,
) -> (Array2<f64>, AttnCache) {
    let h = x.ncols();
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(x.slice(s![..q_rows, ..]), w.wq, w.bq);
    let k = linear(x.view(), w.wk, w.bk);
    let v = linear(x.view(), w.wv, w.bv);
    let mut ctx = Array2::zeros((q_rows, h));
    let mut probs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let cols = s![.., hd * dh..(hd + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t());
        for mut row in sc.rows_mut() {
            let mut max = f64::NEG_INFINITY;
            for (j, v) in row.iter_mut().enumerate() {
                *v *= scale;
                if key_mask[j] == 1 && *v > max {
                    max = *v;
                }
            }
            let mut sum = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                *v = if key_mask[j] == 1 { (*v - max).exp() } else { 0.0 };
                sum += *v;
            }
            row /= sum;
        }
        ctx.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
        probs.push(sc);
    }
    let out = linear(ctx.view(), w.wo, w.bo);
    (out, AttnCache { q, k, v, probs, ctx })
}

pub(crate) fn attention_backward(
    x: &Array2<f64>,
    q_rows: usize,
    heads: usize,
    w: &AttnWeights,
    cache: &AttnCache,
    dout: &Array2<f64>,
    g: &mut AttnGrads,
) -> Array2<f64> {
    let h = x.ncols();
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let dctx = linear_backward(cache.ctx.view(), w.wo, dout, g.wo, g.bo);
    let mut dq = Array2::zeros(cache.q.dim());
    let mut dk = Array2::zeros(cache.k.dim());
    let mut dv = Array2::zeros(cache.v.dim());
    for hd in 0..heads {
        let cols = s![.., hd * dh..(hd + 1) * dh];
        let p = &cache.probs[hd];
        let dc = dctx.slice(cols);
        let dp = dc.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dc));
        let mut ds = dp;
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
            let inner = drow.dot(&prow);
            Zip::from(&mut drow)
                .and(&prow)
                .for_each(|d, &pv| *d = pv * (*d - inner) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    let mut dx = linear_backward(x.view(), w.wk, &dk, g.wk, g.bk);
    dx += &linear_backward(x.view(), w.wv, &dv, g.wv, g.bv);
    let dxq = linear_backward(x.slice(s![..q_rows, ..]), w.wq, &dq, g.wq, g.bq);
    let mut top = dx.slice_mut(s![..q_rows, ..]);
    top += &dxq;
    dx
}
