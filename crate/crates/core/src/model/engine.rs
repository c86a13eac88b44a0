//! Packed forward pass with a manual reverse pass.
//!
//! All sequences of a batch are stacked into one `[rows, d]` matrix so that
//! position-wise layers run as single matrix products; attention is applied
//! per sequence (and per context for the encoder).

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{AttnIx, BlockIx, Layout, ModelParameters, NormIx};
use super::Real;
use crate::embedder::ContextVector;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn c<F: Real>(v: f64) -> F {
    F::from(v).expect("representable constant")
}

fn mat<F: Real>(p: &ModelParameters<F>, ix: usize) -> ArrayView2<'_, F> {
    let t = &p.layout.tensors[ix];
    ArrayView2::from_shape((t.shape[0], t.shape[1]), &p.data[t.offset..t.offset + t.len()]).expect("matrix shape")
}

fn vector<F: Real>(p: &ModelParameters<F>, ix: usize) -> ArrayView1<'_, F> {
    let t = &p.layout.tensors[ix];
    ArrayView1::from(&p.data[t.offset..t.offset + t.len()])
}

/// Gradient buffer sharing the parameter layout.
pub(crate) struct Grads<'a, F> {
    pub data: &'a mut [F],
    pub layout: &'a Layout,
}

impl<F: Real> Grads<'_, F> {
    fn mat(&mut self, ix: usize) -> ArrayViewMut2<'_, F> {
        let t = &self.layout.tensors[ix];
        ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut self.data[t.offset..t.offset + t.len()])
            .expect("matrix shape")
    }

    fn vector(&mut self, ix: usize) -> ArrayViewMut1<'_, F> {
        let t = &self.layout.tensors[ix];
        ArrayViewMut1::from(&mut self.data[t.offset..t.offset + t.len()])
    }
}

#[derive(Debug, Clone)]
struct Group {
    q: Range<usize>,
    kv: Range<usize>,
    causal: bool,
}

/// One sequence of a batch: `input` row `t` is scored against `targets[t]`
/// when `t < targets.len()`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Item<'a> {
    pub ctx: usize,
    pub input: &'a [u32],
    pub targets: &'a [u32],
}

pub(crate) struct Mode<'r> {
    pub dropout: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Mode<'_> {
    pub fn eval() -> Self {
        Mode { dropout: 0.0, rng: None }
    }

    fn mask<F: Real>(&mut self, shape: (usize, usize)) -> Option<Array2<F>> {
        let p = self.dropout;
        let rng = self.rng.as_mut()?;
        if p <= 0.0 {
            return None;
        }
        let keep = c::<F>(1.0 / (1.0 - p));
        Some(Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { F::zero() } else { keep }))
    }
}

fn linear<F: Real>(x: &Array2<F>, w: ArrayView2<F>, b: ArrayView1<F>) -> Array2<F> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

fn linear_bwd<F: Real>(
    x: &Array2<F>,
    dy: &Array2<F>,
    w: ArrayView2<F>,
    g: &mut Grads<F>,
    wi: usize,
    bi: usize,
) -> Array2<F> {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), &mut g.mat(wi));
    let mut gb = g.vector(bi);
    gb += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

struct NormCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

fn norm_fwd<F: Real>(p: &ModelParameters<F>, ix: NormIx, x: &Array2<F>) -> (Array2<F>, NormCache<F>) {
    let d = c::<F>(x.ncols() as f64);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / d;
        *r = F::one() / (var + c(LN_EPS)).sqrt();
        row *= *r;
    }
    let mut y = &xhat * &vector(p, ix.g);
    y += &vector(p, ix.b);
    (y, NormCache { xhat, rstd })
}

fn norm_bwd<F: Real>(p: &ModelParameters<F>, ix: NormIx, cache: &NormCache<F>, dy: &Array2<F>, g: &mut Grads<F>) -> Array2<F> {
    {
        let mut gg = g.vector(ix.g);
        gg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut gb = g.vector(ix.b);
        gb += &dy.sum_axis(Axis(0));
    }
    let d = c::<F>(dy.ncols() as f64);
    let mut dx = dy * &vector(p, ix.g);
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).fold(F::zero(), |a, b| a + b) / d;
        for (v, &xv) in row.iter_mut().zip(xh.iter()) {
            *v = r * (*v - m1 - xv * m2);
        }
    }
    dx
}

fn gelu<F: Real>(u: F) -> F {
    let t = (c::<F>(GELU_C) * (u + c::<F>(GELU_A) * u * u * u)).tanh();
    c::<F>(0.5) * u * (F::one() + t)
}

fn gelu_grad<F: Real>(u: F) -> F {
    let k = c::<F>(GELU_C);
    let a = c::<F>(GELU_A);
    let t = (k * (u + a * u * u * u)).tanh();
    let half = c::<F>(0.5);
    half * (F::one() + t) + half * u * (F::one() - t * t) * k * (F::one() + c::<F>(3.0) * a * u * u)
}

fn attend<F: Real>(
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    groups: &[Group],
    valid: &[bool],
    heads: usize,
) -> (Array2<F>, Vec<Array2<F>>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = F::one() / c::<F>(dh as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), d));
    let mut probs = Vec::with_capacity(groups.len() * heads);
    for g in groups {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![g.q.clone(), cols.clone()]);
            let kh = k.slice(s![g.kv.clone(), cols.clone()]);
            let vh = v.slice(s![g.kv.clone(), cols.clone()]);
            let mut sc = qh.dot(&kh.t());
            for (i, mut row) in sc.rows_mut().into_iter().enumerate() {
                let mut max = F::neg_infinity();
                for (j, s) in row.iter_mut().enumerate() {
                    if (g.causal && j > i) || !valid[g.kv.start + j] {
                        *s = F::neg_infinity();
                    } else {
                        *s *= scale;
                        max = max.max(*s);
                    }
                }
                let mut sum = F::zero();
                for s in row.iter_mut() {
                    *s = if *s == F::neg_infinity() { F::zero() } else { (*s - max).exp() };
                    sum += *s;
                }
                row /= sum;
            }
            out.slice_mut(s![g.q.clone(), cols]).assign(&sc.dot(&vh));
            probs.push(sc);
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn attend_bwd<F: Real>(
    dout: &Array2<F>,
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    probs: &[Array2<F>],
    groups: &[Group],
    heads: usize,
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = F::one() / c::<F>(dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (gi, g) in groups.iter().enumerate() {
        for h in 0..heads {
            let p = &probs[gi * heads + h];
            let cols = h * dh..(h + 1) * dh;
            let d_o = dout.slice(s![g.q.clone(), cols.clone()]);
            let qh = q.slice(s![g.q.clone(), cols.clone()]);
            let kh = k.slice(s![g.kv.clone(), cols.clone()]);
            let vh = v.slice(s![g.kv.clone(), cols.clone()]);
            general_mat_mul(F::one(), &p.t(), &d_o, F::one(), &mut dv.slice_mut(s![g.kv.clone(), cols.clone()]));
            let mut ds = d_o.dot(&vh.t());
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = row.iter().zip(prow.iter()).map(|(&a, &b)| a * b).fold(F::zero(), |a, b| a + b);
                for (x, &pv) in row.iter_mut().zip(prow.iter()) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            general_mat_mul(F::one(), &ds, &kh, F::one(), &mut dq.slice_mut(s![g.q.clone(), cols.clone()]));
            general_mat_mul(F::one(), &ds.t(), &qh, F::one(), &mut dk.slice_mut(s![g.kv.clone(), cols]));
        }
    }
    (dq, dk, dv)
}

struct AttnCache<F> {
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    merged: Array2<F>,
}

fn attn_fwd<F: Real>(
    p: &ModelParameters<F>,
    ix: &AttnIx,
    h: &Array2<F>,
    kv_in: &Array2<F>,
    groups: &[Group],
    valid: &[bool],
    heads: usize,
) -> (Array2<F>, AttnCache<F>) {
    let q = linear(h, mat(p, ix.wq), vector(p, ix.bq));
    let k = linear(kv_in, mat(p, ix.wk), vector(p, ix.bk));
    let v = linear(kv_in, mat(p, ix.wv), vector(p, ix.bv));
    let (merged, probs) = attend(&q, &k, &v, groups, valid, heads);
    let out = linear(&merged, mat(p, ix.wo), vector(p, ix.bo));
    (out, AttnCache { q, k, v, probs, merged })
}

/// Returns gradients with respect to the query input and the key/value input.
#[allow(clippy::too_many_arguments)]
fn attn_bwd<F: Real>(
    p: &ModelParameters<F>,
    ix: &AttnIx,
    cache: &AttnCache<F>,
    h: &Array2<F>,
    kv_in: &Array2<F>,
    dout: &Array2<F>,
    g: &mut Grads<F>,
    groups: &[Group],
    heads: usize,
) -> (Array2<F>, Array2<F>) {
    let dmerged = linear_bwd(&cache.merged, dout, mat(p, ix.wo), g, ix.wo, ix.bo);
    let (dq, dk, dv) = attend_bwd(&dmerged, &cache.q, &cache.k, &cache.v, &cache.probs, groups, heads);
    let dh = linear_bwd(h, &dq, mat(p, ix.wq), g, ix.wq, ix.bq);
    let mut dkv = linear_bwd(kv_in, &dk, mat(p, ix.wk), g, ix.wk, ix.bk);
    dkv += &linear_bwd(kv_in, &dv, mat(p, ix.wv), g, ix.wv, ix.bv);
    (dh, dkv)
}

struct CrossCache<F> {
    norm: NormCache<F>,
    h: Array2<F>,
    attn: AttnCache<F>,
    drop: Option<Array2<F>>,
}

struct BlockCache<F> {
    norm1: NormCache<F>,
    h1: Array2<F>,
    attn: AttnCache<F>,
    drop_attn: Option<Array2<F>>,
    cross: Option<CrossCache<F>>,
    norm2: NormCache<F>,
    h2: Array2<F>,
    u: Array2<F>,
    act: Array2<F>,
    drop_ffn: Option<Array2<F>>,
}

fn apply_drop<F: Real>(x: &mut Array2<F>, mask: &Option<Array2<F>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

struct Cross<'a, F> {
    memory: &'a Array2<F>,
    groups: &'a [Group],
    valid: &'a [bool],
}

#[allow(clippy::too_many_arguments)]
fn block_fwd<F: Real>(
    p: &ModelParameters<F>,
    bx: &BlockIx,
    x: &mut Array2<F>,
    groups: &[Group],
    valid: &[bool],
    heads: usize,
    cross: Option<&Cross<F>>,
    mode: &mut Mode,
) -> BlockCache<F> {
    let (h1, norm1) = norm_fwd(p, bx.ln1, x);
    let (mut a, attn) = attn_fwd(p, &bx.attn, &h1, &h1, groups, valid, heads);
    let drop_attn = mode.mask(a.dim());
    apply_drop(&mut a, &drop_attn);
    *x += &a;

    let cross = match (bx.cross.as_ref(), cross) {
        (Some((nix, aix)), Some(cr)) => {
            let (h, norm) = norm_fwd(p, *nix, x);
            let (mut out, attn) = attn_fwd(p, aix, &h, cr.memory, cr.groups, cr.valid, heads);
            let drop = mode.mask(out.dim());
            apply_drop(&mut out, &drop);
            *x += &out;
            Some(CrossCache { norm, h, attn, drop })
        }
        _ => None,
    };

    let (h2, norm2) = norm_fwd(p, bx.ln2, x);
    let u = linear(&h2, mat(p, bx.w1), vector(p, bx.b1));
    let act = u.mapv(gelu);
    let mut f = linear(&act, mat(p, bx.w2), vector(p, bx.b2));
    let drop_ffn = mode.mask(f.dim());
    apply_drop(&mut f, &drop_ffn);
    *x += &f;
    BlockCache { norm1, h1, attn, drop_attn, cross, norm2, h2, u, act, drop_ffn }
}

/// `dx` holds the gradient of the block output on entry and of its input
/// on return. Gradients reaching the cross-attention memory are added to
/// `dmemory`.
#[allow(clippy::too_many_arguments)]
fn block_bwd<F: Real>(
    p: &ModelParameters<F>,
    bx: &BlockIx,
    cache: &BlockCache<F>,
    dx: &mut Array2<F>,
    g: &mut Grads<F>,
    groups: &[Group],
    heads: usize,
    cross: Option<(&Cross<F>, &mut Array2<F>)>,
) {
    let mut df = dx.clone();
    apply_drop(&mut df, &cache.drop_ffn);
    let dact = linear_bwd(&cache.act, &df, mat(p, bx.w2), g, bx.w2, bx.b2);
    let mut du = dact;
    du.zip_mut_with(&cache.u, |d, &u| *d *= gelu_grad(u));
    let dh2 = linear_bwd(&cache.h2, &du, mat(p, bx.w1), g, bx.w1, bx.b1);
    *dx += &norm_bwd(p, bx.ln2, &cache.norm2, &dh2, g);

    if let (Some((nix, aix)), Some(cc), Some((cr, dmem))) = (bx.cross.as_ref(), cache.cross.as_ref(), cross) {
        let mut dout = dx.clone();
        apply_drop(&mut dout, &cc.drop);
        let (dh, dm) = attn_bwd(p, aix, &cc.attn, &cc.h, cr.memory, &dout, g, cr.groups, heads);
        *dmem += &dm;
        *dx += &norm_bwd(p, *nix, &cc.norm, &dh, g);
    }

    let mut da = dx.clone();
    apply_drop(&mut da, &cache.drop_attn);
    let (dh, dkv) = attn_bwd(p, &bx.attn, &cache.attn, &cache.h1, &cache.h1, &da, g, groups, heads);
    let dh1 = dh + dkv;
    *dx += &norm_bwd(p, bx.ln1, &cache.norm1, &dh1, g);
}

struct EncoderTape<F> {
    inputs: Array2<F>,
    sentinel_rows: Vec<usize>,
    groups: Vec<Group>,
    valid: Vec<bool>,
    blocks: Vec<BlockCache<F>>,
    norm_f: NormCache<F>,
    memory: Array2<F>,
}

pub(crate) struct Tape<'a, F> {
    items: Vec<Item<'a>>,
    rows: Vec<Range<usize>>,
    groups: Vec<Group>,
    cross_groups: Vec<Group>,
    encoder: Option<EncoderTape<F>>,
    drop_emb: Option<Array2<F>>,
    blocks: Vec<BlockCache<F>>,
    norm_f: NormCache<F>,
    hidden: Array2<F>,
    logits: Array2<F>,
    n_targets: usize,
}

pub(crate) struct Output<F> {
    /// Target log-probabilities, item by item.
    pub logprobs: Vec<Vec<F>>,
    /// Mean negative log-likelihood over all targets.
    pub loss: F,
}

fn encode_contexts<F: Real>(
    p: &ModelParameters<F>,
    contexts: &[&[ContextVector]],
    mode: &mut Mode,
) -> EncoderTape<F> {
    let enc = p.layout.encoder.as_ref().expect("contextual layout");
    let d_ctx = p.arch.d_ctx;
    let n: usize = contexts.iter().map(|c| c.len()).sum();
    let mut inputs = Array2::zeros((n, d_ctx));
    let mut sentinel_rows = Vec::new();
    let mut valid = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(contexts.len());
    let mut r = 0;
    for ctx in contexts {
        let start = r;
        for v in ctx.iter() {
            if v.sentinel {
                sentinel_rows.push(r);
            } else {
                for (dst, &src) in inputs.row_mut(r).iter_mut().zip(&v.values) {
                    *dst = c(src as f64);
                }
            }
            valid.push(!v.is_empty);
            r += 1;
        }
        groups.push(Group { q: start..r, kv: start..r, causal: false });
    }
    let mut x = linear(&inputs, mat(p, enc.proj_w), vector(p, enc.proj_b));
    let null = vector(p, enc.null);
    for &row in &sentinel_rows {
        x.row_mut(row).assign(&null);
    }
    let heads = p.arch.heads_enc;
    let blocks = enc.blocks.iter().map(|bx| block_fwd(p, bx, &mut x, &groups, &valid, heads, None, mode)).collect();
    let (memory, norm_f) = norm_fwd(p, enc.ln_f, &x);
    EncoderTape { inputs, sentinel_rows, groups, valid, blocks, norm_f, memory }
}

fn encode_bwd<F: Real>(p: &ModelParameters<F>, tape: &EncoderTape<F>, dmemory: &Array2<F>, g: &mut Grads<F>) {
    let enc = p.layout.encoder.as_ref().expect("contextual layout");
    let mut dx = norm_bwd(p, enc.ln_f, &tape.norm_f, dmemory, g);
    for (bx, cache) in enc.blocks.iter().zip(&tape.blocks).rev() {
        block_bwd(p, bx, cache, &mut dx, g, &tape.groups, p.arch.heads_enc, None);
    }
    {
        let mut gn = g.vector(enc.null);
        for &row in &tape.sentinel_rows {
            gn += &dx.row(row);
        }
    }
    for &row in &tape.sentinel_rows {
        dx.row_mut(row).fill(F::zero());
    }
    linear_bwd(&tape.inputs, &dx, mat(p, enc.proj_w), g, enc.proj_w, enc.proj_b);
}

/// Runs the packed forward pass and keeps everything the reverse pass needs.
pub(crate) fn forward<'a, F: Real>(
    p: &ModelParameters<F>,
    contexts: &[&[ContextVector]],
    items: &[Item<'a>],
    mode: &mut Mode,
) -> (Output<F>, Tape<'a, F>) {
    let d = p.arch.d_model_dec;
    let mut rows = Vec::with_capacity(items.len());
    let mut r = 0;
    for it in items {
        rows.push(r..r + it.input.len());
        r += it.input.len();
    }
    let n = r;
    let groups: Vec<Group> = rows.iter().map(|rg| Group { q: rg.clone(), kv: rg.clone(), causal: true }).collect();
    let valid = vec![true; n];

    let encoder = p.arch.is_contextual().then(|| encode_contexts(p, contexts, mode));
    let cross_groups: Vec<Group> = match &encoder {
        Some(enc) => items
            .iter()
            .zip(&rows)
            .map(|(it, rg)| Group { q: rg.clone(), kv: enc.groups[it.ctx].q.clone(), causal: false })
            .collect(),
        None => Vec::new(),
    };

    let tok = mat(p, p.layout.tok_emb);
    let pos = mat(p, p.layout.pos_emb);
    let mut x = Array2::zeros((n, d));
    for (it, rg) in items.iter().zip(&rows) {
        for (t, &id) in it.input.iter().enumerate() {
            let mut row = x.row_mut(rg.start + t);
            row.assign(&tok.row(id as usize));
            row += &pos.row(t);
        }
    }
    let drop_emb = mode.mask(x.dim());
    apply_drop(&mut x, &drop_emb);

    let heads = p.arch.heads_dec;
    let blocks = {
        let cross = encoder.as_ref().map(|e| Cross { memory: &e.memory, groups: &cross_groups, valid: &e.valid });
        p.layout
            .blocks
            .iter()
            .map(|bx| block_fwd(p, bx, &mut x, &groups, &valid, heads, cross.as_ref(), mode))
            .collect()
    };
    let (hidden, norm_f) = norm_fwd(p, p.layout.ln_f, &x);
    let mut logits = hidden.dot(&tok.t());
    logits += &vector(p, p.layout.out_bias);

    let mut logprobs = Vec::with_capacity(items.len());
    let mut total = F::zero();
    let mut n_targets = 0;
    for (it, rg) in items.iter().zip(&rows) {
        let mut lp = Vec::with_capacity(it.targets.len());
        for (t, &target) in it.targets.iter().enumerate() {
            let row = logits.row(rg.start + t);
            let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
            let lse = row.fold(F::zero(), |a, &v| a + (v - max).exp()).ln() + max;
            let v = row[target as usize] - lse;
            total += v;
            lp.push(v);
        }
        n_targets += it.targets.len();
        logprobs.push(lp);
    }
    let loss = if n_targets > 0 { -total / c(n_targets as f64) } else { F::zero() };
    let tape = Tape {
        items: items.to_vec(),
        rows,
        groups,
        cross_groups,
        encoder,
        drop_emb,
        blocks,
        norm_f,
        hidden,
        logits,
        n_targets,
    };
    (Output { logprobs, loss }, tape)
}

impl<F: Real> Tape<'_, F> {
    pub fn logits(&self) -> &Array2<F> {
        &self.logits
    }
}

/// Accumulates d(mean NLL)/d(params) into `grad`.
pub(crate) fn backward<F: Real>(p: &ModelParameters<F>, tape: &Tape<F>, grad: &mut [F]) {
    if tape.n_targets == 0 {
        return;
    }
    let mut g = Grads { data: grad, layout: &p.layout };
    let inv_n = F::one() / c(tape.n_targets as f64);

    // softmax minus one-hot on target rows, zero elsewhere
    let mut dlogits = Array2::zeros(tape.logits.raw_dim());
    for (it, rg) in tape.items.iter().zip(&tape.rows) {
        for (t, &target) in it.targets.iter().enumerate() {
            let r = rg.start + t;
            let row = tape.logits.row(r);
            let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
            let mut out = dlogits.row_mut(r);
            let mut sum = F::zero();
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o = (v - max).exp();
                sum += *o;
            }
            out.mapv_inplace(|v| v / sum * inv_n);
            out[target as usize] -= inv_n;
        }
    }
    {
        let mut gb = g.vector(p.layout.out_bias);
        gb += &dlogits.sum_axis(Axis(0));
    }
    let tok = mat(p, p.layout.tok_emb);
    general_mat_mul(F::one(), &dlogits.t(), &tape.hidden, F::one(), &mut g.mat(p.layout.tok_emb));
    let dhidden = dlogits.dot(&tok);
    drop(dlogits);
    let mut dx = norm_bwd(p, p.layout.ln_f, &tape.norm_f, &dhidden, &mut g);

    let mut dmemory = tape.encoder.as_ref().map(|e| Array2::zeros(e.memory.raw_dim()));
    let heads = p.arch.heads_dec;
    for (bx, cache) in p.layout.blocks.iter().zip(&tape.blocks).rev() {
        match (&tape.encoder, dmemory.as_mut()) {
            (Some(e), Some(dm)) => {
                let cr = Cross { memory: &e.memory, groups: &tape.cross_groups, valid: &e.valid };
                block_bwd(p, bx, cache, &mut dx, &mut g, &tape.groups, heads, Some((&cr, dm)));
            }
            _ => block_bwd(p, bx, cache, &mut dx, &mut g, &tape.groups, heads, None),
        }
    }

    apply_drop(&mut dx, &tape.drop_emb);
    {
        let mut gt = g.mat(p.layout.tok_emb);
        for (it, rg) in tape.items.iter().zip(&tape.rows) {
            for (t, &id) in it.input.iter().enumerate() {
                let mut row = gt.row_mut(id as usize);
                row += &dx.row(rg.start + t);
            }
        }
    }
    {
        let mut gp = g.mat(p.layout.pos_emb);
        for (it, rg) in tape.items.iter().zip(&tape.rows) {
            for t in 0..it.input.len() {
                let mut row = gp.row_mut(t);
                row += &dx.row(rg.start + t);
            }
        }
    }

    if let (Some(enc), Some(dm)) = (&tape.encoder, &dmemory) {
        encode_bwd(p, enc, dm, &mut g);
    }
}
