//! Encoder-decoder transformer in 64-bit floats with hand-written backward
//! passes. Pre-LN residual blocks; sinusoidal positions; the compression-rate
//! bin embedding is added to every token embedding on both sides.

use super::config::{Conditioning, ModelConfig};
use super::vocab::{Vocab, BOS, EOS};
use super::ModelError;
use crate::crbin::BinIndex;
use ndarray::{s, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;

// ---------------------------------------------------------------------------
// Parameter containers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    pub w: Array2<f64>, // (d_in, d_out)
    pub b: Array2<f64>, // (1, d_out)
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerNorm {
    pub gamma: Array2<f64>, // (1, d)
    pub beta: Array2<f64>,  // (1, d)
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DecoderLayer {
    pub ln1: LayerNorm,
    pub self_attn: Attention,
    pub ln2: LayerNorm,
    pub cross_attn: Attention,
    pub ln3: LayerNorm,
    pub ffn: FeedForward,
}

/// All learnable tensors, including the bin embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub(crate) src_emb: Array2<f64>, // (src_vocab, d)
    pub(crate) tgt_emb: Array2<f64>, // (tgt_vocab, d)
    pub(crate) bin_emb: Array2<f64>, // (num_bins, d)
    pub(crate) enc_layers: Vec<EncoderLayer>,
    pub(crate) enc_ln: LayerNorm,
    pub(crate) dec_layers: Vec<DecoderLayer>,
    pub(crate) dec_ln: LayerNorm,
    pub(crate) out_proj: Linear, // (d, tgt_vocab)
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl Linear {
    fn init(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Self {
        Linear { w: xavier(rng, d_in, d_out), b: Array2::zeros((1, d_out)) }
    }

    fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear { w: Array2::zeros((d_in, d_out)), b: Array2::zeros((1, d_out)) }
    }
}

impl LayerNorm {
    fn init(d: usize) -> Self {
        LayerNorm { gamma: Array2::ones((1, d)), beta: Array2::zeros((1, d)) }
    }

    fn zeros(d: usize) -> Self {
        LayerNorm { gamma: Array2::zeros((1, d)), beta: Array2::zeros((1, d)) }
    }
}

impl Attention {
    fn init(rng: &mut impl Rng, d: usize) -> Self {
        Attention {
            wq: Linear::init(rng, d, d),
            wk: Linear::init(rng, d, d),
            wv: Linear::init(rng, d, d),
            wo: Linear::init(rng, d, d),
        }
    }

    fn zeros(d: usize) -> Self {
        Attention {
            wq: Linear::zeros(d, d),
            wk: Linear::zeros(d, d),
            wv: Linear::zeros(d, d),
            wo: Linear::zeros(d, d),
        }
    }
}

impl FeedForward {
    fn init(rng: &mut impl Rng, d: usize, d_ff: usize) -> Self {
        FeedForward { w1: Linear::init(rng, d, d_ff), w2: Linear::init(rng, d_ff, d) }
    }

    fn zeros(d: usize, d_ff: usize) -> Self {
        FeedForward { w1: Linear::zeros(d, d_ff), w2: Linear::zeros(d_ff, d) }
    }
}

impl ModelParams {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.d_model;
        ModelParams {
            src_emb: xavier(rng, config.src_vocab, d),
            tgt_emb: xavier(rng, config.tgt_vocab, d),
            bin_emb: xavier(rng, config.bin_config.num_bins(), d),
            enc_layers: (0..config.layers)
                .map(|_| EncoderLayer {
                    ln1: LayerNorm::init(d),
                    attn: Attention::init(rng, d),
                    ln2: LayerNorm::init(d),
                    ffn: FeedForward::init(rng, d, config.d_ff),
                })
                .collect(),
            enc_ln: LayerNorm::init(d),
            dec_layers: (0..config.layers)
                .map(|_| DecoderLayer {
                    ln1: LayerNorm::init(d),
                    self_attn: Attention::init(rng, d),
                    ln2: LayerNorm::init(d),
                    cross_attn: Attention::init(rng, d),
                    ln3: LayerNorm::init(d),
                    ffn: FeedForward::init(rng, d, config.d_ff),
                })
                .collect(),
            dec_ln: LayerNorm::init(d),
            out_proj: Linear::init(rng, d, config.tgt_vocab),
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        ModelParams {
            src_emb: Array2::zeros((config.src_vocab, d)),
            tgt_emb: Array2::zeros((config.tgt_vocab, d)),
            bin_emb: Array2::zeros((config.bin_config.num_bins(), d)),
            enc_layers: (0..config.layers)
                .map(|_| EncoderLayer {
                    ln1: LayerNorm::zeros(d),
                    attn: Attention::zeros(d),
                    ln2: LayerNorm::zeros(d),
                    ffn: FeedForward::zeros(d, config.d_ff),
                })
                .collect(),
            enc_ln: LayerNorm::zeros(d),
            dec_layers: (0..config.layers)
                .map(|_| DecoderLayer {
                    ln1: LayerNorm::zeros(d),
                    self_attn: Attention::zeros(d),
                    ln2: LayerNorm::zeros(d),
                    cross_attn: Attention::zeros(d),
                    ln3: LayerNorm::zeros(d),
                    ffn: FeedForward::zeros(d, config.d_ff),
                })
                .collect(),
            dec_ln: LayerNorm::zeros(d),
            out_proj: Linear::zeros(d, config.tgt_vocab),
        }
    }

    pub fn bin_embedding(&self) -> &Array2<f64> {
        &self.bin_emb
    }

    pub fn bin_embedding_mut(&mut self) -> &mut Array2<f64> {
        &mut self.bin_emb
    }

    /// Named tensors in declaration order; the checkpoint tensor order.
    pub fn flat(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("src_emb".into(), &self.src_emb),
            ("tgt_emb".into(), &self.tgt_emb),
            ("bin_emb".into(), &self.bin_emb),
        ];
        for (i, l) in self.enc_layers.iter().enumerate() {
            let p = format!("enc.{i}");
            out.push((format!("{p}.ln1.gamma"), &l.ln1.gamma));
            out.push((format!("{p}.ln1.beta"), &l.ln1.beta));
            push_attn(&mut out, &format!("{p}.attn"), &l.attn);
            out.push((format!("{p}.ln2.gamma"), &l.ln2.gamma));
            out.push((format!("{p}.ln2.beta"), &l.ln2.beta));
            push_ffn(&mut out, &format!("{p}.ffn"), &l.ffn);
        }
        out.push(("enc_ln.gamma".into(), &self.enc_ln.gamma));
        out.push(("enc_ln.beta".into(), &self.enc_ln.beta));
        for (i, l) in self.dec_layers.iter().enumerate() {
            let p = format!("dec.{i}");
            out.push((format!("{p}.ln1.gamma"), &l.ln1.gamma));
            out.push((format!("{p}.ln1.beta"), &l.ln1.beta));
            push_attn(&mut out, &format!("{p}.self_attn"), &l.self_attn);
            out.push((format!("{p}.ln2.gamma"), &l.ln2.gamma));
            out.push((format!("{p}.ln2.beta"), &l.ln2.beta));
            push_attn(&mut out, &format!("{p}.cross_attn"), &l.cross_attn);
            out.push((format!("{p}.ln3.gamma"), &l.ln3.gamma));
            out.push((format!("{p}.ln3.beta"), &l.ln3.beta));
            push_ffn(&mut out, &format!("{p}.ffn"), &l.ffn);
        }
        out.push(("dec_ln.gamma".into(), &self.dec_ln.gamma));
        out.push(("dec_ln.beta".into(), &self.dec_ln.beta));
        out.push(("out_proj.w".into(), &self.out_proj.w));
        out.push(("out_proj.b".into(), &self.out_proj.b));
        out
    }

    /// Mutable view in the same order as [`ModelParams::flat`].
    pub fn flat_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![
            ("src_emb".into(), &mut self.src_emb),
            ("tgt_emb".into(), &mut self.tgt_emb),
            ("bin_emb".into(), &mut self.bin_emb),
        ];
        for (i, l) in self.enc_layers.iter_mut().enumerate() {
            let p = format!("enc.{i}");
            out.push((format!("{p}.ln1.gamma"), &mut l.ln1.gamma));
            out.push((format!("{p}.ln1.beta"), &mut l.ln1.beta));
            push_attn_mut(&mut out, &format!("{p}.attn"), &mut l.attn);
            out.push((format!("{p}.ln2.gamma"), &mut l.ln2.gamma));
            out.push((format!("{p}.ln2.beta"), &mut l.ln2.beta));
            push_ffn_mut(&mut out, &format!("{p}.ffn"), &mut l.ffn);
        }
        out.push(("enc_ln.gamma".into(), &mut self.enc_ln.gamma));
        out.push(("enc_ln.beta".into(), &mut self.enc_ln.beta));
        for (i, l) in self.dec_layers.iter_mut().enumerate() {
            let p = format!("dec.{i}");
            out.push((format!("{p}.ln1.gamma"), &mut l.ln1.gamma));
            out.push((format!("{p}.ln1.beta"), &mut l.ln1.beta));
            push_attn_mut(&mut out, &format!("{p}.self_attn"), &mut l.self_attn);
            out.push((format!("{p}.ln2.gamma"), &mut l.ln2.gamma));
            out.push((format!("{p}.ln2.beta"), &mut l.ln2.beta));
            push_attn_mut(&mut out, &format!("{p}.cross_attn"), &mut l.cross_attn);
            out.push((format!("{p}.ln3.gamma"), &mut l.ln3.gamma));
            out.push((format!("{p}.ln3.beta"), &mut l.ln3.beta));
            push_ffn_mut(&mut out, &format!("{p}.ffn"), &mut l.ffn);
        }
        out.push(("dec_ln.gamma".into(), &mut self.dec_ln.gamma));
        out.push(("dec_ln.beta".into(), &mut self.dec_ln.beta));
        out.push(("out_proj.w".into(), &mut self.out_proj.w));
        out.push(("out_proj.b".into(), &mut self.out_proj.b));
        out
    }

    /// Element-wise accumulate, used when summing per-sample gradients.
    pub fn add_assign(&mut self, other: &ModelParams) {
        let other_flat = other.flat();
        for ((_, dst), (_, src)) in self.flat_mut().into_iter().zip(other_flat) {
            *dst += src;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.flat_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.flat().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

fn push_attn<'a>(out: &mut Vec<(String, &'a Array2<f64>)>, prefix: &str, a: &'a Attention) {
    for (name, lin) in [("wq", &a.wq), ("wk", &a.wk), ("wv", &a.wv), ("wo", &a.wo)] {
        out.push((format!("{prefix}.{name}.w"), &lin.w));
        out.push((format!("{prefix}.{name}.b"), &lin.b));
    }
}

fn push_attn_mut<'a>(
    out: &mut Vec<(String, &'a mut Array2<f64>)>,
    prefix: &str,
    a: &'a mut Attention,
) {
    out.push((format!("{prefix}.wq.w"), &mut a.wq.w));
    out.push((format!("{prefix}.wq.b"), &mut a.wq.b));
    out.push((format!("{prefix}.wk.w"), &mut a.wk.w));
    out.push((format!("{prefix}.wk.b"), &mut a.wk.b));
    out.push((format!("{prefix}.wv.w"), &mut a.wv.w));
    out.push((format!("{prefix}.wv.b"), &mut a.wv.b));
    out.push((format!("{prefix}.wo.w"), &mut a.wo.w));
    out.push((format!("{prefix}.wo.b"), &mut a.wo.b));
}

fn push_ffn<'a>(out: &mut Vec<(String, &'a Array2<f64>)>, prefix: &str, f: &'a FeedForward) {
    out.push((format!("{prefix}.w1.w"), &f.w1.w));
    out.push((format!("{prefix}.w1.b"), &f.w1.b));
    out.push((format!("{prefix}.w2.w"), &f.w2.w));
    out.push((format!("{prefix}.w2.b"), &f.w2.b));
}

fn push_ffn_mut<'a>(
    out: &mut Vec<(String, &'a mut Array2<f64>)>,
    prefix: &str,
    f: &'a mut FeedForward,
) {
    out.push((format!("{prefix}.w1.w"), &mut f.w1.w));
    out.push((format!("{prefix}.w1.b"), &mut f.w1.b));
    out.push((format!("{prefix}.w2.w"), &mut f.w2.w));
    out.push((format!("{prefix}.w2.b"), &mut f.w2.b));
}

// ---------------------------------------------------------------------------
// Primitive ops with caches
// ---------------------------------------------------------------------------

const LN_EPS: f64 = 1e-9;

struct LnCache {
    normed: Array2<f64>,  // x_hat
    inv_std: Vec<f64>,    // per row
}

fn layer_norm_forward(x: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut normed = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in normed.rows_mut() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * is);
        inv_std.push(is);
    }
    let y = &normed * &ln.gamma + &ln.beta;
    (y, LnCache { normed, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    ln: &LayerNorm,
    cache: &LnCache,
    d_ln: &mut LayerNorm,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    d_ln.beta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    d_ln.gamma += &(dy * &cache.normed).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &ln.gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let xhat = cache.normed.row(i);
        let dxh = dxhat.row(i);
        let mean_dxh = dxh.sum() / d;
        let mean_dxh_xhat = dxh.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        let is = cache.inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = is * (dxh[j] - mean_dxh - xhat[j] * mean_dxh_xhat);
        }
    }
    dx
}

fn linear_forward(x: &Array2<f64>, lin: &Linear) -> Array2<f64> {
    x.dot(&lin.w) + &lin.b
}

fn linear_backward(
    dy: &Array2<f64>,
    x: &Array2<f64>,
    lin: &Linear,
    d_lin: &mut Linear,
) -> Array2<f64> {
    d_lin.w += &x.t().dot(dy);
    d_lin.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&lin.w.t())
}

fn softmax_rows(mut scores: Array2<f64>) -> Array2<f64> {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    scores
}

struct AttnCache {
    q_in: Array2<f64>,
    kv_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Vec<Array2<f64>>, // per head, (nq, nk)
    ctx: Array2<f64>,
}

fn attention_forward(
    q_in: &Array2<f64>,
    kv_in: &Array2<f64>,
    params: &Attention,
    heads: usize,
    causal: bool,
) -> (Array2<f64>, AttnCache) {
    let d = q_in.ncols();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = linear_forward(q_in, &params.wq);
    let k = linear_forward(kv_in, &params.wk);
    let v = linear_forward(kv_in, &params.wv);
    let nq = q.nrows();
    let mut ctx = Array2::zeros((nq, d));
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t());
        scores.mapv_inplace(|s| s * scale);
        if causal {
            for i in 0..scores.nrows() {
                for j in (i + 1)..scores.ncols() {
                    scores[[i, j]] = f64::NEG_INFINITY;
                }
            }
        }
        let a = softmax_rows(scores);
        ctx.slice_mut(cols).assign(&a.dot(&vh));
        weights.push(a);
    }
    let out = linear_forward(&ctx, &params.wo);
    let cache = AttnCache {
        q_in: q_in.clone(),
        kv_in: kv_in.clone(),
        q,
        k,
        v,
        weights,
        ctx,
    };
    (out, cache)
}

/// Returns (d_q_in, d_kv_in).
fn attention_backward(
    dout: &Array2<f64>,
    cache: &AttnCache,
    params: &Attention,
    d_params: &mut Attention,
    heads: usize,
) -> (Array2<f64>, Array2<f64>) {
    let d = cache.q.ncols();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let d_ctx = linear_backward(dout, &cache.ctx, &params.wo, &mut d_params.wo);
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dkm = Array2::zeros(cache.k.raw_dim());
    let mut dvm = Array2::zeros(cache.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let a = &cache.weights[h];
        let d_ctx_h = d_ctx.slice(cols);
        let vh = cache.v.slice(cols);
        let d_a = d_ctx_h.dot(&vh.t());
        dvm.slice_mut(cols).assign(&a.t().dot(&d_ctx_h));
        // softmax backward per row
        let mut d_scores = Array2::zeros(a.raw_dim());
        for i in 0..a.nrows() {
            let ai = a.row(i);
            let dai = d_a.row(i);
            let dot: f64 = ai.iter().zip(dai.iter()).map(|(x, y)| x * y).sum();
            for j in 0..a.ncols() {
                d_scores[[i, j]] = ai[j] * (dai[j] - dot);
            }
        }
        d_scores.mapv_inplace(|v| v * scale);
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);
        dq.slice_mut(cols).assign(&d_scores.dot(&kh));
        dkm.slice_mut(cols).assign(&d_scores.t().dot(&qh));
    }
    let d_q_in = linear_backward(&dq, &cache.q_in, &params.wq, &mut d_params.wq);
    let d_kv_k = linear_backward(&dkm, &cache.kv_in, &params.wk, &mut d_params.wk);
    let d_kv_v = linear_backward(&dvm, &cache.kv_in, &params.wv, &mut d_params.wv);
    (d_q_in, d_kv_k + d_kv_v)
}

struct FfnCache {
    x: Array2<f64>,
    h_pre: Array2<f64>,
    h: Array2<f64>,
}

fn ffn_forward(x: &Array2<f64>, params: &FeedForward) -> (Array2<f64>, FfnCache) {
    let h_pre = linear_forward(x, &params.w1);
    let h = h_pre.mapv(|v| v.max(0.0));
    let y = linear_forward(&h, &params.w2);
    (y, FfnCache { x: x.clone(), h_pre, h })
}

fn ffn_backward(
    dy: &Array2<f64>,
    cache: &FfnCache,
    params: &FeedForward,
    d_params: &mut FeedForward,
) -> Array2<f64> {
    let dh = linear_backward(dy, &cache.h, &params.w2, &mut d_params.w2);
    let mut dh_pre = dh;
    dh_pre.zip_mut_with(&cache.h_pre, |g, &pre| {
        if pre <= 0.0 {
            *g = 0.0;
        }
    });
    linear_backward(&dh_pre, &cache.x, &params.w1, &mut d_params.w1)
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

fn positional_encoding(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(t, j)| {
        let exponent = (2 * (j / 2)) as f64 / d as f64;
        let angle = t as f64 / 10000f64.powf(exponent);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedSide {
    Encoder,
    Decoder,
}

/// `token_emb * sqrt(d_model) + positional + bin_embedding[bin]`, the bin
/// term applied on both sides when conditioning is the bin embedding and
/// omitted otherwise.
pub fn embed_with_cr(
    tokens: &[usize],
    bin: BinIndex,
    side: EmbedSide,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Array2<f64>, ModelError> {
    if tokens.len() > config.max_len {
        return Err(ModelError::LengthError { len: tokens.len(), max: config.max_len });
    }
    let table = match side {
        EmbedSide::Encoder => &params.src_emb,
        EmbedSide::Decoder => &params.tgt_emb,
    };
    for &t in tokens {
        if t >= table.nrows() {
            return Err(ModelError::IndexError(format!("token id {t} >= vocab {}", table.nrows())));
        }
    }
    if bin.value() < 1 || bin.value() > config.bin_config.num_bins() {
        return Err(ModelError::IndexError(format!(
            "bin {} out of 1..={}",
            bin.value(),
            config.bin_config.num_bins()
        )));
    }
    let d = config.d_model;
    let scale = (d as f64).sqrt();
    let mut x = Array2::zeros((tokens.len(), d));
    let pos = positional_encoding(tokens.len(), d);
    for (i, &t) in tokens.iter().enumerate() {
        let emb = table.row(t);
        for j in 0..d {
            x[[i, j]] = emb[j] * scale + pos[[i, j]];
        }
    }
    if config.conditioning == Conditioning::CrEmbedding {
        let row = params.bin_emb.row(bin.value() - 1);
        for i in 0..tokens.len() {
            for j in 0..d {
                x[[i, j]] += row[j];
            }
        }
    }
    Ok(x)
}

fn embed_backward(
    dx: &Array2<f64>,
    tokens: &[usize],
    bin: BinIndex,
    side: EmbedSide,
    config: &ModelConfig,
    grads: &mut ModelParams,
) {
    let scale = (config.d_model as f64).sqrt();
    let table = match side {
        EmbedSide::Encoder => &mut grads.src_emb,
        EmbedSide::Decoder => &mut grads.tgt_emb,
    };
    for (i, &t) in tokens.iter().enumerate() {
        let mut row = table.row_mut(t);
        for j in 0..dx.ncols() {
            row[j] += dx[[i, j]] * scale;
        }
    }
    if config.conditioning == Conditioning::CrEmbedding {
        let mut row = grads.bin_emb.row_mut(bin.value() - 1);
        for j in 0..dx.ncols() {
            row[j] += dx.column(j).sum();
        }
    }
}

// ---------------------------------------------------------------------------
// Full forward / backward
// ---------------------------------------------------------------------------

struct EncLayerCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ffn: FfnCache,
}

struct DecLayerCache {
    ln1: LnCache,
    self_attn: AttnCache,
    ln2: LnCache,
    cross_attn: AttnCache,
    ln3: LnCache,
    ffn: FfnCache,
}

struct Trace {
    enc_layer_caches: Vec<EncLayerCache>,
    enc_final_ln: LnCache,
    enc_out: Array2<f64>,
    dec_layer_caches: Vec<DecLayerCache>,
    dec_final_ln: LnCache,
    dec_out: Array2<f64>,
}

fn encode(
    src_x: Array2<f64>,
    params: &ModelParams,
    config: &ModelConfig,
) -> (Array2<f64>, Vec<EncLayerCache>, LnCache) {
    let mut x = src_x;
    let mut caches = Vec::with_capacity(config.layers);
    for layer in &params.enc_layers {
        let (a_in, ln1) = layer_norm_forward(&x, &layer.ln1);
        let (a, attn) = attention_forward(&a_in, &a_in, &layer.attn, config.heads, false);
        let x1 = &x + &a;
        let (f_in, ln2) = layer_norm_forward(&x1, &layer.ln2);
        let (f, ffn) = ffn_forward(&f_in, &layer.ffn);
        x = &x1 + &f;
        caches.push(EncLayerCache { ln1, attn, ln2, ffn });
    }
    let (enc_out, final_ln) = layer_norm_forward(&x, &params.enc_ln);
    (enc_out, caches, final_ln)
}

fn decode_states(
    tgt_x: Array2<f64>,
    enc_out: &Array2<f64>,
    params: &ModelParams,
    config: &ModelConfig,
) -> (Array2<f64>, Vec<DecLayerCache>, LnCache) {
    let mut x = tgt_x;
    let mut caches = Vec::with_capacity(config.layers);
    for layer in &params.dec_layers {
        let (a_in, ln1) = layer_norm_forward(&x, &layer.ln1);
        let (a, self_attn) = attention_forward(&a_in, &a_in, &layer.self_attn, config.heads, true);
        let x1 = &x + &a;
        let (c_in, ln2) = layer_norm_forward(&x1, &layer.ln2);
        let (c, cross_attn) =
            attention_forward(&c_in, enc_out, &layer.cross_attn, config.heads, false);
        let x2 = &x1 + &c;
        let (f_in, ln3) = layer_norm_forward(&x2, &layer.ln3);
        let (f, ffn) = ffn_forward(&f_in, &layer.ffn);
        x = &x2 + &f;
        caches.push(DecLayerCache { ln1, self_attn, ln2, cross_attn, ln3, ffn });
    }
    let (dec_out, final_ln) = layer_norm_forward(&x, &params.dec_ln);
    (dec_out, caches, final_ln)
}

fn forward_trace(
    src: &[usize],
    tgt_prefix: &[usize],
    bin: BinIndex,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(Array2<f64>, Trace), ModelError> {
    let src_x = embed_with_cr(src, bin, EmbedSide::Encoder, params, config)?;
    let tgt_x = embed_with_cr(tgt_prefix, bin, EmbedSide::Decoder, params, config)?;
    let (enc_out, enc_layer_caches, enc_final_ln) = encode(src_x, params, config);
    let (dec_out, dec_layer_caches, dec_final_ln) =
        decode_states(tgt_x, &enc_out, params, config);
    let logits = linear_forward(&dec_out, &params.out_proj);
    let trace = Trace {
        enc_layer_caches,
        enc_final_ln,
        enc_out,
        dec_layer_caches,
        dec_final_ln,
        dec_out,
    };
    Ok((logits, trace))
}

/// Encoder output for a source, reusable across decode steps.
pub(crate) fn encoder_states(
    src: &[usize],
    bin: BinIndex,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Array2<f64>, ModelError> {
    let src_x = embed_with_cr(src, bin, EmbedSide::Encoder, params, config)?;
    let (enc_out, _, _) = encode(src_x, params, config);
    Ok(enc_out)
}

/// Teacher-forced logits against precomputed encoder states.
pub(crate) fn decoder_logits(
    enc_out: &Array2<f64>,
    dec_in: &[usize],
    bin: BinIndex,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Array2<f64>, ModelError> {
    let tgt_x = embed_with_cr(dec_in, bin, EmbedSide::Decoder, params, config)?;
    let (dec_out, _, _) = decode_states(tgt_x, enc_out, params, config);
    Ok(linear_forward(&dec_out, &params.out_proj))
}

/// Logits of shape `|tgt_prefix| x tgt_vocab` for teacher-forced decoding.
pub fn forward(
    src: &[usize],
    tgt_prefix: &[usize],
    bin: BinIndex,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Array2<f64>, ModelError> {
    forward_trace(src, tgt_prefix, bin, params, config).map(|(logits, _)| logits)
}

fn backward(
    dlogits: &Array2<f64>,
    src: &[usize],
    tgt_prefix: &[usize],
    bin: BinIndex,
    trace: &Trace,
    params: &ModelParams,
    config: &ModelConfig,
    grads: &mut ModelParams,
) {
    let mut dx = linear_backward(dlogits, &trace.dec_out, &params.out_proj, &mut grads.out_proj);
    dx = layer_norm_backward(&dx, &params.dec_ln, &trace.dec_final_ln, &mut grads.dec_ln);

    let mut d_enc_out: Array2<f64> = Array2::zeros(trace.enc_out.raw_dim());
    for (i, layer) in params.dec_layers.iter().enumerate().rev() {
        let cache = &trace.dec_layer_caches[i];
        let g = &mut grads.dec_layers[i];
        // out = x2 + ffn(ln3(x2))
        let d_f_in = ffn_backward(&dx, &cache.ffn, &layer.ffn, &mut g.ffn);
        let dx2 = &dx + &layer_norm_backward(&d_f_in, &layer.ln3, &cache.ln3, &mut g.ln3);
        // x2 = x1 + cross(ln2(x1), enc_out)
        let (d_c_in, d_kv) = attention_backward(
            &dx2,
            &cache.cross_attn,
            &layer.cross_attn,
            &mut g.cross_attn,
            config.heads,
        );
        d_enc_out += &d_kv;
        let dx1 = &dx2 + &layer_norm_backward(&d_c_in, &layer.ln2, &cache.ln2, &mut g.ln2);
        // x1 = x + self(ln1(x))
        let (d_a_q, d_a_kv) = attention_backward(
            &dx1,
            &cache.self_attn,
            &layer.self_attn,
            &mut g.self_attn,
            config.heads,
        );
        let d_a_in = d_a_q + d_a_kv;
        dx = &dx1 + &layer_norm_backward(&d_a_in, &layer.ln1, &cache.ln1, &mut g.ln1);
    }
    embed_backward(&dx, tgt_prefix, bin, EmbedSide::Decoder, config, grads);

    let mut dex =
        layer_norm_backward(&d_enc_out, &params.enc_ln, &trace.enc_final_ln, &mut grads.enc_ln);
    for (i, layer) in params.enc_layers.iter().enumerate().rev() {
        let cache = &trace.enc_layer_caches[i];
        let g = &mut grads.enc_layers[i];
        let d_f_in = ffn_backward(&dex, &cache.ffn, &layer.ffn, &mut g.ffn);
        let dx1 = &dex + &layer_norm_backward(&d_f_in, &layer.ln2, &cache.ln2, &mut g.ln2);
        let (d_a_q, d_a_kv) =
            attention_backward(&dx1, &cache.attn, &layer.attn, &mut g.attn, config.heads);
        let d_a_in = d_a_q + d_a_kv;
        dex = &dx1 + &layer_norm_backward(&d_a_in, &layer.ln1, &cache.ln1, &mut g.ln1);
    }
    embed_backward(&dex, src, bin, EmbedSide::Encoder, config, grads);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// One teacher-forcing example in id space.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub src: Vec<usize>,
    pub dec_in: Vec<usize>,
    pub dec_target: Vec<usize>,
    pub bin: BinIndex,
}

/// Builds the teacher-forcing view of a pair. Task-token conditioning
/// prepends the per-bin indicator to the source and uses it in place of BOS
/// on the target side.
pub fn prepare_example(
    src_ids: &[usize],
    tgt_ids: &[usize],
    bin: BinIndex,
    config: &ModelConfig,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> Result<PreparedExample, ModelError> {
    let mut src = Vec::with_capacity(src_ids.len() + 1);
    let mut dec_in = Vec::with_capacity(tgt_ids.len() + 1);
    if config.conditioning == Conditioning::TaskToken {
        let s_task = src_vocab
            .task_token_id(bin)
            .ok_or_else(|| ModelError::ConfigMismatch("no task token for bin".into()))?;
        let t_task = tgt_vocab
            .task_token_id(bin)
            .ok_or_else(|| ModelError::ConfigMismatch("no task token for bin".into()))?;
        src.push(s_task);
        dec_in.push(t_task);
    } else {
        dec_in.push(BOS);
    }
    src.extend_from_slice(src_ids);
    dec_in.extend_from_slice(tgt_ids);
    let mut dec_target = tgt_ids.to_vec();
    dec_target.push(EOS);
    Ok(PreparedExample { src, dec_in, dec_target, bin })
}

fn example_loss_and_grads(
    ex: &PreparedExample,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(f64, usize, ModelParams), ModelError> {
    let (logits, trace) = forward_trace(&ex.src, &ex.dec_in, ex.bin, params, config)?;
    let vocab = logits.ncols() as f64;
    let eps = config.label_smoothing;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss_sum = 0.0;
    for (t, &target) in ex.dec_target.iter().enumerate() {
        if target >= logits.ncols() {
            return Err(ModelError::IndexError(format!("target id {target} out of vocab")));
        }
        let row = logits.row(t);
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let log_z = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        // smoothed target distribution q = (1-eps) one-hot + eps/K
        let mean_logit = row.sum() / vocab;
        loss_sum += (1.0 - eps) * (log_z - row[target]) + eps * (log_z - mean_logit);
        for j in 0..logits.ncols() {
            let p = (row[j] - log_z).exp();
            let q = if j == target { 1.0 - eps + eps / vocab } else { eps / vocab };
            dlogits[[t, j]] = p - q;
        }
    }
    let mut grads = ModelParams::zeros(config);
    backward(&dlogits, &ex.src, &ex.dec_in, ex.bin, &trace, params, config, &mut grads);
    Ok((loss_sum, ex.dec_target.len(), grads))
}

/// Token-mean cross-entropy over the batch with gradients for every
/// parameter tensor. Per-sample work runs in parallel; the reduction order
/// is fixed by sample index so results are reproducible.
pub fn loss_and_grads(
    batch: &[PreparedExample],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(f64, ModelParams), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let per_sample: Vec<Result<(f64, usize, ModelParams), ModelError>> = batch
        .par_iter()
        .map(|ex| example_loss_and_grads(ex, params, config))
        .collect();
    let mut total_loss = 0.0;
    let mut total_tokens = 0usize;
    let mut grads = ModelParams::zeros(config);
    for r in per_sample {
        let (l, n, g) = r?;
        total_loss += l;
        total_tokens += n;
        grads.add_assign(&g);
    }
    let norm = 1.0 / total_tokens as f64;
    grads.scale(norm);
    Ok((total_loss * norm, grads))
}

/// Validation loss only (no gradients).
pub fn batch_loss(
    batch: &[PreparedExample],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let per_sample: Vec<Result<(f64, usize), ModelError>> = batch
        .par_iter()
        .map(|ex| {
            let (logits, _) = forward_trace(&ex.src, &ex.dec_in, ex.bin, params, config)?;
            let eps = config.label_smoothing;
            let vocab = logits.ncols() as f64;
            let mut loss = 0.0;
            for (t, &target) in ex.dec_target.iter().enumerate() {
                let row = logits.row(t);
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let log_z = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                let mean_logit = row.sum() / vocab;
                loss += (1.0 - eps) * (log_z - row[target]) + eps * (log_z - mean_logit);
            }
            Ok((loss, ex.dec_target.len()))
        })
        .collect();
    let mut total = 0.0;
    let mut tokens = 0usize;
    for r in per_sample {
        let (l, n) = r?;
        total += l;
        tokens += n;
    }
    Ok(total / tokens as f64)
}
