//! The regression model: a small pre-norm transformer encoder with a
//! linear head on the position-0 vector, plus the shared-encoder
//! multi-task variant.
//!
//! Everything runs in f64 with hand-written forward/backward passes so
//! gradients can be verified against finite differences. The encoder is
//! deliberately ordinary: learned token + position embeddings, pre-norm
//! blocks (LN → multi-head attention → residual, LN → GELU feedforward →
//! residual), key-side padding masks, no final layer norm. A `layers: 0`
//! config degenerates to the identity encoder, which the perturbation
//! tests use as a debug model.
//!
//! Parameter tensors are visited in one fixed order everywhere (init,
//! optimizer updates, digests, serialization), which is what makes
//! bit-level reproducibility checks possible.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Dataset, FeatContext, Subtask};
use crate::encoding::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::PredictionSet;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const CHECKPOINT_FORMAT: &str = "lexcomp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Number of transformer blocks; 0 is allowed and means the identity
    /// encoder (embeddings pass straight to pooling), used for debugging.
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub feedforward: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Regularization hook; all desk-scale presets run with 0.0 so that
    /// training is deterministic and finite-difference checks apply.
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn toy(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            layers: 2,
            heads: 2,
            hidden: 32,
            feedforward: 64,
            vocab_size,
            max_len,
            dropout: 0.0,
        }
    }

    pub fn bert_base(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            layers: 12,
            heads: 12,
            hidden: 768,
            feedforward: 3072,
            vocab_size,
            max_len,
            dropout: 0.1,
        }
    }

    pub fn roberta_large(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            layers: 24,
            heads: 16,
            hidden: 1024,
            feedforward: 4096,
            vocab_size,
            max_len,
            dropout: 0.1,
        }
    }

    pub fn preset(name: &str, vocab_size: usize, max_len: usize) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy(vocab_size, max_len)),
            "bert_base" => Ok(Self::bert_base(vocab_size, max_len)),
            "roberta_large" => Ok(Self::roberta_large(vocab_size, max_len)),
            other => Err(Error::invalid(format!("unknown encoder preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads < 1 || self.hidden < 1 || self.feedforward < 1 || self.max_len < 1 {
            return Err(Error::invalid("encoder dimensions must be at least 1"));
        }
        if self.vocab_size < 4 {
            return Err(Error::invalid(
                "vocab_size must cover the four reserved token ids",
            ));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl LayerParams {
    fn zeros(hidden: usize, ff: usize) -> Self {
        LayerParams {
            ln1_g: Array1::zeros(hidden),
            ln1_b: Array1::zeros(hidden),
            wq: Array2::zeros((hidden, hidden)),
            bq: Array1::zeros(hidden),
            wk: Array2::zeros((hidden, hidden)),
            bk: Array1::zeros(hidden),
            wv: Array2::zeros((hidden, hidden)),
            bv: Array1::zeros(hidden),
            wo: Array2::zeros((hidden, hidden)),
            bo: Array1::zeros(hidden),
            ln2_g: Array1::zeros(hidden),
            ln2_b: Array1::zeros(hidden),
            w1: Array2::zeros((hidden, ff)),
            b1: Array1::zeros(ff),
            w2: Array2::zeros((ff, hidden)),
            b2: Array1::zeros(hidden),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        let mut push = |name: &str, data: &'a [f64]| out.push((format!("{prefix}{name}"), data));
        push("ln1_g", self.ln1_g.as_slice().unwrap());
        push("ln1_b", self.ln1_b.as_slice().unwrap());
        push("wq", self.wq.as_slice().unwrap());
        push("bq", self.bq.as_slice().unwrap());
        push("wk", self.wk.as_slice().unwrap());
        push("bk", self.bk.as_slice().unwrap());
        push("wv", self.wv.as_slice().unwrap());
        push("bv", self.bv.as_slice().unwrap());
        push("wo", self.wo.as_slice().unwrap());
        push("bo", self.bo.as_slice().unwrap());
        push("ln2_g", self.ln2_g.as_slice().unwrap());
        push("ln2_b", self.ln2_b.as_slice().unwrap());
        push("w1", self.w1.as_slice().unwrap());
        push("b1", self.b1.as_slice().unwrap());
        push("w2", self.w2.as_slice().unwrap());
        push("b2", self.b2.as_slice().unwrap());
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        let LayerParams {
            ln1_g,
            ln1_b,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln2_g,
            ln2_b,
            w1,
            b1,
            w2,
            b2,
        } = self;
        let mut push =
            |name: &str, data: &'a mut [f64]| out.push((format!("{prefix}{name}"), data));
        push("ln1_g", ln1_g.as_slice_mut().unwrap());
        push("ln1_b", ln1_b.as_slice_mut().unwrap());
        push("wq", wq.as_slice_mut().unwrap());
        push("bq", bq.as_slice_mut().unwrap());
        push("wk", wk.as_slice_mut().unwrap());
        push("bk", bk.as_slice_mut().unwrap());
        push("wv", wv.as_slice_mut().unwrap());
        push("bv", bv.as_slice_mut().unwrap());
        push("wo", wo.as_slice_mut().unwrap());
        push("bo", bo.as_slice_mut().unwrap());
        push("ln2_g", ln2_g.as_slice_mut().unwrap());
        push("ln2_b", ln2_b.as_slice_mut().unwrap());
        push("w1", w1.as_slice_mut().unwrap());
        push("b1", b1.as_slice_mut().unwrap());
        push("w2", w2.as_slice_mut().unwrap());
        push("b2", b2.as_slice_mut().unwrap());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub tok: Array2<f64>,
    pub pos: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        EncoderParams {
            tok: Array2::zeros((cfg.vocab_size, cfg.hidden)),
            pos: Array2::zeros((cfg.max_len, cfg.hidden)),
            layers: (0..cfg.layers)
                .map(|_| LayerParams::zeros(cfg.hidden, cfg.feedforward))
                .collect(),
        }
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a [f64])>) {
        out.push(("tok".into(), self.tok.as_slice().unwrap()));
        out.push(("pos".into(), self.pos.as_slice().unwrap()));
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("layer{i}."), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push(("tok".into(), self.tok.as_slice_mut().unwrap()));
        out.push(("pos".into(), self.pos.as_slice_mut().unwrap()));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("layer{i}."), out);
        }
    }
}

/// Linear map from the pooled vector (plus the frequency feature when
/// enabled) to the raw score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w: Array1<f64>,
    pub b: f64,
}

impl HeadParams {
    pub fn zeros(dim: usize) -> Self {
        HeadParams {
            w: Array1::zeros(dim),
            b: 0.0,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        out.push((format!("{prefix}w"), self.w.as_slice().unwrap()));
        out.push((format!("{prefix}b"), std::slice::from_ref(&self.b)));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((format!("{prefix}w"), self.w.as_slice_mut().unwrap()));
        out.push((format!("{prefix}b"), std::slice::from_mut(&mut self.b)));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub cfg: EncoderConfig,
    pub feat_enabled: bool,
    pub enc: EncoderParams,
    pub head: HeadParams,
}

/// One shared encoder feeding a head per task; used by the multi-task
/// training regime. Heads are keyed by task id in sorted order so every
/// traversal is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskModel {
    pub cfg: EncoderConfig,
    pub feat_enabled: bool,
    pub enc: EncoderParams,
    pub heads: BTreeMap<String, HeadParams>,
}

fn fill_uniform(rng: &mut ChaCha8Rng, data: &mut [f64], bound: f64) {
    for x in data {
        *x = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
    }
}

fn init_encoder(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> EncoderParams {
    let mut enc = EncoderParams::zeros(cfg);
    let emb_bound = 1.0 / (cfg.hidden as f64).sqrt();
    fill_uniform(rng, enc.tok.as_slice_mut().unwrap(), emb_bound);
    fill_uniform(rng, enc.pos.as_slice_mut().unwrap(), emb_bound);
    let ff_bound = 1.0 / (cfg.feedforward as f64).sqrt();
    for layer in &mut enc.layers {
        layer.ln1_g.fill(1.0);
        layer.ln2_g.fill(1.0);
        fill_uniform(rng, layer.wq.as_slice_mut().unwrap(), emb_bound);
        fill_uniform(rng, layer.wk.as_slice_mut().unwrap(), emb_bound);
        fill_uniform(rng, layer.wv.as_slice_mut().unwrap(), emb_bound);
        fill_uniform(rng, layer.wo.as_slice_mut().unwrap(), emb_bound);
        fill_uniform(rng, layer.w1.as_slice_mut().unwrap(), emb_bound);
        fill_uniform(rng, layer.w2.as_slice_mut().unwrap(), ff_bound);
    }
    enc
}

fn init_head(cfg: &EncoderConfig, feat: bool, rng: &mut ChaCha8Rng) -> HeadParams {
    let dim = cfg.hidden + usize::from(feat);
    let mut head = HeadParams::zeros(dim);
    fill_uniform(rng, head.w.as_slice_mut().unwrap(), 1.0 / (dim as f64).sqrt());
    head
}

/// Deterministic initialization: every tensor is filled from one seeded
/// stream in the fixed visit order, weights uniform in ±1/√fan_in,
/// biases zero, layer-norm gains one.
pub fn init_model(cfg: &EncoderConfig, feat: bool, seed: u64) -> Result<RegressionModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = init_encoder(cfg, &mut rng);
    let head = init_head(cfg, feat, &mut rng);
    Ok(RegressionModel {
        cfg: *cfg,
        feat_enabled: feat,
        enc,
        head,
    })
}

/// Initializes a shared encoder plus one head per task id. Heads draw
/// from the RNG stream in sorted task order; with a single task the
/// parameter stream is bit-identical to `init_model`.
pub fn init_mtl(cfg: &EncoderConfig, feat: bool, tasks: &[String], seed: u64) -> Result<MultiTaskModel> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::invalid("multi-task model needs at least one task"));
    }
    let mut sorted: Vec<&String> = tasks.iter().collect();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != tasks.len() {
        return Err(Error::invalid("duplicate task id"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = init_encoder(cfg, &mut rng);
    let mut heads = BTreeMap::new();
    for task in sorted {
        heads.insert(task.clone(), init_head(cfg, feat, &mut rng));
    }
    Ok(MultiTaskModel {
        cfg: *cfg,
        feat_enabled: feat,
        enc,
        heads,
    })
}

/// Token embedding + learned position embedding, one row per input id.
pub fn embed(cfg: &EncoderConfig, enc: &EncoderParams, seq: &TokenSequence) -> Result<Array2<f64>> {
    if seq.len() > cfg.max_len {
        return Err(Error::invalid(format!(
            "sequence length {} exceeds encoder max_len {}",
            seq.len(),
            cfg.max_len
        )));
    }
    let mut emb = Array2::zeros((seq.len(), cfg.hidden));
    for (i, &id) in seq.ids.iter().enumerate() {
        if id >= cfg.vocab_size {
            return Err(Error::invalid(format!(
                "token id {id} out of range for vocab_size {}",
                cfg.vocab_size
            )));
        }
        let row = &enc.tok.row(id) + &enc.pos.row(i);
        emb.row_mut(i).assign(&row);
    }
    Ok(emb)
}

struct LayerCache {
    x: Array2<f64>,
    xhat1: Array2<f64>,
    inv1: Array1<f64>,
    out1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    h: Array2<f64>,
    xhat2: Array2<f64>,
    inv2: Array1<f64>,
    out2: Array2<f64>,
    a1: Array2<f64>,
    g: Array2<f64>,
}

/// Everything the backward pass needs, captured during one forward run.
pub struct ForwardCache {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    /// Embedding sum including any injected perturbation, before dropout.
    pub emb: Array2<f64>,
    emb_scale: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    pub states: Array2<f64>,
    pooled_scale: Option<Array1<f64>>,
    pub head_in: Array1<f64>,
    pub raw: f64,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let n = x.ncols() as f64;
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut inv = Array1::zeros(x.nrows());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv[i] = s;
        for (j, v) in row.iter().enumerate() {
            xhat[[i, j]] = (v - mean) * s;
        }
    }
    let out = &xhat * g + b;
    (out, xhat, inv)
}

/// dL/dx for layer norm given dL/dout, using the cached normalized
/// values; also accumulates gain/bias gradients.
fn layer_norm_backward(
    dout: &Array2<f64>,
    xhat: &Array2<f64>,
    inv: &Array1<f64>,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    let n = xhat.ncols() as f64;
    *dg += &(dout * xhat).sum_axis(Axis(0));
    *db += &dout.sum_axis(Axis(0));
    let dxhat = dout * g;
    let mut dx = Array2::zeros(xhat.raw_dim());
    for i in 0..xhat.nrows() {
        let dxh = dxhat.row(i);
        let xh = xhat.row(i);
        let sum_dxh = dxh.sum();
        let sum_dxh_xh = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
        let s = inv[i] / n;
        for j in 0..xhat.ncols() {
            dx[[i, j]] = s * (n * dxh[j] - sum_dxh - xh[j] * sum_dxh_xh);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_prime(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

fn softmax_masked_rows(scores: &mut Array2<f64>, mask: &[bool]) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        for (j, v) in row.iter_mut().enumerate() {
            if !mask[j] {
                *v = f64::NEG_INFINITY;
            }
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp(); // exp(-inf) = 0 for masked keys
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn run_layer(layer: &LayerParams, x: Array2<f64>, mask: &[bool], heads: usize) -> LayerCache {
    let hidden = x.ncols();
    let dk = hidden / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let (out1, xhat1, inv1) = layer_norm(&x, &layer.ln1_g, &layer.ln1_b);
    let q = out1.dot(&layer.wq) + &layer.bq;
    let k = out1.dot(&layer.wk) + &layer.bk;
    let v = out1.dot(&layer.wv) + &layer.bv;

    let mut probs = Vec::with_capacity(heads);
    let mut ctx = Array2::zeros(x.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t());
        scores *= scale;
        softmax_masked_rows(&mut scores, mask);
        let ch = scores.dot(&vh);
        ctx.slice_mut(cols).assign(&ch);
        probs.push(scores);
    }
    let attn = ctx.dot(&layer.wo) + &layer.bo;
    let h_res = &x + &attn;

    let (out2, xhat2, inv2) = layer_norm(&h_res, &layer.ln2_g, &layer.ln2_b);
    let a1 = out2.dot(&layer.w1) + &layer.b1;
    let g = a1.mapv(gelu);

    LayerCache {
        x,
        xhat1,
        inv1,
        out1,
        q,
        k,
        v,
        probs,
        ctx,
        h: h_res,
        xhat2,
        inv2,
        out2,
        a1,
        g,
        // y is the next layer's x; returned via states threading
        // (the caller passes it on), so it is not cached here.
    }
}

fn layer_output(cache: &LayerCache, layer: &LayerParams) -> Array2<f64> {
    let ff = cache.g.dot(&layer.w2) + &layer.b2;
    &cache.h + &ff
}

fn dropout_scale2(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    let mut m = Array2::zeros(shape);
    for v in m.iter_mut() {
        *v = if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) };
    }
    m
}

fn dropout_scale1(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Array1<f64> {
    let mut m = Array1::zeros(len);
    for v in m.iter_mut() {
        *v = if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) };
    }
    m
}

/// Full forward pass. `delta` is an optional perturbation added to the
/// embedding output (the adversarial injection site). `dropout_rng`
/// switches training mode on; with `cfg.dropout == 0` the result is
/// bit-identical to evaluation mode.
pub fn forward(
    cfg: &EncoderConfig,
    enc: &EncoderParams,
    head: &HeadParams,
    seq: &TokenSequence,
    delta: Option<&Array2<f64>>,
    feat_value: Option<f64>,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardCache> {
    let expected = cfg.hidden + usize::from(feat_value.is_some());
    if head.w.len() != expected {
        return Err(Error::invalid(format!(
            "head width {} does not match input width {expected}",
            head.w.len()
        )));
    }
    let mut emb = embed(cfg, enc, seq)?;
    if let Some(d) = delta {
        if d.dim() != emb.dim() {
            return Err(Error::invalid("perturbation shape does not match embedding"));
        }
        emb += d;
    }
    let mask = seq.token_mask();

    let apply_dropout = cfg.dropout > 0.0 && dropout_rng.is_some();
    let emb_scale = if apply_dropout {
        Some(dropout_scale2(dropout_rng.as_deref_mut().unwrap(), emb.dim(), cfg.dropout))
    } else {
        None
    };
    let mut x = match &emb_scale {
        Some(sc) => &emb * sc,
        None => emb.clone(),
    };

    let mut layers = Vec::with_capacity(cfg.layers);
    for layer in &enc.layers {
        let cache = run_layer(layer, x, &mask, cfg.heads);
        x = layer_output(&cache, layer);
        layers.push(cache);
    }
    let states = x;

    let pooled = states.row(0).to_owned();
    let pooled_scale = if apply_dropout {
        Some(dropout_scale1(dropout_rng.as_deref_mut().unwrap(), pooled.len(), cfg.dropout))
    } else {
        None
    };
    let pooled_dropped = match &pooled_scale {
        Some(sc) => &pooled * sc,
        None => pooled,
    };

    let mut head_in = pooled_dropped.to_vec();
    if let Some(f) = feat_value {
        head_in.push(f);
    }
    let head_in = Array1::from(head_in);
    let raw = head.w.dot(&head_in) + head.b;

    Ok(ForwardCache {
        ids: seq.ids.clone(),
        mask,
        emb,
        emb_scale,
        layers,
        states,
        pooled_scale,
        head_in,
        raw,
    })
}

/// Last-layer hidden states for an externally supplied embedding matrix;
/// padding positions are masked out of attention.
pub fn encode_states(
    cfg: &EncoderConfig,
    enc: &EncoderParams,
    emb: &Array2<f64>,
    mask: &[bool],
) -> Result<Array2<f64>> {
    if emb.ncols() != cfg.hidden {
        return Err(Error::invalid(format!(
            "embedding width {} does not match hidden size {}",
            emb.ncols(),
            cfg.hidden
        )));
    }
    let mut x = emb.clone();
    for layer in &enc.layers {
        let cache = run_layer(layer, x, mask, cfg.heads);
        x = layer_output(&cache, layer);
    }
    Ok(x)
}

/// Gradient holder mirroring one encoder + one head.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub enc: EncoderParams,
    pub head: HeadParams,
}

impl ModelGrads {
    pub fn zeros(cfg: &EncoderConfig, head_dim: usize) -> Self {
        ModelGrads {
            enc: EncoderParams::zeros(cfg),
            head: HeadParams::zeros(head_dim),
        }
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a [f64])>) {
        self.enc.visit(out);
        self.head.visit("head.", out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut [f64])>) {
        self.enc.visit_mut(out);
        self.head.visit_mut("head.", out);
    }
}

fn backward_layer(
    layer: &LayerParams,
    cache: &LayerCache,
    dy: &Array2<f64>,
    heads: usize,
    grads: &mut LayerParams,
) -> Array2<f64> {
    let hidden = cache.x.ncols();
    let dk = hidden / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    // y = h + ff(ln2(h)); ff = gelu(out2·w1 + b1)·w2 + b2
    let d_g = dy.dot(&layer.w2.t());
    grads.w2 += &cache.g.t().dot(dy);
    grads.b2 += &dy.sum_axis(Axis(0));
    let d_a1 = &d_g * &cache.a1.mapv(gelu_prime);
    grads.w1 += &cache.out2.t().dot(&d_a1);
    grads.b1 += &d_a1.sum_axis(Axis(0));
    let d_out2 = d_a1.dot(&layer.w1.t());
    let d_h_ln = layer_norm_backward(
        &d_out2,
        &cache.xhat2,
        &cache.inv2,
        &layer.ln2_g,
        &mut grads.ln2_g,
        &mut grads.ln2_b,
    );
    let dh = dy + &d_h_ln;

    // h = x + ctx·wo + bo
    let d_ctx = dh.dot(&layer.wo.t());
    grads.wo += &cache.ctx.t().dot(&dh);
    grads.bo += &dh.sum_axis(Axis(0));

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dkm = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let p = &cache.probs[h];
        let d_ch = d_ctx.slice(cols);
        let d_p = d_ch.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&d_ch));
        // softmax backward per row: ds = p ⊙ (dp − Σ dp⊙p)
        let mut ds = Array2::zeros(p.raw_dim());
        for i in 0..p.nrows() {
            let dot = d_p
                .row(i)
                .iter()
                .zip(p.row(i).iter())
                .map(|(a, b)| a * b)
                .sum::<f64>();
            for j in 0..p.ncols() {
                ds[[i, j]] = p[[i, j]] * (d_p[[i, j]] - dot);
            }
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dkm.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }

    grads.wq += &cache.out1.t().dot(&dq);
    grads.bq += &dq.sum_axis(Axis(0));
    grads.wk += &cache.out1.t().dot(&dkm);
    grads.bk += &dkm.sum_axis(Axis(0));
    grads.wv += &cache.out1.t().dot(&dv);
    grads.bv += &dv.sum_axis(Axis(0));

    let d_out1 = dq.dot(&layer.wq.t()) + dkm.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
    let d_x_ln = layer_norm_backward(
        &d_out1,
        &cache.xhat1,
        &cache.inv1,
        &layer.ln1_g,
        &mut grads.ln1_g,
        &mut grads.ln1_b,
    );
    &dh + &d_x_ln
}

/// Backpropagates `d_raw` (dL/d raw score) through head and encoder,
/// accumulating parameter gradients into `grads`. Returns dL/d emb —
/// the gradient at the perturbation injection site.
pub fn backward(
    cfg: &EncoderConfig,
    enc: &EncoderParams,
    head: &HeadParams,
    cache: &ForwardCache,
    d_raw: f64,
    grads: &mut ModelGrads,
) -> Array2<f64> {
    grads.head.w.scaled_add(d_raw, &cache.head_in);
    grads.head.b += d_raw;

    let hidden = cfg.hidden;
    let d_head_in = &head.w * d_raw;
    let mut d_pooled = d_head_in.slice(s![..hidden]).to_owned();
    if let Some(sc) = &cache.pooled_scale {
        d_pooled *= sc;
    }

    let mut d_states: Array2<f64> = Array2::zeros(cache.states.raw_dim());
    d_states.row_mut(0).assign(&d_pooled);

    let mut dy = d_states;
    for li in (0..enc.layers.len()).rev() {
        dy = backward_layer(
            &enc.layers[li],
            &cache.layers[li],
            &dy,
            cfg.heads,
            &mut grads.enc.layers[li],
        );
    }

    let mut d_emb = dy;
    if let Some(sc) = &cache.emb_scale {
        d_emb *= sc;
    }
    for (i, &id) in cache.ids.iter().enumerate() {
        let row = d_emb.row(i).to_owned();
        grads.enc.tok.row_mut(id).scaled_add(1.0, &row);
        grads.enc.pos.row_mut(i).scaled_add(1.0, &row);
    }
    d_emb
}

impl RegressionModel {
    /// Clamped [0,1] prediction in evaluation mode (no dropout).
    pub fn predict(&self, seq: &TokenSequence, feat_value: Option<f64>) -> Result<f64> {
        Ok(self.raw_score(seq, feat_value)?.clamp(0.0, 1.0))
    }

    /// Unclamped head output; training losses use this.
    pub fn raw_score(&self, seq: &TokenSequence, feat_value: Option<f64>) -> Result<f64> {
        self.check_feat(feat_value)?;
        let cache = forward(&self.cfg, &self.enc, &self.head, seq, None, feat_value, None)?;
        Ok(cache.raw)
    }

    pub fn check_feat(&self, feat_value: Option<f64>) -> Result<()> {
        match (self.feat_enabled, feat_value) {
            (true, None) => Err(Error::invalid(
                "model was trained with the frequency feature but none was supplied",
            )),
            (false, Some(_)) => Err(Error::invalid(
                "frequency feature supplied to a model trained without one",
            )),
            (true, Some(f)) if !(0.0..=1.0).contains(&f) || !f.is_finite() => {
                Err(Error::invalid(format!("feature value {f} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn encode_states(&self, emb: &Array2<f64>, mask: &[bool]) -> Result<Array2<f64>> {
        encode_states(&self.cfg, &self.enc, emb, mask)
    }

    pub fn head_dim(&self) -> usize {
        self.cfg.hidden + usize::from(self.feat_enabled)
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a [f64])>) {
        self.enc.visit(out);
        self.head.visit("head.", out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut [f64])>) {
        self.enc.visit_mut(out);
        self.head.visit_mut("head.", out);
    }

    /// SHA-256 over every parameter tensor (name + little-endian bytes)
    /// in the fixed visit order.
    pub fn digest(&self) -> String {
        let mut parts = Vec::new();
        self.visit(&mut parts);
        digest_params(&parts)
    }
}

impl MultiTaskModel {
    pub fn forward_task(&self, task: &str, seq: &TokenSequence, feat_value: Option<f64>) -> Result<f64> {
        let head = self.head(task)?;
        match (self.feat_enabled, feat_value) {
            (true, None) | (false, Some(_)) => {
                return Err(Error::invalid("feature flag/argument mismatch"))
            }
            _ => {}
        }
        let cache = forward(&self.cfg, &self.enc, head, seq, None, feat_value, None)?;
        Ok(cache.raw.clamp(0.0, 1.0))
    }

    pub fn head(&self, task: &str) -> Result<&HeadParams> {
        self.heads
            .get(task)
            .ok_or_else(|| Error::invalid(format!("unknown task id '{task}'")))
    }

    /// Extracts one task's view as a standalone regression model.
    pub fn task_model(&self, task: &str) -> Result<RegressionModel> {
        let head = self.head(task)?.clone();
        Ok(RegressionModel {
            cfg: self.cfg,
            feat_enabled: self.feat_enabled,
            enc: self.enc.clone(),
            head,
        })
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a [f64])>) {
        self.enc.visit(out);
        for (task, head) in &self.heads {
            head.visit(&format!("head.{task}."), out);
        }
    }

    pub fn digest(&self) -> String {
        let mut parts = Vec::new();
        self.visit(&mut parts);
        digest_params(&parts)
    }

    pub fn encoder_digest(&self) -> String {
        let mut parts = Vec::new();
        self.enc.visit(&mut parts);
        digest_params(&parts)
    }

    pub fn head_digest(&self, task: &str) -> Result<String> {
        let mut parts = Vec::new();
        self.head(task)?.visit("head.", &mut parts);
        Ok(digest_params(&parts))
    }
}

pub fn digest_params(parts: &[(String, &[f64])]) -> String {
    let mut hasher = Sha256::new();
    for (name, data) in parts {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        for v in *data {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Self-contained trained artifact: model parameters, the vocabulary
/// they were trained with, and the fitted frequency-feature context when
/// the feature is enabled. JSON round-trips f64 values bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub subtask: Subtask,
    pub seed: u64,
    pub model: RegressionModel,
    pub vocab: Vocabulary,
    pub feat: Option<FeatContext>,
}

impl Checkpoint {
    pub fn new(
        subtask: Subtask,
        seed: u64,
        model: RegressionModel,
        vocab: Vocabulary,
        feat: Option<FeatContext>,
    ) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            subtask,
            seed,
            model,
            vocab,
            feat,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_vec(self)
            .map_err(|e| Error::invalid(format!("checkpoint serialization failed: {e}")))?;
        crate::pipeline::write_atomic(path.as_ref(), &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("not a checkpoint file: format '{}'", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {}", self.version)));
        }
        if self.vocab.len() != self.model.cfg.vocab_size {
            return Err(Error::invalid(format!(
                "vocabulary size {} does not match model vocab_size {}",
                self.vocab.len(),
                self.model.cfg.vocab_size
            )));
        }
        if self.model.feat_enabled && self.feat.is_none() {
            return Err(Error::invalid(
                "feature-enabled checkpoint is missing its frequency context",
            ));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        self.model.digest()
    }

    /// Predicts every instance of a dataset (clamped scores).
    pub fn predict_dataset(&self, data: &Dataset) -> Result<PredictionSet> {
        let mut preds = PredictionSet::new();
        for inst in &data.instances {
            let seq = crate::encoding::encode_instance(inst, &self.vocab, self.model.cfg.max_len);
            let feat_value = match (&self.feat, self.model.feat_enabled) {
                (Some(ctx), true) => Some(ctx.feature(&inst.target)),
                _ => None,
            };
            let score = self.model.predict(&seq, feat_value)?;
            preds.insert(&inst.id, score)?;
        }
        Ok(preds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, Instance};
    use crate::encoding::{build_vocab, encode_single_word};

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            heads: 2,
            hidden: 8,
            feedforward: 12,
            vocab_size: 12,
            max_len: 10,
            dropout: 0.0,
        }
    }

    fn seq(ids: &[usize]) -> TokenSequence {
        TokenSequence { ids: ids.to_vec() }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = EncoderConfig::toy(16, 32);
        let a = init_model(&cfg, false, 7).unwrap();
        let b = init_model(&cfg, false, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let c = init_model(&cfg, false, 8).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn feat_head_has_extra_entry() {
        let cfg = EncoderConfig::toy(16, 32);
        let m = init_model(&cfg, true, 7).unwrap();
        assert_eq!(m.head.w.len(), 33);
        let m2 = init_model(&cfg, false, 7).unwrap();
        assert_eq!(m2.head.w.len(), 32);
    }

    #[test]
    fn invalid_head_count_rejected() {
        let mut cfg = EncoderConfig::toy(16, 32);
        cfg.heads = 3;
        assert!(init_model(&cfg, false, 1).is_err());
    }

    #[test]
    fn embed_rejects_out_of_range_id() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, false, 1).unwrap();
        assert!(embed(&cfg, &m.enc, &seq(&[1, 99, 2])).is_err());
    }

    #[test]
    fn embed_is_tok_plus_pos() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, false, 3).unwrap();
        let e = embed(&cfg, &m.enc, &seq(&[0, 0, 0])).unwrap();
        for i in 0..3 {
            let expect = &m.enc.tok.row(0) + &m.enc.pos.row(i);
            assert_eq!(e.row(i), expect);
        }
    }

    #[test]
    fn embed_differs_only_in_changed_row() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, false, 3).unwrap();
        let a = embed(&cfg, &m.enc, &seq(&[1, 4, 5, 2])).unwrap();
        let b = embed(&cfg, &m.enc, &seq(&[1, 4, 6, 2])).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(2), b.row(2));
        assert_eq!(a.row(3), b.row(3));
    }

    #[test]
    fn encode_states_shape_and_identity_case() {
        let cfg = EncoderConfig::toy(16, 32);
        let m = init_model(&cfg, false, 5).unwrap();
        let s = seq(&[1, 4, 5, 2]);
        let e = embed(&cfg, &m.enc, &s).unwrap();
        let states = m.encode_states(&e, &s.token_mask()).unwrap();
        assert_eq!(states.dim(), (4, 32));

        let mut id_cfg = cfg;
        id_cfg.layers = 0;
        let id_model = init_model(&id_cfg, false, 5).unwrap();
        let e2 = embed(&id_cfg, &id_model.enc, &s).unwrap();
        let states2 = id_model.encode_states(&e2, &s.token_mask()).unwrap();
        assert_eq!(states2, e2);
    }

    #[test]
    fn padding_does_not_leak_into_real_positions() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, false, 11).unwrap();
        let short = seq(&[1, 4, 5, 2]);
        let long = short.padded_to(9);
        let e_short = embed(&cfg, &m.enc, &short).unwrap();
        let e_long = embed(&cfg, &m.enc, &long).unwrap();
        let s_short = m.encode_states(&e_short, &short.token_mask()).unwrap();
        let s_long = m.encode_states(&e_long, &long.token_mask()).unwrap();
        for i in 0..short.len() {
            for j in 0..cfg.hidden {
                assert!(
                    (s_short[[i, j]] - s_long[[i, j]]).abs() <= 1e-6,
                    "row {i} col {j} drifted"
                );
            }
        }
    }

    #[test]
    fn predict_invariant_to_trailing_padding() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, false, 13).unwrap();
        let short = seq(&[1, 4, 5, 6, 2, 4, 2]);
        let long = short.padded_to(10);
        let a = m.predict(&short, None).unwrap();
        let b = m.predict(&long, None).unwrap();
        assert!((a - b).abs() <= 1e-6);
    }

    #[test]
    fn constant_head_gives_constant_prediction() {
        let cfg = tiny_cfg();
        let mut m = init_model(&cfg, false, 2).unwrap();
        m.head.w.fill(0.0);
        m.head.b = 0.3;
        for ids in [&[1usize, 4, 2][..], &[1, 5, 6, 7, 2]] {
            assert_eq!(m.predict(&seq(ids), None).unwrap(), 0.3);
        }
        m.head.b = 1.7;
        assert_eq!(m.predict(&seq(&[1, 4, 2]), None).unwrap(), 1.0);
        m.head.b = -0.2;
        assert_eq!(m.predict(&seq(&[1, 4, 2]), None).unwrap(), 0.0);
    }

    #[test]
    fn feat_value_shifts_output_by_feature_weight() {
        let cfg = tiny_cfg();
        let mut m = init_model(&cfg, true, 2).unwrap();
        // keep raw outputs inside (0,1) so clamping is inactive
        m.head.w.fill(0.0);
        m.head.w[cfg.hidden] = 0.25;
        m.head.b = 0.4;
        let s = seq(&[1, 4, 2]);
        let lo = m.predict(&s, Some(0.0)).unwrap();
        let hi = m.predict(&s, Some(1.0)).unwrap();
        assert!((hi - lo - 0.25).abs() < 1e-12);
    }

    #[test]
    fn feat_flag_mismatch_errors() {
        let cfg = tiny_cfg();
        let feat_model = init_model(&cfg, true, 2).unwrap();
        let base_model = init_model(&cfg, false, 2).unwrap();
        let s = seq(&[1, 4, 2]);
        assert!(feat_model.predict(&s, None).is_err());
        assert!(base_model.predict(&s, Some(0.5)).is_err());
        assert!(feat_model.predict(&s, Some(1.5)).is_err());
    }

    #[test]
    fn mtl_single_task_equals_regression_model() {
        let cfg = tiny_cfg();
        let mtm = init_mtl(&cfg, false, &["single_word".into()], 9).unwrap();
        let rm = init_model(&cfg, false, 9).unwrap();
        // identical parameter stream: encoder then one head
        assert_eq!(mtm.enc, rm.enc);
        assert_eq!(mtm.heads["single_word"], rm.head);
        let s = seq(&[1, 4, 5, 2]);
        assert_eq!(
            mtm.forward_task("single_word", &s, None).unwrap(),
            rm.predict(&s, None).unwrap()
        );
    }

    #[test]
    fn mtl_identical_heads_agree_and_unknown_task_errors() {
        let cfg = tiny_cfg();
        let mut mtm = init_mtl(&cfg, false, &["a".into(), "b".into()], 9).unwrap();
        let shared = mtm.heads["a"].clone();
        mtm.heads.insert("b".into(), shared);
        let s = seq(&[1, 5, 2]);
        assert_eq!(
            mtm.forward_task("a", &s, None).unwrap(),
            mtm.forward_task("b", &s, None).unwrap()
        );
        assert!(mtm.forward_task("c", &s, None).is_err());
    }

    #[test]
    fn shapes_hold_for_random_configs() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let heads = rng.gen_range(1..4usize);
            let cfg = EncoderConfig {
                layers: rng.gen_range(0..3),
                heads,
                hidden: heads * rng.gen_range(2..6usize),
                feedforward: rng.gen_range(4..10),
                vocab_size: 10,
                max_len: 12,
                dropout: 0.0,
            };
            let m = init_model(&cfg, false, 1).unwrap();
            let len = rng.gen_range(2..cfg.max_len);
            let mut ids = vec![1usize];
            ids.extend((1..len).map(|_| rng.gen_range(2..cfg.vocab_size)));
            let s = seq(&ids);
            let e = embed(&cfg, &m.enc, &s).unwrap();
            assert_eq!(e.dim(), (len, cfg.hidden));
            let states = m.encode_states(&e, &s.token_mask()).unwrap();
            assert_eq!(states.dim(), (len, cfg.hidden));
            let cache =
                forward(&cfg, &m.enc, &m.head, &s, None, None, None).unwrap();
            assert!(cache.raw.is_finite());
        }
    }

    /// Central finite differences over every parameter for a squared
    /// error loss; rel. error floor guards near-zero gradients.
    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut model = init_model(&cfg, true, 17).unwrap();
        let s = seq(&[1, 4, 5, 6, 2, 7, 2]);
        let feat = Some(0.6);
        let gold = 0.9;

        let cache = forward(&cfg, &model.enc, &model.head, &s, None, feat, None).unwrap();
        let mut grads = ModelGrads::zeros(&cfg, model.head_dim());
        backward(&cfg, &model.enc, &model.head, &cache, 2.0 * (cache.raw - gold), &mut grads);

        let mut flat_grads = Vec::new();
        grads.visit(&mut flat_grads);
        let analytic: Vec<(String, Vec<f64>)> = flat_grads
            .iter()
            .map(|(n, d)| (n.clone(), d.to_vec()))
            .collect();

        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for (tensor_idx, (name, values)) in analytic.iter().enumerate() {
            for j in 0..values.len() {
                let eval = |m: &RegressionModel| {
                    let c = forward(&m.cfg, &m.enc, &m.head, &s, None, feat, None).unwrap();
                    (c.raw - gold) * (c.raw - gold)
                };
                let orig = {
                    let mut parts = Vec::new();
                    model.visit_mut(&mut parts);
                    let v = parts[tensor_idx].1[j];
                    parts[tensor_idx].1[j] = v + h;
                    v
                };
                let up = eval(&model);
                {
                    let mut parts = Vec::new();
                    model.visit_mut(&mut parts);
                    parts[tensor_idx].1[j] = orig - h;
                }
                let down = eval(&model);
                {
                    let mut parts = Vec::new();
                    model.visit_mut(&mut parts);
                    parts[tensor_idx].1[j] = orig;
                }
                let numeric = (up - down) / (2.0 * h);
                let a = values[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    rel <= 1e-4,
                    "{name}[{j}]: analytic {a} vs numeric {numeric} (rel {rel})"
                );
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel <= 1e-4);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let rows = [("the financial world reacted", "financial world")];
        let instances: Vec<Instance> = rows
            .iter()
            .map(|(s, t)| Instance {
                id: "x1".into(),
                subtask: Subtask::Mwe,
                domain: Domain::Europarl,
                sentence: s.to_string(),
                target: t.to_string(),
                gold: Some(0.5),
            })
            .collect();
        let data = Dataset::new(Subtask::Mwe, instances).unwrap();
        let vocab = build_vocab(&data, 1).unwrap();
        let cfg = EncoderConfig::toy(vocab.len(), 16);
        let model = init_model(&cfg, false, 42).unwrap();
        let ckpt = Checkpoint::new(Subtask::Mwe, 42, model, vocab, None);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, loaded);
        assert_eq!(ckpt.digest(), loaded.digest());
    }

    #[test]
    fn checkpoint_predicts_dataset() {
        let inst = Instance {
            id: "a".into(),
            subtask: Subtask::SingleWord,
            domain: Domain::Bible,
            sentence: "this was the length".into(),
            target: "length".into(),
            gold: Some(0.2),
        };
        let data = Dataset::new(Subtask::SingleWord, vec![inst]).unwrap();
        let vocab = build_vocab(&data, 1).unwrap();
        let cfg = EncoderConfig::toy(vocab.len(), 16);
        let model = init_model(&cfg, false, 1).unwrap();
        let expected = {
            let s = encode_single_word(&data.instances[0], &vocab, 16);
            model.predict(&s, None).unwrap()
        };
        let ckpt = Checkpoint::new(Subtask::SingleWord, 1, model, vocab, None);
        let preds = ckpt.predict_dataset(&data).unwrap();
        assert_eq!(preds.get("a"), Some(expected));
    }
}
