//! Multi-head attention pooling head with a classification layer.
//!
//! One learnable probe token attends over the example's N tokens (h heads,
//! scaled dot product, softmax over tokens), followed by an output
//! projection, a pre-norm MLP block with a residual connection, and a linear
//! classifier:
//!
//! ```text
//! attn_out = W_o (sum_n softmax_n(q . k_n / sqrt(d)) v_n) + b_o
//! pooled   = attn_out + W2 gelu(W1 LayerNorm(attn_out) + b1) + b2
//! logits   = W_cls pooled + b_cls
//! ```
//!
//! Parameters live in one flat f32 buffer with a named-tensor layout, which
//! keeps the optimizer, gradient clipping, finite-difference checks, and the
//! checkpoint format uniform. The backward pass is written by hand and is
//! checked against central finite differences in the tests.

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureTensor;
use crate::rng::RngKey;

pub const LN_EPSILON: f32 = 1e-6;

/// Head count convention when none is given: C/64, at least 1.
pub fn default_head_count(channels: usize) -> usize {
    (channels / 64).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapHeadShape {
    pub channels: usize,
    pub classes: usize,
    pub heads: usize,
}

/// Offsets of each named tensor inside the flat parameter buffer.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    entries: Vec<(&'static str, Range<usize>, Vec<usize>)>,
    total: usize,
}

impl ParamLayout {
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[(&'static str, Range<usize>, Vec<usize>)] {
        &self.entries
    }

    pub fn range(&self, name: &str) -> Range<usize> {
        self.entries
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, r, _)| r.clone())
            .unwrap_or_else(|| panic!("unknown tensor {name}"))
    }

    /// Name of the tensor owning a flat index.
    pub fn owner(&self, index: usize) -> &'static str {
        self.entries
            .iter()
            .find(|(_, r, _)| r.contains(&index))
            .map(|(n, _, _)| *n)
            .expect("index inside layout")
    }
}

impl MapHeadShape {
    pub fn new(channels: usize, classes: usize, heads: usize) -> Result<Self> {
        if channels == 0 || classes == 0 || heads == 0 {
            return Err(Error::InvalidConfig(
                "channels, classes, heads must be positive".into(),
            ));
        }
        if channels % heads != 0 {
            return Err(Error::HeadCount {
                h: heads,
                c: channels,
            });
        }
        Ok(MapHeadShape {
            channels,
            classes,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn layout(&self) -> ParamLayout {
        let c = self.channels;
        let s = self.classes;
        let hidden = 4 * c;
        let mut entries = Vec::new();
        let mut cursor = 0usize;
        let mut push = |name: &'static str, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            let range = cursor..cursor + len;
            cursor += len;
            entries.push((name, range, shape));
        };
        push("probe", vec![c]);
        push("w_q", vec![c, c]);
        push("b_q", vec![c]);
        push("w_k", vec![c, c]);
        push("b_k", vec![c]);
        push("w_v", vec![c, c]);
        push("b_v", vec![c]);
        push("w_o", vec![c, c]);
        push("b_o", vec![c]);
        push("ln_scale", vec![c]);
        push("ln_offset", vec![c]);
        push("w_mlp1", vec![hidden, c]);
        push("b_mlp1", vec![hidden]);
        push("w_mlp2", vec![c, hidden]);
        push("b_mlp2", vec![c]);
        push("w_cls", vec![s, c]);
        push("b_cls", vec![s]);
        let total = cursor;
        ParamLayout { entries, total }
    }

    /// Flat mask of parameters that receive decoupled weight decay: biases
    /// and the layer-norm offset are excluded.
    pub fn decay_mask(&self) -> Vec<bool> {
        let layout = self.layout();
        let mut mask = vec![true; layout.total()];
        for name in ["b_q", "b_k", "b_v", "b_o", "ln_offset", "b_mlp1", "b_mlp2", "b_cls"] {
            for i in layout.range(name) {
                mask[i] = false;
            }
        }
        mask
    }
}

/// Precomputed tensor ranges for the hot path; one lookup table per call
/// instead of a name search per access.
#[derive(Debug, Clone)]
struct Offsets {
    probe: Range<usize>,
    w_q: Range<usize>,
    b_q: Range<usize>,
    w_k: Range<usize>,
    b_k: Range<usize>,
    w_v: Range<usize>,
    b_v: Range<usize>,
    w_o: Range<usize>,
    b_o: Range<usize>,
    ln_scale: Range<usize>,
    ln_offset: Range<usize>,
    w_mlp1: Range<usize>,
    b_mlp1: Range<usize>,
    w_mlp2: Range<usize>,
    b_mlp2: Range<usize>,
    w_cls: Range<usize>,
    b_cls: Range<usize>,
}

impl MapHeadShape {
    fn offsets(&self) -> Offsets {
        let layout = self.layout();
        Offsets {
            probe: layout.range("probe"),
            w_q: layout.range("w_q"),
            b_q: layout.range("b_q"),
            w_k: layout.range("w_k"),
            b_k: layout.range("b_k"),
            w_v: layout.range("w_v"),
            b_v: layout.range("b_v"),
            w_o: layout.range("w_o"),
            b_o: layout.range("b_o"),
            ln_scale: layout.range("ln_scale"),
            ln_offset: layout.range("ln_offset"),
            w_mlp1: layout.range("w_mlp1"),
            b_mlp1: layout.range("b_mlp1"),
            w_mlp2: layout.range("w_mlp2"),
            b_mlp2: layout.range("b_mlp2"),
            w_cls: layout.range("w_cls"),
            b_cls: layout.range("b_cls"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapHeadParams {
    pub shape: MapHeadShape,
    pub data: Vec<f32>,
}

impl MapHeadParams {
    pub fn tensor(&self, name: &str) -> &[f32] {
        &self.data[self.shape.layout().range(name)]
    }
}

/// Xavier-uniform initialization for the probe and all attention/MLP
/// weights; layer-norm scale 1 and offset 0; classifier weights and bias
/// exactly zero, so a fresh head outputs zero logits for any input.
pub fn init(channels: usize, classes: usize, heads: usize, seed: u64) -> Result<MapHeadParams> {
    let shape = MapHeadShape::new(channels, classes, heads)?;
    let layout = shape.layout();
    let mut data = vec![0.0f32; layout.total()];
    let key = RngKey::new(seed).child_str("map_head_init");

    let xavier = |data: &mut [f32], range: Range<usize>, fan_in: usize, fan_out: usize, name: &str| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = key.child_str(name).stream();
        for v in &mut data[range] {
            *v = rng.gen_range(-limit..limit) as f32;
        }
    };

    let c = channels;
    // the probe acts as a 1 x C token
    xavier(&mut data, layout.range("probe"), 1, c, "probe");
    for name in ["w_q", "w_k", "w_v", "w_o"] {
        xavier(&mut data, layout.range(name), c, c, name);
    }
    xavier(&mut data, layout.range("w_mlp1"), c, 4 * c, "w_mlp1");
    xavier(&mut data, layout.range("w_mlp2"), 4 * c, c, "w_mlp2");
    for i in layout.range("ln_scale") {
        data[i] = 1.0;
    }
    // biases, ln_offset, classifier stay zero
    Ok(MapHeadParams { shape, data })
}

/// Grows or shrinks without zero-filling retained prefixes; every buffer
/// this touches is fully overwritten by its producer.
fn ensure_len(v: &mut Vec<f32>, len: usize) {
    if v.len() != len {
        v.clear();
        v.resize(len, 0.0);
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f32, 0.0f32, 0.0f32, 0.0f32);
    let mut quads_a = a.chunks_exact(4);
    let mut quads_b = b.chunks_exact(4);
    for (qa, qb) in (&mut quads_a).zip(&mut quads_b) {
        s0 += qa[0] * qb[0];
        s1 += qa[1] * qb[1];
        s2 += qa[2] * qb[2];
        s3 += qa[3] * qb[3];
    }
    let mut acc = (s0 + s1) + (s2 + s3);
    for (x, y) in quads_a.remainder().iter().zip(quads_b.remainder()) {
        acc += x * y;
    }
    acc
}

/// acc += scale * x
#[inline]
fn axpy(acc: &mut [f32], scale: f32, x: &[f32]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

/// y = W x + b with W stored row-major [rows][cols].
fn affine(w: &[f32], b: &[f32], x: &[f32], y: &mut [f32]) {
    let cols = x.len();
    for ((row, yo), &bias) in w.chunks_exact(cols).zip(y.iter_mut()).zip(b) {
        *yo = bias + dot(row, x);
    }
}

/// Mutable views of each tensor's gradient block; order matches the layout.
struct GradSlices<'a> {
    probe: &'a mut [f32],
    w_q: &'a mut [f32],
    b_q: &'a mut [f32],
    w_k: &'a mut [f32],
    b_k: &'a mut [f32],
    w_v: &'a mut [f32],
    b_v: &'a mut [f32],
    w_o: &'a mut [f32],
    b_o: &'a mut [f32],
    ln_scale: &'a mut [f32],
    ln_offset: &'a mut [f32],
    w_mlp1: &'a mut [f32],
    b_mlp1: &'a mut [f32],
    w_mlp2: &'a mut [f32],
    b_mlp2: &'a mut [f32],
    w_cls: &'a mut [f32],
    b_cls: &'a mut [f32],
}

fn split_grads<'a>(shape: &MapHeadShape, data: &'a mut [f32]) -> GradSlices<'a> {
    let c = shape.channels;
    let classes = shape.classes;
    let hidden = 4 * c;
    let (probe, rest) = data.split_at_mut(c);
    let (w_q, rest) = rest.split_at_mut(c * c);
    let (b_q, rest) = rest.split_at_mut(c);
    let (w_k, rest) = rest.split_at_mut(c * c);
    let (b_k, rest) = rest.split_at_mut(c);
    let (w_v, rest) = rest.split_at_mut(c * c);
    let (b_v, rest) = rest.split_at_mut(c);
    let (w_o, rest) = rest.split_at_mut(c * c);
    let (b_o, rest) = rest.split_at_mut(c);
    let (ln_scale, rest) = rest.split_at_mut(c);
    let (ln_offset, rest) = rest.split_at_mut(c);
    let (w_mlp1, rest) = rest.split_at_mut(hidden * c);
    let (b_mlp1, rest) = rest.split_at_mut(hidden);
    let (w_mlp2, rest) = rest.split_at_mut(c * hidden);
    let (b_mlp2, rest) = rest.split_at_mut(c);
    let (w_cls, rest) = rest.split_at_mut(classes * c);
    let (b_cls, _) = rest.split_at_mut(classes);
    GradSlices {
        probe,
        w_q,
        b_q,
        w_k,
        b_k,
        w_v,
        b_v,
        w_o,
        b_o,
        ln_scale,
        ln_offset,
        w_mlp1,
        b_mlp1,
        w_mlp2,
        b_mlp2,
        w_cls,
        b_cls,
    }
}

/// Polynomial expf (Cephes-style range reduction, degree-6 tail), accurate
/// to about 1e-7 relative. Training spends most of its time in
/// activations; libm calls here dominate the step cost otherwise.
#[inline]
fn fast_exp(x: f32) -> f32 {
    const LOG2_E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_375;
    const LN2_LO: f32 = -2.121_944_4e-4;
    let x = x.clamp(-87.3, 88.7);
    let k = (x * LOG2_E).round();
    let g = (x - k * LN2_HI) - k * LN2_LO;
    let p = 1.0
        + g * (1.0
            + g * (0.5
                + g * (1.0 / 6.0 + g * (1.0 / 24.0 + g * (1.0 / 120.0 + g * (1.0 / 720.0))))));
    let scale = f32::from_bits((((k as i32) + 127) as u32) << 23);
    scale * p
}

#[inline]
fn fast_tanh(x: f32) -> f32 {
    let e = fast_exp(2.0 * x);
    (e - 1.0) / (e + 1.0)
}

/// tanh-form GELU.
#[inline]
fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + fast_tanh(u))
}

#[inline]
fn gelu_derivative(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    let t = fast_tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Per-example intermediate state kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ExampleTrace {
    pub keys: Vec<f32>,      // N x C
    pub values: Vec<f32>,    // N x C
    pub query: Vec<f32>,     // C
    pub attn: Vec<f32>,      // h x N
    pub mid: Vec<f32>,       // C, concatenated head outputs
    pub attn_out: Vec<f32>,  // C
    pub ln_x_hat: Vec<f32>,  // C
    pub ln_inv_std: f32,
    pub mlp_pre: Vec<f32>,   // 4C, pre-activation
    pub mlp_act: Vec<f32>,   // 4C, post-gelu
    pub pooled: Vec<f32>,    // C
    pub logits: Vec<f32>,    // S
    scores: Vec<f32>,        // N scratch, per head
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub pooled: Vec<Vec<f32>>,
    pub logits: Vec<Vec<f32>>,
    pub traces: Vec<ExampleTrace>,
}

fn forward_example_into(
    params: &MapHeadParams,
    offsets: &Offsets,
    tokens: &FeatureTensor,
    trace: &mut ExampleTrace,
) -> Result<()> {
    let shape = params.shape;
    let c = shape.channels;
    if tokens.channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "head expects {c} channels, example has {}",
            tokens.channels()
        )));
    }
    let n = tokens.tokens();
    let h = shape.heads;
    let d = shape.head_dim();
    let inv_sqrt_d = 1.0 / (d as f32).sqrt();
    let tensor = |r: &Range<usize>| &params.data[r.clone()];

    ensure_len(&mut trace.keys, n * c);
    ensure_len(&mut trace.values, n * c);
    ensure_len(&mut trace.query, c);
    ensure_len(&mut trace.attn, h * n);
    ensure_len(&mut trace.mid, c);
    ensure_len(&mut trace.attn_out, c);
    ensure_len(&mut trace.ln_x_hat, c);
    trace.ln_inv_std = 0.0;
    ensure_len(&mut trace.mlp_pre, 4 * c);
    ensure_len(&mut trace.mlp_act, 4 * c);
    ensure_len(&mut trace.pooled, c);
    ensure_len(&mut trace.logits, shape.classes);

    affine(tensor(&offsets.w_q), tensor(&offsets.b_q), tensor(&offsets.probe), &mut trace.query);
    for token in 0..n {
        let x = tokens.token(token);
        let keys = &mut trace.keys[token * c..(token + 1) * c];
        affine(tensor(&offsets.w_k), tensor(&offsets.b_k), x, keys);
        let values = &mut trace.values[token * c..(token + 1) * c];
        affine(tensor(&offsets.w_v), tensor(&offsets.b_v), x, values);
    }

    // scaled dot-product attention, softmax over tokens per head
    ensure_len(&mut trace.scores, n);
    for head in 0..h {
        let lanes = head * d..(head + 1) * d;
        let q = &trace.query[lanes.clone()];
        for (token, score) in trace.scores.iter_mut().enumerate() {
            let base = token * c + lanes.start;
            *score = dot(q, &trace.keys[base..base + d]) * inv_sqrt_d;
        }
        let max_score = trace.scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f32;
        let attn = &mut trace.attn[head * n..(head + 1) * n];
        for (a, &score) in attn.iter_mut().zip(&trace.scores) {
            let e = fast_exp(score - max_score);
            *a = e;
            denom += e;
        }
        for a in attn.iter_mut() {
            *a /= denom;
        }
        let attn = &trace.attn[head * n..(head + 1) * n];
        let mid = &mut trace.mid[lanes.clone()];
        mid.fill(0.0);
        for (token, &a) in attn.iter().enumerate() {
            let base = token * c + lanes.start;
            axpy(mid, a, &trace.values[base..base + d]);
        }
    }

    affine(tensor(&offsets.w_o), tensor(&offsets.b_o), &trace.mid, &mut trace.attn_out);

    // pre-norm MLP block with residual
    let mean = trace.attn_out.iter().sum::<f32>() / c as f32;
    let var = trace
        .attn_out
        .iter()
        .map(|&x| (x - mean) * (x - mean))
        .sum::<f32>()
        / c as f32;
    trace.ln_inv_std = 1.0 / (var + LN_EPSILON).sqrt();
    let (scale, offset) = (tensor(&offsets.ln_scale), tensor(&offsets.ln_offset));
    let mut ln_out = vec![0.0f32; c];
    for i in 0..c {
        trace.ln_x_hat[i] = (trace.attn_out[i] - mean) * trace.ln_inv_std;
        ln_out[i] = scale[i] * trace.ln_x_hat[i] + offset[i];
    }
    affine(tensor(&offsets.w_mlp1), tensor(&offsets.b_mlp1), &ln_out, &mut trace.mlp_pre);
    for i in 0..4 * c {
        trace.mlp_act[i] = gelu(trace.mlp_pre[i]);
    }
    let mut mlp_out = vec![0.0f32; c];
    affine(tensor(&offsets.w_mlp2), tensor(&offsets.b_mlp2), &trace.mlp_act, &mut mlp_out);
    for i in 0..c {
        trace.pooled[i] = trace.attn_out[i] + mlp_out[i];
    }
    affine(tensor(&offsets.w_cls), tensor(&offsets.b_cls), &trace.pooled, &mut trace.logits);
    Ok(())
}

/// Runs the head over a batch. Examples may have different token counts;
/// attention pools over whatever is there.
pub fn forward(params: &MapHeadParams, examples: &[&FeatureTensor]) -> Result<Forward> {
    let mut out = Forward {
        pooled: Vec::with_capacity(examples.len()),
        logits: Vec::with_capacity(examples.len()),
        traces: Vec::with_capacity(examples.len()),
    };
    let offsets = params.shape.offsets();
    for tokens in examples {
        let mut trace = ExampleTrace::default();
        forward_example_into(params, &offsets, tokens, &mut trace)?;
        out.pooled.push(trace.pooled.clone());
        out.logits.push(trace.logits.clone());
        out.traces.push(trace);
    }
    Ok(out)
}

/// Sigmoid cross-entropy: sum over classes, mean over the batch, in a form
/// that never exponentiates a positive logit.
pub fn loss_sigmoid_ce<A: AsRef<[f32]>, B: AsRef<[f32]>>(logits: &[A], labels: &[B]) -> f32 {
    debug_assert_eq!(logits.len(), labels.len());
    let mut total = 0.0f64;
    for (l_row, y_row) in logits.iter().zip(labels) {
        for (&l, &y) in l_row.as_ref().iter().zip(y_row.as_ref()) {
            let l = l as f64;
            let y = y as f64;
            total += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
        }
    }
    (total / logits.len() as f64) as f32
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + fast_exp(-x))
    } else {
        let e = fast_exp(x);
        e / (1.0 + e)
    }
}

/// Loss and the exact gradient of `loss_sigmoid_ce(forward(...))` with
/// respect to every parameter, as a flat buffer matching the layout.
pub fn backward(
    params: &MapHeadParams,
    examples: &[&FeatureTensor],
    labels: &[&[f32]],
) -> Result<(f32, Vec<f32>)> {
    debug_assert_eq!(examples.len(), labels.len());
    let shape = params.shape;
    let c = shape.channels;
    let h = shape.heads;
    let d = shape.head_dim();
    let hidden = 4 * c;
    let inv_sqrt_d = 1.0 / (d as f32).sqrt();
    let offsets = shape.offsets();
    let tensor = |r: &Range<usize>| &params.data[r.clone()];
    let batch = examples.len();
    let inv_batch = 1.0 / batch as f32;

    let mut grads = vec![0.0f32; shape.layout().total()];
    let mut loss_total = 0.0f64;

    // scratch reused across examples
    let mut d_logits = vec![0.0f32; shape.classes];
    let mut d_pooled = vec![0.0f32; c];
    let mut d_mlp_act = vec![0.0f32; hidden];
    let mut d_mlp_pre = vec![0.0f32; hidden];
    let mut d_ln_out = vec![0.0f32; c];
    let mut d_attn_out = vec![0.0f32; c];
    let mut d_mid = vec![0.0f32; c];
    let mut d_query = vec![0.0f32; c];
    let mut ln_out = vec![0.0f32; c];
    let mut trace = ExampleTrace::default();
    let mut d_keys: Vec<f32> = Vec::new();
    let mut d_values: Vec<f32> = Vec::new();
    let mut d_attn: Vec<f32> = Vec::new();

    {
        let g = split_grads(&shape, &mut grads);

        for (tokens, label) in examples.iter().zip(labels) {
            forward_example_into(params, &offsets, tokens, &mut trace)?;
            let n = tokens.tokens();

            for ((d_logit, &l), &y) in d_logits.iter_mut().zip(&trace.logits).zip(label.iter()) {
                loss_total +=
                    (l.max(0.0) - l * y) as f64 + (fast_exp(-l.abs()) as f64).ln_1p();
                *d_logit = (sigmoid(l) - y) * inv_batch;
            }

            // classifier: grad rows plus d_pooled = W^T d_logits
            for ((grad_row, &dl), grad_bias) in
                g.w_cls.chunks_exact_mut(c).zip(&d_logits).zip(g.b_cls.iter_mut())
            {
                axpy(grad_row, dl, &trace.pooled);
                *grad_bias += dl;
            }
            d_pooled.fill(0.0);
            for (weight_row, &dl) in tensor(&offsets.w_cls).chunks_exact(c).zip(&d_logits) {
                axpy(&mut d_pooled, dl, weight_row);
            }

            // residual: pooled = attn_out + mlp_out; the layer-norm path
            // adds to d_attn_out below
            d_attn_out.copy_from_slice(&d_pooled);

            // mlp second layer
            for ((grad_row, &dm), grad_bias) in
                g.w_mlp2.chunks_exact_mut(hidden).zip(&d_pooled).zip(g.b_mlp2.iter_mut())
            {
                axpy(grad_row, dm, &trace.mlp_act);
                *grad_bias += dm;
            }
            d_mlp_act.fill(0.0);
            for (weight_row, &dm) in tensor(&offsets.w_mlp2).chunks_exact(hidden).zip(&d_pooled) {
                axpy(&mut d_mlp_act, dm, weight_row);
            }
            for ((dst, &da), &pre) in
                d_mlp_pre.iter_mut().zip(&d_mlp_act).zip(&trace.mlp_pre)
            {
                *dst = da * gelu_derivative(pre);
            }

            // mlp first layer; rebuild its input from the trace
            let scale = tensor(&offsets.ln_scale);
            let offset = tensor(&offsets.ln_offset);
            for (((dst, &sc), &xh), &of) in
                ln_out.iter_mut().zip(scale).zip(&trace.ln_x_hat).zip(offset)
            {
                *dst = sc * xh + of;
            }
            for ((grad_row, &dm), grad_bias) in
                g.w_mlp1.chunks_exact_mut(c).zip(&d_mlp_pre).zip(g.b_mlp1.iter_mut())
            {
                axpy(grad_row, dm, &ln_out);
                *grad_bias += dm;
            }
            d_ln_out.fill(0.0);
            for (weight_row, &dm) in tensor(&offsets.w_mlp1).chunks_exact(c).zip(&d_mlp_pre) {
                axpy(&mut d_ln_out, dm, weight_row);
            }

            // layer norm
            {
                let mut d_x_hat_mean = 0.0f32;
                let mut d_x_hat_dot_x_hat = 0.0f32;
                for (((grad_scale, grad_offset), &dl), (&xh, &sc)) in g
                    .ln_scale
                    .iter_mut()
                    .zip(g.ln_offset.iter_mut())
                    .zip(&d_ln_out)
                    .zip(trace.ln_x_hat.iter().zip(scale))
                {
                    *grad_scale += dl * xh;
                    *grad_offset += dl;
                    let d_x_hat = dl * sc;
                    d_x_hat_mean += d_x_hat;
                    d_x_hat_dot_x_hat += d_x_hat * xh;
                }
                d_x_hat_mean /= c as f32;
                d_x_hat_dot_x_hat /= c as f32;
                for ((dst, &dl), (&xh, &sc)) in d_attn_out
                    .iter_mut()
                    .zip(&d_ln_out)
                    .zip(trace.ln_x_hat.iter().zip(scale))
                {
                    let d_x_hat = dl * sc;
                    *dst += trace.ln_inv_std * (d_x_hat - d_x_hat_mean - xh * d_x_hat_dot_x_hat);
                }
            }

            // output projection
            for ((grad_row, &da), grad_bias) in
                g.w_o.chunks_exact_mut(c).zip(&d_attn_out).zip(g.b_o.iter_mut())
            {
                axpy(grad_row, da, &trace.mid);
                *grad_bias += da;
            }
            d_mid.fill(0.0);
            for (weight_row, &da) in tensor(&offsets.w_o).chunks_exact(c).zip(&d_attn_out) {
                axpy(&mut d_mid, da, weight_row);
            }

            // attention: per head through the value mix and the softmax
            ensure_len(&mut d_keys, n * c);
            ensure_len(&mut d_values, n * c);
            d_query.fill(0.0);
            for head in 0..h {
                let lanes = head * d..(head + 1) * d;
                let attn = &trace.attn[head * n..(head + 1) * n];
                let dm = &d_mid[lanes.clone()];
                ensure_len(&mut d_attn, n);
                for (token, (da, &a)) in d_attn.iter_mut().zip(attn).enumerate() {
                    let base = token * c + lanes.start;
                    *da = dot(dm, &trace.values[base..base + d]);
                    for (dst, &dmi) in d_values[base..base + d].iter_mut().zip(dm) {
                        *dst = a * dmi;
                    }
                }
                // softmax jacobian
                let weighted: f32 = attn.iter().zip(&d_attn).map(|(&a, &g)| a * g).sum();
                let q = &trace.query[lanes.clone()];
                for (token, (&da, &a)) in d_attn.iter().zip(attn).enumerate() {
                    let d_score = a * (da - weighted) * inv_sqrt_d;
                    let base = token * c + lanes.start;
                    axpy(&mut d_query[lanes.clone()], d_score, &trace.keys[base..base + d]);
                    for (dst, &qi) in d_keys[base..base + d].iter_mut().zip(q) {
                        *dst = d_score * qi;
                    }
                }
            }

            // key/value projections accumulate over tokens
            for token in 0..n {
                let x = tokens.token(token);
                let dk_row = &d_keys[token * c..(token + 1) * c];
                let dv_row = &d_values[token * c..(token + 1) * c];
                for ((grad_row, &dk), grad_bias) in
                    g.w_k.chunks_exact_mut(c).zip(dk_row).zip(g.b_k.iter_mut())
                {
                    axpy(grad_row, dk, x);
                    *grad_bias += dk;
                }
                for ((grad_row, &dv), grad_bias) in
                    g.w_v.chunks_exact_mut(c).zip(dv_row).zip(g.b_v.iter_mut())
                {
                    axpy(grad_row, dv, x);
                    *grad_bias += dv;
                }
            }

            // query projection and probe
            let probe = tensor(&offsets.probe);
            for ((grad_row, &dq), grad_bias) in
                g.w_q.chunks_exact_mut(c).zip(&d_query).zip(g.b_q.iter_mut())
            {
                axpy(grad_row, dq, probe);
                *grad_bias += dq;
            }
            for (weight_row, &dq) in tensor(&offsets.w_q).chunks_exact(c).zip(&d_query) {
                axpy(g.probe, dq, weight_row);
            }
        }
    }

    let loss = (loss_total / batch as f64) as f32;
    Ok((loss, grads))
}

/// Serialized checkpoint index: flat little-endian f32 payload described by
/// named offsets (in elements).
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointIndex {
    dtype: String,
    byte_order: String,
    channels: usize,
    classes: usize,
    heads: usize,
    tensors: serde_json::Map<String, serde_json::Value>,
}

/// Writes the flat f32 buffer to `path` and a JSON index of
/// `{name -> offset, shape}` next to it (`<stem>.json`). Reload is
/// bit-exact.
pub fn save_checkpoint(params: &MapHeadParams, path: &Path) -> Result<()> {
    let layout = params.shape.layout();
    let mut bytes = Vec::with_capacity(params.data.len() * 4);
    for &v in &params.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &bytes)?;

    let mut tensors = serde_json::Map::new();
    for (name, range, shape) in layout.entries() {
        tensors.insert(
            (*name).to_string(),
            serde_json::json!({ "offset": range.start, "shape": shape }),
        );
    }
    let index = CheckpointIndex {
        dtype: "f32".into(),
        byte_order: "little".into(),
        channels: params.shape.channels,
        classes: params.shape.classes,
        heads: params.shape.heads,
        tensors,
    };
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MapHeadParams> {
    let index_text = std::fs::read_to_string(path.with_extension("json"))
        .map_err(|e| Error::Checkpoint(format!("missing index: {e}")))?;
    let index: CheckpointIndex = serde_json::from_str(&index_text)?;
    if index.dtype != "f32" || index.byte_order != "little" {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint encoding {}/{}",
            index.dtype, index.byte_order
        )));
    }
    let shape = MapHeadShape::new(index.channels, index.classes, index.heads)?;
    let layout = shape.layout();
    let bytes = std::fs::read(path)?;
    if bytes.len() != layout.total() * 4 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            layout.total() * 4,
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(MapHeadParams { shape, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tensor(tokens: usize, channels: usize, seed: u64) -> FeatureTensor {
        let mut rng = RngKey::new(seed).child_str("tokens").stream();
        let data: Vec<f32> = (0..tokens * channels)
            .map(|_| rng.uniform_in(-2.0, 2.0) as f32)
            .collect();
        FeatureTensor::new(data, tokens, channels).unwrap()
    }

    fn one_hot(class: usize, classes: usize) -> Vec<f32> {
        let mut label = vec![0.0; classes];
        label[class] = 1.0;
        label
    }

    #[test]
    fn fresh_head_outputs_zero_logits() {
        let params = init(8, 3, 2, 0).unwrap();
        let t = random_tensor(4, 8, 1);
        let out = forward(&params, &[&t]).unwrap();
        assert!(out.logits[0].iter().all(|&l| l == 0.0));
    }

    #[test]
    fn init_is_deterministic_and_head_count_checked() {
        let a = init(8, 3, 2, 7).unwrap();
        let b = init(8, 3, 2, 7).unwrap();
        assert_eq!(a.data, b.data);
        assert!(matches!(init(8, 3, 3, 0), Err(Error::HeadCount { h: 3, c: 8 })));
    }

    #[test]
    fn single_token_attention_is_closed_form() {
        // softmax over one token is 1, so
        // attn_out = W_o (W_v x + b_v) + b_o independent of q and k
        let params = init(8, 3, 2, 3).unwrap();
        let t = random_tensor(1, 8, 4);
        let out = forward(&params, &[&t]).unwrap();
        let trace = &out.traces[0];

        let mut v = vec![0.0f32; 8];
        affine(params.tensor("w_v"), params.tensor("b_v"), t.token(0), &mut v);
        let mut expect = vec![0.0f32; 8];
        affine(params.tensor("w_o"), params.tensor("b_o"), &v, &mut expect);
        for (a, b) in trace.attn_out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn forward_is_permutation_invariant_over_tokens() {
        let params = init(8, 3, 2, 5).unwrap();
        let t = random_tensor(6, 8, 6);
        let mut permuted_rows: Vec<Vec<f32>> = (0..6).map(|n| t.token(n).to_vec()).collect();
        permuted_rows.reverse();
        let permuted = FeatureTensor::new(permuted_rows.concat(), 6, 8).unwrap();

        let a = forward(&params, &[&t]).unwrap();
        let b = forward(&params, &[&permuted]).unwrap();
        for (x, y) in a.logits[0].iter().zip(&b.logits[0]) {
            assert!((x - y).abs() < 1e-6);
        }
        for (x, y) in a.pooled[0].iter().zip(&b.pooled[0]) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn loss_at_zero_logits_is_s_ln2() {
        let logits = vec![vec![0.0f32; 5]; 3];
        let labels = vec![one_hot(0, 5), one_hot(2, 5), one_hot(4, 5)];
        let loss = loss_sigmoid_ce(&logits, &labels);
        let expect = 5.0 * std::f32::consts::LN_2;
        assert!((loss - expect).abs() < 1e-6);
    }

    #[test]
    fn loss_saturates_to_zero_when_correct_and_confident() {
        let logits = vec![vec![100.0, -100.0, -100.0]];
        let labels = vec![one_hot(0, 3)];
        let loss = loss_sigmoid_ce(&logits, &labels);
        assert!(loss < 1e-6);
        assert!(loss >= 0.0);
    }

    #[test]
    fn loss_handles_mixup_labels() {
        let logits = vec![vec![0.0f32, 0.0]];
        let labels = vec![vec![0.5f32, 0.5]];
        let loss = loss_sigmoid_ce(&logits, &labels);
        assert!((loss - 2.0 * std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn loss_is_stable_at_huge_logits() {
        let logits = vec![vec![100.0f32, -100.0]];
        let labels = vec![vec![0.0f32, 1.0]];
        let loss = loss_sigmoid_ce(&logits, &labels);
        assert!(loss.is_finite());
        assert!((loss - 200.0).abs() < 1e-3);
    }

    fn finite_difference_check(seed: u64) -> f32 {
        let (c, s, h, n, b) = (8, 3, 2, 4, 2);
        let params = init(c, s, h, seed).unwrap();
        let examples: Vec<FeatureTensor> =
            (0..b).map(|i| random_tensor(n, c, seed * 100 + i as u64)).collect();
        let refs: Vec<&FeatureTensor> = examples.iter().collect();
        let labels: Vec<Vec<f32>> = (0..b).map(|i| one_hot(i % s, s)).collect();
        let label_refs: Vec<&[f32]> = labels.iter().map(|l| l.as_slice()).collect();

        let (_, grads) = backward(&params, &refs, &label_refs).unwrap();

        let epsilon = 1e-3f32;
        let mut worst = 0.0f32;
        let scale = grads.iter().map(|g| g.abs()).fold(0.0f32, f32::max).max(1e-6);
        for i in 0..params.data.len() {
            let mut plus = params.clone();
            plus.data[i] += epsilon;
            let mut minus = params.clone();
            minus.data[i] -= epsilon;
            let loss_plus = {
                let out = forward(&plus, &refs).unwrap();
                loss_sigmoid_ce(&out.logits, &labels)
            };
            let loss_minus = {
                let out = forward(&minus, &refs).unwrap();
                loss_sigmoid_ce(&out.logits, &labels)
            };
            let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
            let err = (grads[i] - numeric).abs() / scale;
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let worst = finite_difference_check(seed);
            assert!(worst < 1e-2, "seed {seed}: max relative error {worst}");
        }
    }

    #[test]
    fn zero_init_classifier_bias_gradient_is_half_minus_mean_label() {
        // with zero classifier weights every logit is 0, so the bias
        // gradient per class is mean over batch of (sigmoid(0) - y)
        let params = init(8, 3, 2, 1).unwrap();
        let examples: Vec<FeatureTensor> = (0..4).map(|i| random_tensor(4, 8, i)).collect();
        let refs: Vec<&FeatureTensor> = examples.iter().collect();
        let labels: Vec<Vec<f32>> = vec![one_hot(0, 3), one_hot(0, 3), one_hot(1, 3), one_hot(2, 3)];
        let label_refs: Vec<&[f32]> = labels.iter().map(|l| l.as_slice()).collect();
        let (_, grads) = backward(&params, &refs, &label_refs).unwrap();
        let layout = params.shape.layout();
        let b_cls = &grads[layout.range("b_cls")];
        let mean_labels = [0.5, 0.25, 0.25];
        for (s, &g) in b_cls.iter().enumerate() {
            let expect = 0.5 - mean_labels[s];
            assert!((g - expect).abs() < 1e-6, "class {s}: {g} vs {expect}");
        }
    }

    #[test]
    fn duplicating_an_example_keeps_gradients() {
        // mean semantics: [a, b] and [a, a, b, b] give the same gradient
        let params = init(8, 3, 2, 2).unwrap();
        let a = random_tensor(4, 8, 10);
        let b = random_tensor(4, 8, 11);
        let labels2 = vec![one_hot(0, 3), one_hot(1, 3)];
        let labels4 = vec![one_hot(0, 3), one_hot(0, 3), one_hot(1, 3), one_hot(1, 3)];
        let refs2: Vec<&[f32]> = labels2.iter().map(|l| l.as_slice()).collect();
        let refs4: Vec<&[f32]> = labels4.iter().map(|l| l.as_slice()).collect();
        let (_, g2) = backward(&params, &[&a, &b], &refs2).unwrap();
        let (_, g4) = backward(&params, &[&a, &a, &b, &b], &refs4).unwrap();
        for (x, y) in g2.iter().zip(&g4) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn variable_token_counts_in_one_batch() {
        let params = init(8, 3, 2, 3).unwrap();
        let short = random_tensor(2, 8, 20);
        let long = random_tensor(9, 8, 21);
        let labels = vec![one_hot(0, 3), one_hot(1, 3)];
        let label_refs: Vec<&[f32]> = labels.iter().map(|l| l.as_slice()).collect();
        let out = forward(&params, &[&short, &long]).unwrap();
        assert_eq!(out.logits.len(), 2);
        let (loss, _) = backward(&params, &[&short, &long], &label_refs).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let params = init(8, 3, 2, 0).unwrap();
        let t = random_tensor(4, 6, 0);
        assert!(forward(&params, &[&t]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.ckpt");
        let params = init(16, 5, 4, 9).unwrap();
        save_checkpoint(&params, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.shape, params.shape);
        let bits = |p: &MapHeadParams| p.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&params));
    }

    #[test]
    fn decay_mask_excludes_biases_and_ln_offset() {
        let shape = MapHeadShape::new(8, 3, 2).unwrap();
        let layout = shape.layout();
        let mask = shape.decay_mask();
        for i in layout.range("w_q") {
            assert!(mask[i]);
        }
        for i in layout.range("probe") {
            assert!(mask[i]);
        }
        for name in ["b_q", "b_cls", "ln_offset", "b_mlp1"] {
            for i in layout.range(name) {
                assert!(!mask[i]);
            }
        }
        for i in layout.range("ln_scale") {
            assert!(mask[i]);
        }
    }
}
