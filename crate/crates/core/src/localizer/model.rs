//! One-block, two-head attention model pooled at the `[CLS]` position, with
//! an analytic backward pass.
//!
//! Only the `[CLS]` output feeds the head, so the block computes the query
//! for position 0 alone; keys and values cover every token.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Token, TokenSequence};
use crate::rng::seeded2;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelDims {
    /// Number of object classes `C`.
    pub classes: usize,
    /// Word vocabulary size `V`.
    pub vocab: usize,
    /// Model width `D`.
    pub dim: usize,
    pub heads: usize,
}

impl ModelDims {
    pub fn new(classes: usize, vocab: usize, dim: usize) -> Self {
        Self { classes, vocab, dim, heads: 2 }
    }

    pub fn ff(&self) -> usize {
        4 * self.dim
    }

    fn layout(&self) -> Layout {
        let (c, v, d, f) = (self.classes, self.vocab, self.dim, self.ff());
        let sizes = [c * d, v * d, 3 * d, d * d, d * d, d * d, f * d, f, d * f, d, 2 * d, 2];
        let mut offsets = [0usize; 13];
        for (i, s) in sizes.iter().enumerate() {
            offsets[i + 1] = offsets[i] + s;
        }
        Layout { offsets }
    }

    pub fn param_count(&self) -> usize {
        self.layout().offsets[12]
    }
}

#[derive(Clone, Copy)]
enum Part {
    ClassEmb = 0,
    WordEmb,
    Special,
    Wq,
    Wk,
    Wv,
    W1,
    B1,
    W2,
    B2,
    Wh,
    Bh,
}

struct Layout {
    offsets: [usize; 13],
}

impl Layout {
    fn range(&self, part: Part) -> core::ops::Range<usize> {
        let i = part as usize;
        self.offsets[i]..self.offsets[i + 1]
    }
}

pub const SPECIAL_CLS: usize = 0;
pub const SPECIAL_SEP: usize = 1;
pub const SPECIAL_PAD: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LocalizerModel {
    pub dims: ModelDims,
    pub seed: u64,
    /// Flat parameter vector: class embeddings, word embeddings, special
    /// embeddings (CLS, SEP, PAD), `W_q`, `W_k`, `W_v`, `W_1`, `b_1`, `W_2`,
    /// `b_2`, output head `W_h`, `b_h`.
    pub params: Vec<f64>,
}

/// Parameters under a single name, for inspection.
pub struct ParamView<'a> {
    pub name: &'static str,
    pub values: &'a [f64],
}

impl LocalizerModel {
    pub fn zeros(dims: ModelDims) -> Self {
        Self { dims, seed: 0, params: vec![0.0; dims.param_count()] }
    }

    /// Gaussian initialization with standard deviation `scale`; biases start
    /// at zero.
    pub fn init(dims: ModelDims, seed: u64, scale: f64) -> Self {
        let mut model = Self::zeros(dims);
        model.seed = seed;
        let mut rng = seeded2(seed, 0x1417);
        let normal = Normal::new(0.0, scale.abs()).expect("finite scale");
        let layout = dims.layout();
        for part in [Part::ClassEmb, Part::WordEmb, Part::Special, Part::Wq, Part::Wk, Part::Wv, Part::W1, Part::W2, Part::Wh] {
            for p in &mut model.params[layout.range(part)] {
                *p = normal.sample(&mut rng);
            }
        }
        model
    }

    pub fn parts(&self) -> Vec<ParamView<'_>> {
        let layout = self.dims.layout();
        let names = [
            ("classEmbeddings", Part::ClassEmb),
            ("wordEmbeddings", Part::WordEmb),
            ("specialEmbeddings", Part::Special),
            ("queries", Part::Wq),
            ("keys", Part::Wk),
            ("values", Part::Wv),
            ("ff1Weight", Part::W1),
            ("ff1Bias", Part::B1),
            ("ff2Weight", Part::W2),
            ("ff2Bias", Part::B2),
            ("headWeight", Part::Wh),
            ("headBias", Part::Bh),
        ];
        names.iter().map(|&(name, part)| ParamView { name, values: &self.params[layout.range(part)] }).collect()
    }

    pub fn zero_output_head(&mut self) {
        let layout = self.dims.layout();
        for part in [Part::Wh, Part::Bh] {
            self.params[layout.range(part)].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    pub fn class_embedding(&self, class: u32) -> &[f64] {
        let d = self.dims.dim;
        let start = self.dims.layout().range(Part::ClassEmb).start + class as usize * d;
        &self.params[start..start + d]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Fixed sinusoidal position code for text tokens, scaled by 0.1.
fn position_code(pos: u32, j: usize, dim: usize) -> f64 {
    let rate = libm::pow(10_000.0, (2 * (j / 2)) as f64 / dim as f64);
    let a = f64::from(pos) / rate;
    0.1 * if j.is_multiple_of(2) { libm::sin(a) } else { libm::cos(a) }
}

/// `raw` repeated over `dim` components and truncated.
pub fn tile(raw: &[f64; 5], dim: usize) -> impl Iterator<Item = f64> + '_ {
    (0..dim).map(move |j| raw[j % 5])
}

fn matvec(w: &[f64], x: &[f64], rows: usize, out: &mut [f64]) {
    let cols = x.len();
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out += W^T v` with `W` of shape `rows × cols`.
fn matvec_t_add(w: &[f64], v: &[f64], cols: usize, out: &mut [f64]) {
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vr;
        }
    }
}

/// `G += a b^T`.
fn outer_add(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        for (gv, bv) in g[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *gv += ar * bv;
        }
    }
}

/// Layer norm without affine parameters; returns `1/σ`.
fn layer_norm(x: &[f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / libm::sqrt(var + LN_EPS);
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv;
    }
    inv
}

fn layer_norm_back(xhat: &[f64], inv: f64, dxhat: &[f64], dx: &mut [f64]) {
    let n = xhat.len() as f64;
    let m1 = dxhat.iter().sum::<f64>() / n;
    let m2 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    for i in 0..xhat.len() {
        dx[i] += inv * (dxhat[i] - m1 - xhat[i] * m2);
    }
}

fn gelu(u: f64) -> (f64, f64) {
    let inner = GELU_C * (u + 0.044_715 * u * u * u);
    let t = libm::tanh(inner);
    let value = 0.5 * u * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044_715 * u * u);
    (value, deriv)
}

/// Activations kept for the backward pass.
pub(crate) struct Cache {
    n: usize,
    x: Vec<f64>,
    h: Vec<f64>,
    inv: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    alpha: Vec<f64>,
    y: Vec<f64>,
    g: Vec<f64>,
    inv_y: f64,
    u: Vec<f64>,
    du_dz: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    pub(crate) out: [f64; 2],
}

impl LocalizerModel {
    fn embed(&self, seq: &TokenSequence) -> Vec<f64> {
        let d = self.dims.dim;
        let layout = self.dims.layout();
        let class = &self.params[layout.range(Part::ClassEmb)];
        let word = &self.params[layout.range(Part::WordEmb)];
        let special = &self.params[layout.range(Part::Special)];
        let text: Vec<u32> = seq.text_ids().collect();
        let mut x = vec![0.0; seq.len() * d];
        for (i, tok) in seq.tokens.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            match tok {
                Token::Cls => {
                    row.copy_from_slice(&special[SPECIAL_CLS * d..(SPECIAL_CLS + 1) * d]);
                    if !text.is_empty() {
                        let scale = 1.0 / text.len() as f64;
                        for &id in &text {
                            let e = &word[id as usize * d..(id as usize + 1) * d];
                            row.iter_mut().zip(e).for_each(|(o, v)| *o += v * scale);
                        }
                    }
                }
                Token::Sep => row.copy_from_slice(&special[SPECIAL_SEP * d..(SPECIAL_SEP + 1) * d]),
                Token::Spatial(s) => {
                    let e = &class[s.class as usize * d..(s.class as usize + 1) * d];
                    for ((o, t), c) in row.iter_mut().zip(tile(&s.raw, d)).zip(e) {
                        *o = t + c;
                    }
                }
                Token::Word { id, position } => {
                    let e = &word[*id as usize * d..(*id as usize + 1) * d];
                    for (j, (o, v)) in row.iter_mut().zip(e).enumerate() {
                        *o = v + position_code(*position, j, d);
                    }
                }
            }
        }
        x
    }

    pub(crate) fn forward(&self, seq: &TokenSequence) -> Cache {
        let dims = self.dims;
        let (d, heads) = (dims.dim, dims.heads);
        let dh = d / heads;
        let layout = dims.layout();
        let p = |part| &self.params[layout.range(part)];
        let n = seq.len();
        let x = self.embed(seq);
        let mut h = vec![0.0; n * d];
        let mut inv = vec![0.0; n];
        for i in 0..n {
            inv[i] = layer_norm(&x[i * d..(i + 1) * d], &mut h[i * d..(i + 1) * d]);
        }
        let mut q = vec![0.0; d];
        matvec(p(Part::Wq), &h[..d], d, &mut q);
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        for i in 0..n {
            matvec(p(Part::Wk), &h[i * d..(i + 1) * d], d, &mut k[i * d..(i + 1) * d]);
            matvec(p(Part::Wv), &h[i * d..(i + 1) * d], d, &mut v[i * d..(i + 1) * d]);
        }
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut alpha = vec![0.0; heads * n];
        let mut a = vec![0.0; d];
        for m in 0..heads {
            let span = m * dh..(m + 1) * dh;
            let scores = &mut alpha[m * n..(m + 1) * n];
            for i in 0..n {
                scores[i] = q[span.clone()].iter().zip(&k[i * d + span.start..i * d + span.end]).map(|(a, b)| a * b).sum::<f64>()
                    * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = libm::exp(*s - max);
                total += *s;
            }
            for s in scores.iter_mut() {
                *s /= total;
            }
            for i in 0..n {
                let w = scores[i];
                for j in span.clone() {
                    a[j] += w * v[i * d + j];
                }
            }
        }
        let y: Vec<f64> = x[..d].iter().zip(&a).map(|(x, a)| x + a).collect();
        let (g, inv_y, u, du_dz, z, r, out) = self.feed_forward(&y);
        Cache { n, x, h, inv, q, k, v, alpha, y, g, inv_y, u, du_dz, z, r, out }
    }

    /// CLS residual stream after attention, `y = x_cls + attn`.
    pub(crate) fn attend(&self, seq: &TokenSequence) -> Vec<f64> {
        self.forward(seq).y
    }

    /// Index of the first parameter that only enters after attention.
    pub(crate) fn feed_forward_start(&self) -> usize {
        self.dims.layout().range(Part::W1).start
    }

    /// Output given the post-attention CLS vector.
    pub(crate) fn output_from(&self, y: &[f64]) -> [f64; 2] {
        self.feed_forward(y).6
    }

    #[allow(clippy::type_complexity)]
    fn feed_forward(&self, y: &[f64]) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, [f64; 2]) {
        let dims = self.dims;
        let (d, f) = (dims.dim, dims.ff());
        let layout = dims.layout();
        let p = |part| &self.params[layout.range(part)];
        let mut g = vec![0.0; d];
        let inv_y = layer_norm(y, &mut g);
        let mut u = vec![0.0; f];
        matvec(p(Part::W1), &g, f, &mut u);
        let mut z = vec![0.0; f];
        let mut du_dz = vec![0.0; f];
        for j in 0..f {
            u[j] += p(Part::B1)[j];
            let (val, der) = gelu(u[j]);
            z[j] = val;
            du_dz[j] = der;
        }
        let mut ff = vec![0.0; d];
        matvec(p(Part::W2), &z, d, &mut ff);
        let r: Vec<f64> = (0..d).map(|j| y[j] + ff[j] + p(Part::B2)[j]).collect();
        let mut out = [0.0; 2];
        matvec(p(Part::Wh), &r, 2, &mut out);
        out[0] += p(Part::Bh)[0];
        out[1] += p(Part::Bh)[1];
        (g, inv_y, u, du_dz, z, r, out)
    }

    /// Raw two-component output for one sequence.
    pub fn raw_output(&self, seq: &TokenSequence) -> [f64; 2] {
        self.forward(seq).out
    }

    /// Adds `∂L/∂params` for upstream gradient `d_out = ∂L/∂raw` into `grad`.
    pub(crate) fn backward(&self, seq: &TokenSequence, cache: &Cache, d_out: [f64; 2], grad: &mut [f64]) {
        let dims = self.dims;
        let (d, f, heads) = (dims.dim, dims.ff(), dims.heads);
        let dh = d / heads;
        let n = cache.n;
        let layout = dims.layout();
        let p = |part| &self.params[layout.range(part)];

        // output head
        {
            let gw = &mut grad[layout.range(Part::Wh)];
            outer_add(gw, &d_out, &cache.r);
        }
        grad[layout.range(Part::Bh)].iter_mut().zip(&d_out).for_each(|(g, v)| *g += v);
        let mut dr = vec![0.0; d];
        matvec_t_add(p(Part::Wh), &d_out, d, &mut dr);

        // feed-forward residual
        let mut dy = dr.clone();
        grad[layout.range(Part::B2)].iter_mut().zip(&dr).for_each(|(g, v)| *g += v);
        outer_add(&mut grad[layout.range(Part::W2)], &dr, &cache.z);
        let mut dz = vec![0.0; f];
        matvec_t_add(p(Part::W2), &dr, f, &mut dz);
        let du: Vec<f64> = dz.iter().zip(&cache.du_dz).map(|(a, b)| a * b).collect();
        grad[layout.range(Part::B1)].iter_mut().zip(&du).for_each(|(g, v)| *g += v);
        outer_add(&mut grad[layout.range(Part::W1)], &du, &cache.g);
        let mut dg = vec![0.0; d];
        matvec_t_add(p(Part::W1), &du, d, &mut dg);
        layer_norm_back(&cache.g, cache.inv_y, &dg, &mut dy);

        // attention residual
        let mut dx = vec![0.0; n * d];
        dx[..d].iter_mut().zip(&dy).for_each(|(o, v)| *o += v);
        let da = &dy;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut dq = vec![0.0; d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        for m in 0..heads {
            let span = m * dh..(m + 1) * dh;
            let alpha = &cache.alpha[m * n..(m + 1) * n];
            let mut dalpha = vec![0.0; n];
            for i in 0..n {
                for j in span.clone() {
                    dv[i * d + j] += alpha[i] * da[j];
                    dalpha[i] += da[j] * cache.v[i * d + j];
                }
            }
            let mean: f64 = alpha.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
            for i in 0..n {
                let ds = alpha[i] * (dalpha[i] - mean) * scale;
                for j in span.clone() {
                    dq[j] += ds * cache.k[i * d + j];
                    dk[i * d + j] += ds * cache.q[j];
                }
            }
        }
        let mut dh_all = vec![0.0; n * d];
        outer_add(&mut grad[layout.range(Part::Wq)], &dq, &cache.h[..d]);
        matvec_t_add(p(Part::Wq), &dq, d, &mut dh_all[..d]);
        for i in 0..n {
            let hi = &cache.h[i * d..(i + 1) * d];
            outer_add(&mut grad[layout.range(Part::Wk)], &dk[i * d..(i + 1) * d], hi);
            outer_add(&mut grad[layout.range(Part::Wv)], &dv[i * d..(i + 1) * d], hi);
            matvec_t_add(p(Part::Wk), &dk[i * d..(i + 1) * d], d, &mut dh_all[i * d..(i + 1) * d]);
            matvec_t_add(p(Part::Wv), &dv[i * d..(i + 1) * d], d, &mut dh_all[i * d..(i + 1) * d]);
        }
        for i in 0..n {
            layer_norm_back(
                &cache.h[i * d..(i + 1) * d],
                cache.inv[i],
                &dh_all[i * d..(i + 1) * d],
                &mut dx[i * d..(i + 1) * d],
            );
        }
        let _ = &cache.x;
        let _ = &cache.u;

        // scatter into embeddings
        let text: Vec<u32> = seq.text_ids().collect();
        let class_start = layout.range(Part::ClassEmb).start;
        let word_start = layout.range(Part::WordEmb).start;
        let special_start = layout.range(Part::Special).start;
        let add = |grad: &mut [f64], start: usize, src: &[f64], s: f64| {
            grad[start..start + d].iter_mut().zip(src).for_each(|(g, v)| *g += v * s);
        };
        for (i, tok) in seq.tokens.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            match tok {
                Token::Cls => {
                    add(grad, special_start + SPECIAL_CLS * d, row, 1.0);
                    if !text.is_empty() {
                        let s = 1.0 / text.len() as f64;
                        for &id in &text {
                            add(grad, word_start + id as usize * d, row, s);
                        }
                    }
                }
                Token::Sep => add(grad, special_start + SPECIAL_SEP * d, row, 1.0),
                Token::Spatial(sp) => add(grad, class_start + sp.class as usize * d, row, 1.0),
                Token::Word { id, .. } => add(grad, word_start + *id as usize * d, row, 1.0),
            }
        }
    }
}
