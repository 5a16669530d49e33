//! Learned reward prior `f_NN(I, a)`.
//!
//! Architecture (fixed):
//!
//! ```text
//! image 64×64 ─ conv 8@3×3/2 ─ ReLU ─ conv 16@3×3/2 ─ ReLU ─ spatial softmax ─┐ 32
//! action (3, zero padded) ─ affine 32 ─ ReLU ─ affine 16 ───────────────────────┤ 16
//!                                      affine 64 ─ ReLU ─ affine 64 ─ ReLU ─ affine 1
//! ```
//!
//! All parameters live in one flat vector in declared layer order, which keeps
//! the optimizer, gradient checks and persistence simple. The backward pass is
//! written out by hand for this architecture only.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{ContextImage, MechanismKind, IMAGE_SIZE};
use crate::seed;

pub const ACTION_INPUT: usize = 3;

const KSIZE: usize = 3;
const STRIDE: usize = 2;
const C1: usize = 8;
const C2: usize = 16;
const H0: usize = IMAGE_SIZE;
const H1: usize = (H0 - KSIZE) / STRIDE + 1;
const H2: usize = (H1 - KSIZE) / STRIDE + 1;
/// Length of the image encoding: one (x, y) point per final channel.
pub const IMAGE_FEATURES: usize = 2 * C2;
const ACT_HIDDEN: usize = 32;
const ACT_OUT: usize = 16;
const DIST_IN: usize = IMAGE_FEATURES + ACT_OUT;
const DIST_HIDDEN: usize = 64;

/// Lower bound applied to the softmax temperature after every update.
pub const MIN_TEMPERATURE: f64 = 1e-2;

pub const WEIGHTS_VERSION: &str = "mechprior-weights/1";

/// Layer names and shapes in storage order.
const LAYERS: [(&str, &[usize]); 15] = [
    ("conv1.weight", &[C1, 1, KSIZE, KSIZE]),
    ("conv1.bias", &[C1]),
    ("conv2.weight", &[C2, C1, KSIZE, KSIZE]),
    ("conv2.bias", &[C2]),
    ("softmax.temperature", &[1]),
    ("action1.weight", &[ACT_HIDDEN, ACTION_INPUT]),
    ("action1.bias", &[ACT_HIDDEN]),
    ("action2.weight", &[ACT_OUT, ACT_HIDDEN]),
    ("action2.bias", &[ACT_OUT]),
    ("dist1.weight", &[DIST_HIDDEN, DIST_IN]),
    ("dist1.bias", &[DIST_HIDDEN]),
    ("dist2.weight", &[DIST_HIDDEN, DIST_HIDDEN]),
    ("dist2.bias", &[DIST_HIDDEN]),
    ("dist3.weight", &[1, DIST_HIDDEN]),
    ("dist3.bias", &[1]),
];

const fn layer_len(shape: &[usize]) -> usize {
    let mut n = 1;
    let mut i = 0;
    while i < shape.len() {
        n *= shape[i];
        i += 1;
    }
    n
}

const fn total_params() -> usize {
    let mut n = 0;
    let mut i = 0;
    while i < LAYERS.len() {
        n += layer_len(LAYERS[i].1);
        i += 1;
    }
    n
}

pub const PARAM_COUNT: usize = total_params();

/// Layer views over a flat parameter vector.
struct Layers<T> {
    conv1_w: T,
    conv1_b: T,
    conv2_w: T,
    conv2_b: T,
    tau: T,
    act1_w: T,
    act1_b: T,
    act2_w: T,
    act2_b: T,
    dist1_w: T,
    dist1_b: T,
    dist2_w: T,
    dist2_b: T,
    dist3_w: T,
    dist3_b: T,
}

fn split(p: &[f64]) -> Layers<&[f64]> {
    let mut rest = p;
    let mut take = |i: usize| {
        let (head, tail) = rest.split_at(layer_len(LAYERS[i].1));
        rest = tail;
        head
    };
    Layers {
        conv1_w: take(0),
        conv1_b: take(1),
        conv2_w: take(2),
        conv2_b: take(3),
        tau: take(4),
        act1_w: take(5),
        act1_b: take(6),
        act2_w: take(7),
        act2_b: take(8),
        dist1_w: take(9),
        dist1_b: take(10),
        dist2_w: take(11),
        dist2_b: take(12),
        dist3_w: take(13),
        dist3_b: take(14),
    }
}

fn split_mut(p: &mut [f64]) -> Layers<&mut [f64]> {
    let mut rest = p;
    let mut take = |i: usize| {
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(layer_len(LAYERS[i].1));
        rest = tail;
        head
    };
    Layers {
        conv1_w: take(0),
        conv1_b: take(1),
        conv2_w: take(2),
        conv2_b: take(3),
        tau: take(4),
        act1_w: take(5),
        act1_b: take(6),
        act2_w: take(7),
        act2_b: take(8),
        dist1_w: take(9),
        dist1_b: take(10),
        dist2_w: take(11),
        dist2_b: take(12),
        dist3_w: take(13),
        dist3_b: take(14),
    }
}

/// Every parameter of the network, or a gradient with the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    params: Vec<f64>,
}

impl NetworkWeights {
    pub fn zeros() -> Self {
        NetworkWeights {
            params: vec![0.0; PARAM_COUNT],
        }
    }

    /// Fan-in scaled uniform initialization, temperature 1.
    pub fn init(seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, seed::Stream::WeightInit, 0));
        let mut w = NetworkWeights::zeros();
        {
            let l = split_mut(&mut w.params);
            let mut fill = |weights: &mut [f64], bias: &mut [f64], fan_in: usize| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in weights.iter_mut().chain(bias.iter_mut()) {
                    *v = rng.gen_range(-bound..bound);
                }
            };
            fill(l.conv1_w, l.conv1_b, KSIZE * KSIZE);
            fill(l.conv2_w, l.conv2_b, C1 * KSIZE * KSIZE);
            fill(l.act1_w, l.act1_b, ACTION_INPUT);
            fill(l.act2_w, l.act2_b, ACT_HIDDEN);
            fill(l.dist1_w, l.dist1_b, DIST_IN);
            fill(l.dist2_w, l.dist2_b, DIST_HIDDEN);
            fill(l.dist3_w, l.dist3_b, DIST_HIDDEN);
            l.tau[0] = 1.0;
        }
        w
    }

    pub fn from_flat(params: Vec<f64>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(Error::DimensionMismatch {
                expected: PARAM_COUNT,
                got: params.len(),
            });
        }
        let w = NetworkWeights { params };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        if let Some(i) = self.params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        if !(self.temperature() > 0.0) {
            return Err(Error::InvalidArgument("softmax temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn temperature(&self) -> f64 {
        split(&self.params).tau[0]
    }

    pub fn norm(&self) -> f64 {
        self.params.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `(name, values)` for each layer in storage order.
    pub fn layers(&self) -> impl Iterator<Item = (&'static str, &'static [usize], &[f64])> {
        let mut offset = 0;
        LAYERS.iter().map(move |&(name, shape)| {
            let n = layer_len(shape);
            let s = &self.params[offset..offset + n];
            offset += n;
            (name, shape, s)
        })
    }

    pub fn image_features(&self, image: &ContextImage) -> ImageFeatures {
        ImageFeatures(ImageForward::run(&split(&self.params), image).features)
    }

    /// Prediction from cached image features.
    pub fn predict_with_features(&self, features: &ImageFeatures, action: &[f64]) -> f64 {
        let input = pad_action(action);
        HeadForward::run(&split(&self.params), &features.0, &input).output
    }

    pub fn predict(&self, image: &ContextImage, action: &[f64]) -> f64 {
        predict_reward(self, image, action)
    }

    fn add_assign(&mut self, other: &NetworkWeights) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b;
        }
    }
}

/// Encoding of one context image (`z_im`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures(pub Vec<f64>);

pub fn init_weights(seed: u64) -> NetworkWeights {
    NetworkWeights::init(seed)
}

fn pad_action(a: &[f64]) -> [f64; ACTION_INPUT] {
    assert!(a.len() <= ACTION_INPUT, "action has {} components", a.len());
    let mut out = [0.0; ACTION_INPUT];
    out[..a.len()].copy_from_slice(a);
    out
}

/// Normalized coordinate of cell `i` on an axis of `n` cells, spanning [−1, 1].
fn grid_coord(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Softmax weights of one channel at temperature `tau`.
fn channel_softmax(map: &[f64], tau: f64, out: &mut [f64]) {
    let max = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
    let mut total = 0.0;
    for (o, &a) in out.iter_mut().zip(map) {
        *o = (a / tau - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Expected (x, y) location of each channel's activations. `maps` is
/// `channels × height × width`, row-major; the output is channel-major
/// `[x_0, y_0, x_1, y_1, ...]`.
pub fn spatial_softmax(maps: &[f64], channels: usize, height: usize, width: usize, tau: f64) -> Vec<f64> {
    assert_eq!(maps.len(), channels * height * width);
    assert!(height >= 1 && width >= 1 && tau > 0.0);
    let mut out = Vec::with_capacity(2 * channels);
    let mut s = vec![0.0; height * width];
    for c in 0..channels {
        channel_softmax(&maps[c * height * width..(c + 1) * height * width], tau, &mut s);
        let (mut x, mut y) = (0.0, 0.0);
        for i in 0..height {
            let yi = grid_coord(i, height);
            for j in 0..width {
                let w = s[i * width + j];
                x += w * grid_coord(j, width);
                y += w * yi;
            }
        }
        out.push(x);
        out.push(y);
    }
    out
}

/// Unrolls stride-2 3×3 patches of a `channels × size × size` input into a
/// `(channels·9) × out²` matrix, so each convolution is a dense product.
fn im2col(input: &[f64], channels: usize, size: usize, out: usize) -> Vec<f64> {
    let mut col = vec![0.0; channels * KSIZE * KSIZE * out * out];
    for c in 0..channels {
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let k = (c * KSIZE + ky) * KSIZE + kx;
                let dst = &mut col[k * out * out..(k + 1) * out * out];
                for oy in 0..out {
                    let src = &input[c * size * size + (STRIDE * oy + ky) * size + kx..];
                    for ox in 0..out {
                        dst[oy * out + ox] = src[STRIDE * ox];
                    }
                }
            }
        }
    }
    col
}

/// Inverse scatter of `im2col`: accumulates patch gradients into the input.
fn col2im(d_col: &[f64], channels: usize, size: usize, out: usize, d_input: &mut [f64]) {
    for c in 0..channels {
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let k = (c * KSIZE + ky) * KSIZE + kx;
                let src = &d_col[k * out * out..(k + 1) * out * out];
                for oy in 0..out {
                    let base = c * size * size + (STRIDE * oy + ky) * size + kx;
                    for ox in 0..out {
                        d_input[base + STRIDE * ox] += src[oy * out + ox];
                    }
                }
            }
        }
    }
}

/// `out[f] = b[f] + Σ_k w[f][k]·col[k]`, rows of length `n`.
fn conv_forward(w: &[f64], b: &[f64], col: &[f64], n: usize) -> Vec<f64> {
    let taps = col.len() / n;
    let mut out = vec![0.0; b.len() * n];
    for (f, o) in out.chunks_exact_mut(n).enumerate() {
        o.fill(b[f]);
        for (k, c) in col.chunks_exact(n).enumerate() {
            let wv = w[f * taps + k];
            for (ov, &cv) in o.iter_mut().zip(c) {
                *ov += wv * cv;
            }
        }
    }
    out
}

/// Accumulates `dW`, `db` and optionally `d col` from `d out`.
fn conv_backward(w: &[f64], col: &[f64], d_out: &[f64], n: usize, dw: &mut [f64], db: &mut [f64], mut d_col: Option<&mut [f64]>) {
    let taps = col.len() / n;
    for (f, d) in d_out.chunks_exact(n).enumerate() {
        db[f] += d.iter().sum::<f64>();
        for (k, c) in col.chunks_exact(n).enumerate() {
            dw[f * taps + k] += d.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(dc) = d_col.as_deref_mut() {
            for (k, dck) in dc.chunks_exact_mut(n).enumerate() {
                let wv = w[f * taps + k];
                for (x, &dv) in dck.iter_mut().zip(d) {
                    *x += wv * dv;
                }
            }
        }
    }
}

/// Activations of the image branch kept for the backward pass.
struct ImageForward {
    col1: Vec<f64>,
    h1_pre: Vec<f64>,
    col2: Vec<f64>,
    h2_pre: Vec<f64>,
    h2: Vec<f64>,
    softmax: Vec<f64>,
    features: Vec<f64>,
}

impl ImageForward {
    fn run(l: &Layers<&[f64]>, image: &ContextImage) -> Self {
        let col1 = im2col(image.pixels(), 1, H0, H1);
        let h1_pre = conv_forward(l.conv1_w, l.conv1_b, &col1, H1 * H1);
        let h1: Vec<f64> = h1_pre.iter().map(|&v| v.max(0.0)).collect();
        let col2 = im2col(&h1, C1, H1, H2);
        let h2_pre = conv_forward(l.conv2_w, l.conv2_b, &col2, H2 * H2);
        let h2: Vec<f64> = h2_pre.iter().map(|&v| v.max(0.0)).collect();

        let tau = l.tau[0];
        let mut softmax = vec![0.0; C2 * H2 * H2];
        let mut features = Vec::with_capacity(IMAGE_FEATURES);
        for c in 0..C2 {
            let s = &mut softmax[c * H2 * H2..(c + 1) * H2 * H2];
            channel_softmax(&h2[c * H2 * H2..(c + 1) * H2 * H2], tau, s);
            let (mut fx, mut fy) = (0.0, 0.0);
            for i in 0..H2 {
                let yi = grid_coord(i, H2);
                for j in 0..H2 {
                    let w = s[i * H2 + j];
                    fx += w * grid_coord(j, H2);
                    fy += w * yi;
                }
            }
            features.push(fx);
            features.push(fy);
        }
        ImageForward {
            col1,
            h1_pre,
            col2,
            h2_pre,
            h2,
            softmax,
            features,
        }
    }

    /// Accumulates parameter gradients given `d loss / d features`.
    fn backward(&self, l: &Layers<&[f64]>, d_features: &[f64], g: &mut Layers<&mut [f64]>) {
        let tau = l.tau[0];
        let mut d_h2_pre = vec![0.0; C2 * H2 * H2];
        let mut d_tau = 0.0;
        for c in 0..C2 {
            let (gx, gy) = (d_features[2 * c], d_features[2 * c + 1]);
            if gx == 0.0 && gy == 0.0 {
                continue;
            }
            let (fx, fy) = (self.features[2 * c], self.features[2 * c + 1]);
            let base = c * H2 * H2;
            for i in 0..H2 {
                let dy = grid_coord(i, H2) - fy;
                for j in 0..H2 {
                    let k = base + i * H2 + j;
                    // Gradient with respect to the softmax logit α/τ.
                    let d_logit = self.softmax[k] * (gx * (grid_coord(j, H2) - fx) + gy * dy);
                    d_tau -= d_logit * self.h2[k] / (tau * tau);
                    if self.h2_pre[k] > 0.0 {
                        d_h2_pre[k] = d_logit / tau;
                    }
                }
            }
        }
        g.tau[0] += d_tau;

        let mut d_col2 = vec![0.0; self.col2.len()];
        conv_backward(l.conv2_w, &self.col2, &d_h2_pre, H2 * H2, g.conv2_w, g.conv2_b, Some(&mut d_col2));
        let mut d_h1 = vec![0.0; C1 * H1 * H1];
        col2im(&d_col2, C1, H1, H2, &mut d_h1);
        for (d, &pre) in d_h1.iter_mut().zip(&self.h1_pre) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        conv_backward(l.conv1_w, &self.col1, &d_h1, H1 * H1, g.conv1_w, g.conv1_b, None);
    }
}

/// `out = W·x + b` with `W` stored `[out][in]`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, &bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Backward through an affine layer: accumulates `dW`, `db` and writes `dx`.
fn affine_backward(w: &[f64], x: &[f64], d_out: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let n_in = x.len();
    for (o, &d) in d_out.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        db[o] += d;
        for (g, &xi) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *g += d * xi;
        }
    }
    if let Some(dx) = dx {
        dx.fill(0.0);
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (g, &wv) in dx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *g += d * wv;
            }
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

struct HeadForward {
    action: [f64; ACTION_INPUT],
    a1_pre: [f64; ACT_HIDDEN],
    a1: [f64; ACT_HIDDEN],
    z: [f64; DIST_IN],
    d1_pre: [f64; DIST_HIDDEN],
    d1: [f64; DIST_HIDDEN],
    d2_pre: [f64; DIST_HIDDEN],
    d2: [f64; DIST_HIDDEN],
    output: f64,
}

impl HeadForward {
    fn run(l: &Layers<&[f64]>, features: &[f64], action: &[f64; ACTION_INPUT]) -> Self {
        let mut a1_pre = [0.0; ACT_HIDDEN];
        affine(l.act1_w, l.act1_b, action, &mut a1_pre);
        let mut a1 = a1_pre;
        relu_in_place(&mut a1);
        let mut z = [0.0; DIST_IN];
        z[..IMAGE_FEATURES].copy_from_slice(features);
        affine(l.act2_w, l.act2_b, &a1, &mut z[IMAGE_FEATURES..]);
        let mut d1_pre = [0.0; DIST_HIDDEN];
        affine(l.dist1_w, l.dist1_b, &z, &mut d1_pre);
        let mut d1 = d1_pre;
        relu_in_place(&mut d1);
        let mut d2_pre = [0.0; DIST_HIDDEN];
        affine(l.dist2_w, l.dist2_b, &d1, &mut d2_pre);
        let mut d2 = d2_pre;
        relu_in_place(&mut d2);
        let mut out = [0.0];
        affine(l.dist3_w, l.dist3_b, &d2, &mut out);
        HeadForward {
            action: *action,
            a1_pre,
            a1,
            z,
            d1_pre,
            d1,
            d2_pre,
            d2,
            output: out[0],
        }
    }

    /// Accumulates head gradients for `d loss / d output` and adds the
    /// gradient with respect to the image features into `d_features`.
    fn backward(&self, l: &Layers<&[f64]>, d_output: f64, g: &mut Layers<&mut [f64]>, d_features: &mut [f64]) {
        let mut d_d2 = [0.0; DIST_HIDDEN];
        affine_backward(l.dist3_w, &self.d2, &[d_output], g.dist3_w, g.dist3_b, Some(&mut d_d2));
        mask(&mut d_d2, &self.d2_pre);
        let mut d_d1 = [0.0; DIST_HIDDEN];
        affine_backward(l.dist2_w, &self.d1, &d_d2, g.dist2_w, g.dist2_b, Some(&mut d_d1));
        mask(&mut d_d1, &self.d1_pre);
        let mut d_z = [0.0; DIST_IN];
        affine_backward(l.dist1_w, &self.z, &d_d1, g.dist1_w, g.dist1_b, Some(&mut d_z));
        for (a, b) in d_features.iter_mut().zip(&d_z[..IMAGE_FEATURES]) {
            *a += b;
        }
        let mut d_a1 = [0.0; ACT_HIDDEN];
        affine_backward(l.act2_w, &self.a1, &d_z[IMAGE_FEATURES..], g.act2_w, g.act2_b, Some(&mut d_a1));
        mask(&mut d_a1, &self.a1_pre);
        affine_backward(l.act1_w, &self.action, &d_a1, g.act1_w, g.act1_b, None);
    }
}

fn mask(d: &mut [f64], pre: &[f64]) {
    for (g, &p) in d.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn predict_reward(w: &NetworkWeights, image: &ContextImage, action: &[f64]) -> f64 {
    let l = split(&w.params);
    let img = ImageForward::run(&l, image);
    HeadForward::run(&l, &img.features, &pad_action(action)).output
}

/// One supervised example. Samples that share an image should reference the
/// same `ContextImage` so the convolution runs once per distinct image.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub image: &'a ContextImage,
    pub action: &'a [f64],
    pub reward: f64,
}

/// Mean squared error over the batch and its gradient.
pub fn loss_and_gradient(w: &NetworkWeights, batch: &[Sample<'_>]) -> (f64, NetworkWeights) {
    assert!(!batch.is_empty(), "empty batch");
    let l = split(&w.params);
    let scale = 1.0 / batch.len() as f64;

    // Group by image identity, keeping first-appearance order.
    let mut groups: Vec<(&ContextImage, Vec<usize>)> = Vec::new();
    for (i, s) in batch.iter().enumerate() {
        match groups.iter_mut().find(|(img, _)| std::ptr::eq(*img, s.image)) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((s.image, vec![i])),
        }
    }

    let partials: Vec<(f64, NetworkWeights)> = groups
        .par_iter()
        .map(|(image, idx)| {
            let mut grad = NetworkWeights::zeros();
            let mut loss = 0.0;
            let img = ImageForward::run(&l, image);
            let mut d_features = [0.0; IMAGE_FEATURES];
            {
                let mut g = split_mut(&mut grad.params);
                for &i in idx {
                    let s = &batch[i];
                    let head = HeadForward::run(&l, &img.features, &pad_action(s.action));
                    let err = head.output - s.reward;
                    loss += err * err;
                    head.backward(&l, 2.0 * err * scale, &mut g, &mut d_features);
                }
                img.backward(&l, &d_features, &mut g);
            }
            (loss, grad)
        })
        .collect();

    let mut total = 0.0;
    let mut grad = NetworkWeights::zeros();
    for (loss, g) in &partials {
        total += loss;
        grad.add_assign(g);
    }
    (total * scale, grad)
}

/// Accumulated `(image, action, reward)` triples. Images are stored once per
/// mechanism.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    contexts: Vec<DatasetContext>,
    records: Vec<DatasetRecord>,
}

#[derive(Debug, Clone)]
pub struct DatasetContext {
    pub mech_seed: u64,
    pub kind: MechanismKind,
    pub image: ContextImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// Index into the dataset's contexts.
    pub context: usize,
    pub action: Vec<f64>,
    pub reward: f64,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a context and returns its index. Contexts are keyed by
    /// `(kind, mech_seed)`.
    pub fn add_context(&mut self, mech_seed: u64, kind: MechanismKind, image: ContextImage) -> usize {
        if let Some(i) = self
            .contexts
            .iter()
            .position(|c| c.mech_seed == mech_seed && c.kind == kind)
        {
            return i;
        }
        self.contexts.push(DatasetContext { mech_seed, kind, image });
        self.contexts.len() - 1
    }

    pub fn push(&mut self, context: usize, action: Vec<f64>, reward: f64) -> Result<()> {
        if context >= self.contexts.len() {
            return Err(Error::InvalidArgument(format!("unknown context {context}")));
        }
        if !(reward.is_finite() && reward >= 0.0) {
            return Err(Error::InvalidArgument(format!("reward {reward} must be finite and nonnegative")));
        }
        let bounds = crate::mechanism::action_bounds(self.contexts[context].kind);
        bounds.check(&action)?;
        self.records.push(DatasetRecord { context, action, reward });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contexts(&self) -> &[DatasetContext] {
        &self.contexts
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.reward)
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let r = &self.records[i];
        Sample {
            image: &self.contexts[r.context].image,
            action: &r.action,
            reward: r.reward,
        }
    }

    pub fn samples(&self) -> Vec<Sample<'_>> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Optional cap on optimizer steps per fit.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 40,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            max_steps: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.max_steps != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training schedule {self:?}")))
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const EPS: f64 = 1e-8;

    fn new() -> Self {
        Adam {
            m: vec![0.0; PARAM_COUNT],
            v: vec![0.0; PARAM_COUNT],
            t: 0,
        }
    }

    fn step(&mut self, w: &mut NetworkWeights, g: &NetworkWeights, s: &TrainSchedule) {
        self.t += 1;
        let c1 = 1.0 - s.beta1.powi(self.t);
        let c2 = 1.0 - s.beta2.powi(self.t);
        for i in 0..PARAM_COUNT {
            let gi = g.params[i];
            self.m[i] = s.beta1 * self.m[i] + (1.0 - s.beta1) * gi;
            self.v[i] = s.beta2 * self.v[i] + (1.0 - s.beta2) * gi * gi;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            w.params[i] -= s.learning_rate * m_hat / (v_hat.sqrt() + Self::EPS);
        }
        let tau = split_mut(&mut w.params).tau;
        tau[0] = tau[0].max(MIN_TEMPERATURE);
    }
}

/// Fine-tunes `w` on `data`. Returns the weights and the mean minibatch loss
/// of every epoch that ran.
pub fn fit_with_history(
    w: &NetworkWeights,
    data: &Dataset,
    sched: &TrainSchedule,
    seed: u64,
) -> Result<(NetworkWeights, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot fit on an empty dataset".into()));
    }
    sched.validate()?;
    let mut rng = seed::rng(seed::derive(seed, seed::Stream::Shuffle, 0));
    let mut weights = w.clone();
    let mut adam = Adam::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(sched.epochs);
    let mut steps = 0;
    'epochs: for epoch in 0..sched.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(sched.batch_size) {
            if sched.max_steps.is_some_and(|cap| steps >= cap) {
                if batches > 0 {
                    history.push(epoch_loss / batches as f64);
                }
                break 'epochs;
            }
            let batch: Vec<Sample<'_>> = chunk.iter().map(|&i| data.sample(i)).collect();
            let (loss, grad) = loss_and_gradient(&weights, &batch);
            if !loss.is_finite() || grad.params.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite loss {loss} at epoch {epoch}, step {steps}"
                )));
            }
            adam.step(&mut weights, &grad, sched);
            epoch_loss += loss;
            batches += 1;
            steps += 1;
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok((weights, history))
}

pub fn fit(w: &NetworkWeights, data: &Dataset, sched: &TrainSchedule, seed: u64) -> Result<NetworkWeights> {
    fit_with_history(w, data, sched, seed).map(|(w, _)| w)
}

/// Mean squared error of the network over the whole dataset.
pub fn dataset_mse(w: &NetworkWeights, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let features: Vec<ImageFeatures> = data.contexts.iter().map(|c| w.image_features(&c.image)).collect();
    data.records
        .iter()
        .map(|r| {
            let e = w.predict_with_features(&features[r.context], &r.action) - r.reward;
            e * e
        })
        .sum::<f64>()
        / data.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightsFile {
    version: String,
    arch: Vec<LayerDescriptor>,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerDescriptor {
    name: String,
    shape: Vec<usize>,
}

fn arch_descriptor() -> Vec<LayerDescriptor> {
    LAYERS
        .iter()
        .map(|&(name, shape)| LayerDescriptor {
            name: name.to_string(),
            shape: shape.to_vec(),
        })
        .collect()
}

impl NetworkWeights {
    pub fn to_json(&self) -> String {
        let file = WeightsFile {
            version: WEIGHTS_VERSION.to_string(),
            arch: arch_descriptor(),
            layers: self
                .layers()
                .map(|(name, shape, values)| LayerRecord {
                    name: name.to_string(),
                    shape: shape.to_vec(),
                    values: values.to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text).map_err(|e| Error::parse("weights file", e))?;
        if file.version != WEIGHTS_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: WEIGHTS_VERSION.to_string(),
            });
        }
        if file.arch != arch_descriptor() {
            return Err(Error::parse("weights file", "architecture descriptor mismatch"));
        }
        if file.layers.len() != LAYERS.len() {
            return Err(Error::parse("weights file", "wrong number of layers"));
        }
        let mut params = Vec::with_capacity(PARAM_COUNT);
        for (rec, &(name, shape)) in file.layers.iter().zip(LAYERS.iter()) {
            if rec.name != name || rec.shape != shape || rec.values.len() != layer_len(shape) {
                return Err(Error::parse("weights file", format!("layer {} has inconsistent shape", rec.name)));
            }
            params.extend_from_slice(&rec.values);
        }
        NetworkWeights::from_flat(params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
