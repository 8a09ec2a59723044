use std::str::FromStr;

use rand::Rng;

use super::{Model, ModelKind};
use crate::error::Error;
use crate::util::Rng as SeededRng;

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    #[inline]
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "identity" | "linear" | "none" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Numerically stable softmax, in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `-ln p_y` with the probability floored at [`PROB_FLOOR`].
pub fn cross_entropy(p: &[f64], y: usize) -> f64 {
    -p[y].max(PROB_FLOOR).ln()
}

fn uniform_init(params: &mut [f64], fan_in: usize, rng: &mut SeededRng) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for p in params {
        *p = rng.random_range(-bound..bound);
    }
}

/// Softmax regression on the raw features; the embedding is the identity.
///
/// Parameters: `W` (c x d, row-major) then bias `b` (c).
#[derive(Debug, Clone)]
pub struct LinearSoftmax {
    d: usize,
    c: usize,
    params: Vec<f64>,
}

impl LinearSoftmax {
    pub fn zeros(d: usize, c: usize) -> Self {
        LinearSoftmax {
            d,
            c,
            params: vec![0.0; c * d + c],
        }
    }

    pub fn random(d: usize, c: usize, rng: &mut SeededRng) -> Self {
        let mut m = Self::zeros(d, c);
        m.reset_head(c, rng);
        m
    }

    pub(crate) fn from_params(d: usize, c: usize, params: Vec<f64>) -> Option<Self> {
        (params.len() == c * d + c).then_some(LinearSoftmax { d, c, params })
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let (w, b) = self.params.split_at(self.c * self.d);
        for k in 0..self.c {
            out[k] = b[k] + w[k * self.d..(k + 1) * self.d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl Model for LinearSoftmax {
    fn kind(&self) -> ModelKind {
        ModelKind::Linear
    }

    fn input_dim(&self) -> usize {
        self.d
    }

    fn embed_dim(&self) -> usize {
        self.d
    }

    fn num_classes(&self) -> usize {
        self.c
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn embed_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        self.logits(x, out);
        softmax_in_place(out);
    }

    fn accumulate_gradient(&self, x: &[f64], y: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let mut p = vec![0.0; self.c];
        self.probs_into(x, &mut p);
        let loss = cross_entropy(&p, y);
        let (gw, gb) = grad.split_at_mut(self.c * self.d);
        for k in 0..self.c {
            let delta = scale * (p[k] - if k == y { 1.0 } else { 0.0 });
            gb[k] += delta;
            for (g, xi) in gw[k * self.d..(k + 1) * self.d].iter_mut().zip(x) {
                *g += delta * xi;
            }
        }
        loss
    }

    fn reset_head(&mut self, c: usize, rng: &mut SeededRng) {
        self.c = c;
        self.params = vec![0.0; c * self.d + c];
        let d = self.d;
        uniform_init(&mut self.params, d, rng);
    }

    fn clone_box(&self) -> Box<dyn Model> {
        Box::new(self.clone())
    }
}

/// One learned embedding layer `h = act(E x + e)` followed by a softmax head.
///
/// Parameters: `E` (m x d), `e` (m), `W` (c x m), `b` (c), concatenated.
#[derive(Debug, Clone)]
pub struct EmbeddingSoftmax {
    d: usize,
    m: usize,
    c: usize,
    activation: Activation,
    params: Vec<f64>,
}

impl EmbeddingSoftmax {
    pub fn random(d: usize, m: usize, c: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let mut net = EmbeddingSoftmax {
            d,
            m,
            c,
            activation,
            params: vec![0.0; m * d + m + c * m + c],
        };
        uniform_init(&mut net.params[..m * d + m], d, rng);
        net.reset_head(c, rng);
        net
    }

    pub(crate) fn from_params(
        d: usize,
        m: usize,
        c: usize,
        activation: Activation,
        params: Vec<f64>,
    ) -> Option<Self> {
        (params.len() == m * d + m + c * m + c).then_some(EmbeddingSoftmax {
            d,
            m,
            c,
            activation,
            params,
        })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn head_offset(&self) -> usize {
        self.m * self.d + self.m
    }

    /// Pre-activations and activations of the embedding layer.
    fn hidden(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (e, rest) = self.params.split_at(self.m * self.d);
        let bias = &rest[..self.m];
        let z: Vec<f64> = (0..self.m)
            .map(|j| bias[j] + e[j * self.d..(j + 1) * self.d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let h = z.iter().map(|&v| self.activation.apply(v)).collect();
        (z, h)
    }

    fn head_probs(&self, h: &[f64], out: &mut [f64]) {
        let head = &self.params[self.head_offset()..];
        let (w, b) = head.split_at(self.c * self.m);
        for k in 0..self.c {
            out[k] = b[k] + w[k * self.m..(k + 1) * self.m].iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        }
        softmax_in_place(out);
    }
}

impl Model for EmbeddingSoftmax {
    fn kind(&self) -> ModelKind {
        ModelKind::Embedding {
            dim: self.m,
            activation: self.activation,
        }
    }

    fn input_dim(&self) -> usize {
        self.d
    }

    fn embed_dim(&self) -> usize {
        self.m
    }

    fn num_classes(&self) -> usize {
        self.c
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn embed_into(&self, x: &[f64], out: &mut [f64]) {
        let (_, h) = self.hidden(x);
        out.copy_from_slice(&h);
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        let (_, h) = self.hidden(x);
        self.head_probs(&h, out);
    }

    fn accumulate_gradient(&self, x: &[f64], y: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let (z, h) = self.hidden(x);
        let mut p = vec![0.0; self.c];
        self.head_probs(&h, &mut p);
        let loss = cross_entropy(&p, y);

        let off = self.head_offset();
        let w = &self.params[off..off + self.c * self.m];
        let (g_embed, g_head) = grad.split_at_mut(off);
        let (gw, gb) = g_head.split_at_mut(self.c * self.m);
        let mut dh = vec![0.0; self.m];
        for k in 0..self.c {
            let delta = scale * (p[k] - if k == y { 1.0 } else { 0.0 });
            gb[k] += delta;
            let wk = &w[k * self.m..(k + 1) * self.m];
            for j in 0..self.m {
                gw[k * self.m + j] += delta * h[j];
                dh[j] += delta * wk[j];
            }
        }
        let (ge, gbe) = g_embed.split_at_mut(self.m * self.d);
        for j in 0..self.m {
            let dz = dh[j] * self.activation.derivative(z[j], h[j]);
            if dz == 0.0 {
                continue;
            }
            gbe[j] += dz;
            for (g, xi) in ge[j * self.d..(j + 1) * self.d].iter_mut().zip(x) {
                *g += dz * xi;
            }
        }
        loss
    }

    fn reset_head(&mut self, c: usize, rng: &mut SeededRng) {
        let off = self.head_offset();
        self.c = c;
        self.params.truncate(off);
        self.params.resize(off + c * self.m + c, 0.0);
        let m = self.m;
        uniform_init(&mut self.params[off..], m, rng);
    }

    fn clone_box(&self) -> Box<dyn Model> {
        Box::new(self.clone())
    }
}
