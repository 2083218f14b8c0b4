//! Order-sensitive bag encoder with exact gradients.
//!
//! ```text
//! x_t    = tanh(E[id_t] + P[t]) ⊙ mask_t      t < len
//! pooled = mean_t x_t
//! h      = W2ᵀ relu(W1ᵀ pooled + b1) + b2
//! score  = sigmoid(w · h + b)
//! ```
//!
//! `W1` is stored `d × m` and `W2` is `m × d`, both row-major. Padding
//! positions never enter the pool. The `tanh` matters: a plain sum of token and
//! position vectors would pool to `ΣE + ΣP`, which ignores token order.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    /// Inverted-dropout rate applied when a forward pass asks for noise.
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.dim == 0 || self.hidden == 0 || self.max_len == 0 {
            return Err(Error::Config(format!(
                "encoder sizes must be positive: vocab={} dim={} hidden={} max_len={}",
                self.vocab_size, self.dim, self.hidden, self.max_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

pub const TENSOR_NAMES: [&str; 8] = [
    "embedding",
    "position",
    "mlp.w1",
    "mlp.b1",
    "mlp.w2",
    "mlp.b2",
    "head.w",
    "head.b",
];

/// Trainable state. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub cfg: EncoderConfig,
    pub embedding: Vec<f64>,
    pub position: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Params {
    pub fn zeros(cfg: EncoderConfig) -> Self {
        let (v, d, m, l) = (cfg.vocab_size, cfg.dim, cfg.hidden, cfg.max_len);
        Self {
            cfg,
            embedding: vec![0.0; v * d],
            position: vec![0.0; l * d],
            w1: vec![0.0; d * m],
            b1: vec![0.0; m],
            w2: vec![0.0; m * d],
            b2: vec![0.0; d],
            head_w: vec![0.0; d],
            head_b: vec![0.0; 1],
        }
    }

    /// Weights and embeddings i.i.d. uniform on [-0.05, 0.05]; biases zero.
    pub fn init(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let mut rng = SplitMix64::new(seed);
        for t in [&mut p.embedding, &mut p.position, &mut p.w1, &mut p.w2, &mut p.head_w] {
            for x in t.iter_mut() {
                *x = rng.uniform(-INIT_RANGE, INIT_RANGE);
            }
        }
        Ok(p)
    }

    pub fn shapes(&self) -> [Vec<usize>; 8] {
        let c = &self.cfg;
        [
            vec![c.vocab_size, c.dim],
            vec![c.max_len, c.dim],
            vec![c.dim, c.hidden],
            vec![c.hidden],
            vec![c.hidden, c.dim],
            vec![c.dim],
            vec![c.dim],
            vec![1],
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            &self.embedding,
            &self.position,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.head_w,
            &self.head_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.embedding,
            &mut self.position,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        TENSOR_NAMES
            .iter()
            .zip(self.tensors())
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| *n)
    }

    fn same_shape(&self, other: &Params) -> bool {
        self.cfg.vocab_size == other.cfg.vocab_size
            && self.cfg.dim == other.cfg.dim
            && self.cfg.hidden == other.cfg.hidden
            && self.cfg.max_len == other.cfg.max_len
    }
}

/// Forward-pass cache consumed by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    ids: Vec<u32>,
    /// `len × d` inverted-dropout mask, entries in {0, 1/(1-p)}.
    mask: Option<Vec<f64>>,
    /// `len × d` values of tanh(E + P) before masking.
    xs: Vec<f64>,
    pooled: Vec<f64>,
    z1: Vec<f64>,
    h: Vec<f64>,
    score: f64,
}

impl Activations {
    pub fn mask(&self) -> Option<&[f64]> {
        self.mask.as_deref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub h: Vec<f64>,
    pub score: f64,
    pub acts: Activations,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Encodes `ids[..len]`. Passing an rng turns on dropout at the configured rate.
pub fn forward(params: &Params, ids: &[u32], len: usize, dropout: Option<&mut SplitMix64>) -> Result<Forward> {
    let c = &params.cfg;
    let (d, m) = (c.dim, c.hidden);
    if len == 0 {
        return Err(Error::InvalidInput("cannot encode an empty sequence".into()));
    }
    if len > c.max_len || len > ids.len() {
        return Err(Error::InvalidInput(format!(
            "sequence length {len} exceeds max_len {} or the {} ids supplied",
            c.max_len,
            ids.len()
        )));
    }
    let ids = &ids[..len];
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= c.vocab_size) {
        return Err(Error::InvalidInput(format!(
            "token id {bad} outside vocabulary of size {}",
            c.vocab_size
        )));
    }

    let mask = match dropout {
        Some(rng) if c.dropout > 0.0 => {
            let keep = 1.0 / (1.0 - c.dropout);
            Some(
                (0..len * d)
                    .map(|_| if rng.next_f64() < c.dropout { 0.0 } else { keep })
                    .collect::<Vec<f64>>(),
            )
        }
        _ => None,
    };

    let mut xs = vec![0.0; len * d];
    let mut pooled = vec![0.0; d];
    for (t, &id) in ids.iter().enumerate() {
        let e = &params.embedding[id as usize * d..(id as usize + 1) * d];
        let p = &params.position[t * d..(t + 1) * d];
        let x = &mut xs[t * d..(t + 1) * d];
        for k in 0..d {
            x[k] = (e[k] + p[k]).tanh();
            pooled[k] += match &mask {
                Some(mk) => x[k] * mk[t * d + k],
                None => x[k],
            };
        }
    }
    let inv = 1.0 / len as f64;
    pooled.iter_mut().for_each(|x| *x *= inv);

    let mut z1 = params.b1.clone();
    for (i, &x) in pooled.iter().enumerate() {
        let row = &params.w1[i * m..(i + 1) * m];
        for j in 0..m {
            z1[j] += x * row[j];
        }
    }
    let mut h = params.b2.clone();
    for (j, &z) in z1.iter().enumerate() {
        if z > 0.0 {
            let row = &params.w2[j * d..(j + 1) * d];
            for k in 0..d {
                h[k] += z * row[k];
            }
        }
    }
    let logit: f64 = params.head_b[0] + h.iter().zip(&params.head_w).map(|(a, b)| a * b).sum::<f64>();
    let score = sigmoid(logit);

    Ok(Forward {
        h: h.clone(),
        score,
        acts: Activations {
            ids: ids.to_vec(),
            mask,
            xs,
            pooled,
            z1,
            h,
            score,
        },
    })
}

/// Accumulates ∂(grad_h·h + grad_score·score)/∂θ into `grads`.
pub fn backward_into(
    params: &Params,
    acts: &Activations,
    grad_h: &[f64],
    grad_score: f64,
    grads: &mut Params,
) -> Result<()> {
    let c = &params.cfg;
    let (d, m) = (c.dim, c.hidden);
    if grad_h.len() != d || acts.h.len() != d || acts.z1.len() != m || !params.same_shape(grads) {
        return Err(Error::Shape(format!(
            "backward expects d={d}, m={m}; got grad_h of {} and cached h of {}",
            grad_h.len(),
            acts.h.len()
        )));
    }

    let s = acts.score;
    let g_logit = grad_score * s * (1.0 - s);
    grads.head_b[0] += g_logit;
    let mut g_h = grad_h.to_vec();
    for k in 0..d {
        grads.head_w[k] += g_logit * acts.h[k];
        g_h[k] += g_logit * params.head_w[k];
    }

    for k in 0..d {
        grads.b2[k] += g_h[k];
    }
    let mut g_z1 = vec![0.0; m];
    for j in 0..m {
        let z = acts.z1[j];
        if z > 0.0 {
            let row = &params.w2[j * d..(j + 1) * d];
            let grow = &mut grads.w2[j * d..(j + 1) * d];
            let mut acc = 0.0;
            for k in 0..d {
                grow[k] += z * g_h[k];
                acc += row[k] * g_h[k];
            }
            g_z1[j] = acc;
        }
    }

    let mut g_pooled = vec![0.0; d];
    for j in 0..m {
        grads.b1[j] += g_z1[j];
    }
    for i in 0..d {
        let row = &params.w1[i * m..(i + 1) * m];
        let grow = &mut grads.w1[i * m..(i + 1) * m];
        let x = acts.pooled[i];
        let mut acc = 0.0;
        for j in 0..m {
            grow[j] += x * g_z1[j];
            acc += row[j] * g_z1[j];
        }
        g_pooled[i] = acc;
    }

    let inv = 1.0 / acts.ids.len() as f64;
    let mut g_pre = vec![0.0; d];
    for (t, &id) in acts.ids.iter().enumerate() {
        let x = &acts.xs[t * d..(t + 1) * d];
        for k in 0..d {
            let mk = acts.mask.as_ref().map_or(1.0, |mk| mk[t * d + k]);
            g_pre[k] = g_pooled[k] * inv * mk * (1.0 - x[k] * x[k]);
        }
        let erow = &mut grads.embedding[id as usize * d..(id as usize + 1) * d];
        for k in 0..d {
            erow[k] += g_pre[k];
        }
        let prow = &mut grads.position[t * d..(t + 1) * d];
        for k in 0..d {
            prow[k] += g_pre[k];
        }
    }
    Ok(())
}

pub fn backward(params: &Params, acts: &Activations, grad_h: &[f64], grad_score: f64) -> Result<Params> {
    let mut grads = Params::zeros(params.cfg);
    backward_into(params, acts, grad_h, grad_score, &mut grads)?;
    Ok(grads)
}
