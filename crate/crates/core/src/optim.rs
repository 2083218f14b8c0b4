//! Adam with bias correction and a linearly decaying learning rate.

use crate::encoder::Params;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Params,
    pub second: Params,
}

impl Moments {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            first: Params::zeros(params.cfg),
            second: Params::zeros(params.cfg),
        }
    }
}

/// `base · (1 - step / total)`, floored at zero; `step` is zero-based.
pub fn decayed_lr(base: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    base * (1.0 - step as f64 / total_steps as f64).max(0.0)
}

/// One Adam update at zero-based `step` of `total_steps`.
pub fn optimizer_step(
    params: &mut Params,
    grads: &Params,
    moments: &mut Moments,
    step: u64,
    total_steps: u64,
    base_lr: f64,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient tensor {name}")));
    }
    let shapes_match = params
        .tensors()
        .iter()
        .zip(grads.tensors())
        .zip(moments.first.tensors())
        .zip(moments.second.tensors())
        .all(|(((p, g), m), v)| p.len() == g.len() && p.len() == m.len() && p.len() == v.len());
    if !shapes_match {
        return Err(Error::Shape("parameters, gradients and moments differ in shape".into()));
    }

    let lr = decayed_lr(base_lr, step, total_steps);
    let t = (step + 1) as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let Moments { first, second } = moments;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(first.tensors_mut())
        .zip(second.tensors_mut())
    {
        for k in 0..p.len() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Params, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
