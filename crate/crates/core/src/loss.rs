//! Supervised contrastive loss with a hard-negative penalty, binary
//! cross-entropy, and their weighted sum.
//!
//! For anchors `h_i`, positive views `h_i⁺` and hard negatives `h_i⁻`:
//!
//! ```text
//! L_SCL = -Σ_i log( exp(f(h_i, h_i⁺)/τ) / Z_i )
//! Z_i   = Σ_j exp(f(h_i, h_j⁺)/τ) + exp((f(h_i, h_j⁻) + α·[i = j])/τ)
//! L     = L_SCL + λ·L_CE
//! ```
//!
//! with `f` the cosine similarity.

use crate::error::{Error, Result};

pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// When false the contrastive term is skipped entirely (CE-only training).
    pub scl: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            alpha: 1.0,
            lambda: 1.0,
            scl: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.alpha >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "alpha and lambda must be non-negative, got {} and {}",
                self.alpha, self.lambda
            )));
        }
        Ok(())
    }
}

/// Aligned anchor, positive-view and hard-negative representations.
#[derive(Debug, Clone, PartialEq)]
pub struct RepBatch {
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

impl RepBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of {}- and {}-vectors", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 {
        return Err(Error::ZeroNorm("first argument".into()));
    }
    if nv == 0.0 {
        return Err(Error::ZeroNorm("second argument".into()));
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Unit vector and original norm.
fn normalized(v: &[f64], what: &str, i: usize) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm(format!("{what}[{i}]")));
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Loss value and its gradient with respect to every input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SclOutput {
    pub loss: f64,
    pub grad_anchors: Vec<Vec<f64>>,
    pub grad_positives: Vec<Vec<f64>>,
    pub grad_negatives: Vec<Vec<f64>>,
}

pub fn scl_loss(reps: &RepBatch, cfg: &LossConfig) -> Result<SclOutput> {
    let n = reps.len();
    if n == 0 {
        return Err(Error::InvalidInput("contrastive loss needs at least one anchor".into()));
    }
    if reps.positives.len() != n || reps.negatives.len() != n {
        return Err(Error::Shape(format!(
            "{n} anchors, {} positives, {} negatives",
            reps.positives.len(),
            reps.negatives.len()
        )));
    }
    let d = reps.anchors[0].len();
    for (what, list) in [("anchors", &reps.anchors), ("positives", &reps.positives), ("negatives", &reps.negatives)] {
        if let Some(i) = list.iter().position(|v| v.len() != d) {
            return Err(Error::Shape(format!("{what}[{i}] has dimension {}, expected {d}", list[i].len())));
        }
    }
    let unit = |list: &[Vec<f64>], what: &str| -> Result<Vec<(Vec<f64>, f64)>> {
        list.iter().enumerate().map(|(i, v)| normalized(v, what, i)).collect()
    };
    let a = unit(&reps.anchors, "anchors")?;
    let p = unit(&reps.positives, "positives")?;
    let q = unit(&reps.negatives, "negatives")?;
    let tau = cfg.temperature;

    // Gradients with respect to the unit vectors first.
    let mut ga = vec![vec![0.0; d]; n];
    let mut gp = vec![vec![0.0; d]; n];
    let mut gq = vec![vec![0.0; d]; n];
    let mut loss = 0.0;
    let mut logits = vec![0.0; 2 * n];
    for i in 0..n {
        for j in 0..n {
            logits[j] = dot(&a[i].0, &p[j].0) / tau;
            let penalty = if i == j { cfg.alpha } else { 0.0 };
            logits[n + j] = (dot(&a[i].0, &q[j].0) + penalty) / tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - logits[i];

        // dL_i/dlogit = softmax - onehot(i); dlogit/dcos = 1/τ.
        for j in 0..n {
            let wp = ((logits[j] - log_z).exp() - if i == j { 1.0 } else { 0.0 }) / tau;
            let wq = (logits[n + j] - log_z).exp() / tau;
            for k in 0..d {
                ga[i][k] += wp * p[j].0[k] + wq * q[j].0[k];
                gp[j][k] += wp * a[i].0[k];
                gq[j][k] += wq * a[i].0[k];
            }
        }
    }

    // Through normalization: ∂û/∂u = (I - ûûᵀ)/‖u‖.
    let project = |g: Vec<Vec<f64>>, units: &[(Vec<f64>, f64)]| -> Vec<Vec<f64>> {
        g.into_iter()
            .zip(units)
            .map(|(gi, (u, nrm))| {
                let radial = dot(&gi, u);
                gi.iter().zip(u).map(|(g, x)| (g - radial * x) / nrm).collect()
            })
            .collect()
    };
    Ok(SclOutput {
        loss,
        grad_anchors: project(ga, &a),
        grad_positives: project(gp, &p),
        grad_negatives: project(gq, &q),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    pub grad_scores: Vec<f64>,
    /// Scores that had to be clamped into [ε, 1-ε].
    pub clamped: usize,
}

/// Mean binary cross-entropy over probabilities.
pub fn bce_loss(scores: &[f64], labels: &[u8]) -> Result<BceOutput> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("cross-entropy over an empty batch".into()));
    }
    let count = scores.len() as f64;
    let mut loss = 0.0;
    let mut clamped = 0;
    let mut grad_scores = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        if !s.is_finite() {
            return Err(Error::NonFinite("score".into()));
        }
        let sc = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
        if sc != s {
            clamped += 1;
        }
        let y = f64::from(y);
        loss -= y * sc.ln() + (1.0 - y) * (1.0 - sc).ln();
        grad_scores.push((sc - y) / (sc * (1.0 - sc)) / count);
    }
    Ok(BceOutput {
        loss: loss / count,
        grad_scores,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalOutput {
    pub loss: f64,
    pub scl: Option<f64>,
    pub ce: f64,
    pub clamped: usize,
    /// Present when the contrastive term is enabled.
    pub scl_grads: Option<SclOutput>,
    /// ∂L/∂score for each entry of the CE inputs, λ already applied.
    pub grad_scores: Vec<f64>,
}

/// `L = L_SCL + λ·L_CE`. The CE term sees exactly the scores passed in; the
/// trainer decides which rows (anchors, negatives, optionally views) go there.
pub fn total_loss(reps: &RepBatch, scores: &[f64], labels: &[u8], cfg: &LossConfig) -> Result<TotalOutput> {
    cfg.validate()?;
    let scl = if cfg.scl { Some(scl_loss(reps, cfg)?) } else { None };
    let ce = bce_loss(scores, labels)?;
    let scl_value = scl.as_ref().map(|s| s.loss);
    Ok(TotalOutput {
        loss: scl_value.unwrap_or(0.0) + cfg.lambda * ce.loss,
        scl: scl_value,
        ce: ce.loss,
        clamped: ce.clamped,
        scl_grads: scl,
        grad_scores: ce.grad_scores.iter().map(|g| cfg.lambda * g).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(tau: f64, alpha: f64) -> LossConfig {
        LossConfig {
            temperature: tau,
            alpha,
            lambda: 1.0,
            scl: true,
        }
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_sim(&[3.0, -2.0], &[3.0, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let r = cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((r - 0.7071067811865476).abs() < 1e-15);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm(_))));
    }

    fn single() -> RepBatch {
        RepBatch {
            anchors: vec![vec![1.0, 0.0]],
            positives: vec![vec![1.0, 0.0]],
            negatives: vec![vec![0.0, 1.0]],
        }
    }

    #[test]
    fn closed_form_single_anchor() {
        let l = scl_loss(&single(), &cfg(1.0, 1.0)).unwrap().loss;
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = scl_loss(&single(), &cfg(1.0, 0.0)).unwrap().loss;
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_representation_is_an_error() {
        let mut r = single();
        r.negatives[0] = vec![0.0, 0.0];
        assert!(matches!(scl_loss(&r, &cfg(1.0, 1.0)), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn bce_cases() {
        let out = bce_loss(&[0.5], &[1]).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(out.loss, bce_loss(&[0.5], &[0]).unwrap().loss);
        let out = bce_loss(&[1.0], &[1]).unwrap();
        assert!(out.loss < 1e-11);
        assert_eq!(out.clamped, 1);
        assert!(bce_loss(&[0.5], &[1, 0]).is_err());
    }

    #[test]
    fn lambda_zero_is_pure_scl() {
        let mut c = cfg(0.5, 1.0);
        c.lambda = 0.0;
        let t = total_loss(&single(), &[0.3, 0.8], &[1, 0], &c).unwrap();
        assert_eq!(t.loss, scl_loss(&single(), &c).unwrap().loss);
        assert!(t.grad_scores.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scl_disabled_is_pure_ce() {
        let mut c = cfg(0.5, 1.0);
        c.scl = false;
        let t = total_loss(&single(), &[0.3, 0.8], &[1, 0], &c).unwrap();
        assert_eq!(t.loss, bce_loss(&[0.3, 0.8], &[1, 0]).unwrap().loss);
        assert!(t.scl_grads.is_none());
    }

    #[test]
    fn stable_at_small_temperature() {
        let r = RepBatch {
            anchors: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            positives: vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
            negatives: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let out = scl_loss(&r, &cfg(0.01, 1.0)).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.grad_anchors.iter().flatten().all(|g| g.is_finite()));
    }
}
