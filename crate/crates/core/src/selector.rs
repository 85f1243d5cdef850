//! Soft importance distribution, stratified top-K selection and truncated
//! frame weights.
//!
//! Only the soft path ([`soft_distribution`], [`truncate_renormalize`]) has
//! gradients. [`stratified_topk`] is a hard, inference-only operator and has
//! no backward counterpart.

use serde::{Deserialize, Serialize};

use crate::error::{LfsError, Result};

/// Normalized logits, temperature and the resulting softmax distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceField {
    pub s_hat: Vec<f64>,
    pub tau: f64,
    pub p: Vec<f64>,
}

/// `p(t) = exp(ŝ(t)/τ) / Σ_j exp(ŝ(j)/τ)`, max-shifted for stability.
pub fn soft_distribution(s_hat: &[f64], tau: f64) -> Result<ImportanceField> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(LfsError::param(format!("temperature must be positive, got {tau}")));
    }
    if s_hat.is_empty() {
        return Err(LfsError::param("empty logit vector"));
    }
    let max = s_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = s_hat.iter().map(|v| ((v - max) / tau).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Ok(ImportanceField {
        s_hat: s_hat.to_vec(),
        tau,
        p,
    })
}

/// Pulls `∂L/∂p` back to `∂L/∂ŝ` through the softmax:
/// `∂L/∂ŝ_j = p_j/τ · (g_j − Σ_i p_i g_i)`.
pub fn softmax_backward(p: &[f64], tau: f64, grad_p: &[f64]) -> Vec<f64> {
    let avg: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    p.iter()
        .zip(grad_p)
        .map(|(pj, gj)| pj / tau * (gj - avg))
        .collect()
}

/// Shannon entropy in nats with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0)) {
        return Err(LfsError::data(format!("invalid probability {v}")));
    }
    Ok(-p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>())
}

/// `∂H(p)/∂ŝ` for `p = softmax(ŝ/τ)`: `−p_k (ln p_k + H) / τ`.
pub fn entropy_grad_logits(p: &[f64], tau: f64) -> Vec<f64> {
    let h: f64 = -p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>();
    p.iter()
        .map(|&v| if v > 0.0 { -v * (v.ln() + h) / tau } else { 0.0 })
        .collect()
}

/// Hard selection: one frame per temporal segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    /// Half-open `[start, end)` segments partitioning `[0, N)`.
    pub segments: Vec<(usize, usize)>,
    /// `ŝ` at each selected index.
    pub scores: Vec<f64>,
    /// Whether the first and last frame are part of the selection.
    pub endpoint_retained: [bool; 2],
}

impl SelectionResult {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Checks the structural contract: strictly increasing, one index per segment,
    /// segments tiling `[0, n)`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.indices.len() != self.segments.len() || self.indices.is_empty() {
            return Err(LfsError::data("selection must have one index per segment"));
        }
        let mut expect_start = 0;
        for (&idx, &(lo, hi)) in self.indices.iter().zip(&self.segments) {
            if lo != expect_start || hi <= lo || !(lo..hi).contains(&idx) {
                return Err(LfsError::data(format!("index {idx} outside segment [{lo}, {hi})")));
            }
            expect_start = hi;
        }
        if expect_start != n {
            return Err(LfsError::data("segments do not cover the timeline"));
        }
        if !self.indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(LfsError::data("indices not strictly increasing"));
        }
        Ok(())
    }
}

/// Boundaries `round(i·N/K)` for `i = 0..=K`, rounding halves up.
pub fn segment_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    let edge = |i: usize| (2 * i * n + k) / (2 * k);
    (0..k).map(|i| (edge(i), edge(i + 1))).collect()
}

/// Argmax of `ŝ` inside each of `K` near-equal segments, ties to the lowest
/// index. With `retain_endpoints` and `K ≥ 2` the first segment's pick becomes
/// frame 0 and the last segment's pick frame `N−1`.
pub fn stratified_topk(s_hat: &[f64], k: usize, retain_endpoints: bool) -> Result<SelectionResult> {
    let n = s_hat.len();
    if k < 1 {
        return Err(LfsError::param("budget K must be at least 1"));
    }
    if k > n {
        return Err(LfsError::param(format!("budget K={k} exceeds {n} frames")));
    }
    let segments = segment_bounds(n, k);
    let mut indices: Vec<usize> = segments
        .iter()
        .map(|&(lo, hi)| {
            (lo + 1..hi).fold(lo, |best, t| if s_hat[t] > s_hat[best] { t } else { best })
        })
        .collect();
    if retain_endpoints && k >= 2 {
        indices[0] = 0;
        indices[k - 1] = n - 1;
    }
    let scores = indices.iter().map(|&t| s_hat[t]).collect();
    let endpoint_retained = [indices[0] == 0, indices[k - 1] == n - 1];
    Ok(SelectionResult {
        indices,
        segments,
        scores,
        endpoint_retained,
    })
}

/// Top-M candidates of `p` with their renormalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameWeights {
    /// Frame indices by descending `p`, ties to the lower index.
    pub candidates: Vec<usize>,
    pub pre_norm: Vec<f64>,
    pub w: Vec<f64>,
    pub w_uni: Vec<f64>,
    mass: f64,
}

impl FrameWeights {
    /// `Σ pre_norm`, the candidate mass before renormalization.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Pulls `∂L/∂w` back to `∂L/∂pre_norm`: `(g_j − Σ_i w_i g_i) / Σ pre_norm`.
    pub fn backward(&self, grad_w: &[f64]) -> Vec<f64> {
        let avg: f64 = self.w.iter().zip(grad_w).map(|(a, b)| a * b).sum();
        grad_w.iter().map(|g| (g - avg) / self.mass).collect()
    }

    /// Scatters candidate-space gradients into an `n`-frame vector.
    pub fn scatter(&self, grad: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&t, &g) in self.candidates.iter().zip(grad) {
            out[t] += g;
        }
        out
    }
}

pub fn truncate_renormalize(p: &[f64], m_max: usize) -> Result<FrameWeights> {
    if m_max < 1 {
        return Err(LfsError::param("M_max must be at least 1"));
    }
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(LfsError::data("weights must be finite and non-negative"));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order.truncate(m_max.min(p.len()));
    let pre_norm: Vec<f64> = order.iter().map(|&t| p[t]).collect();
    let mass: f64 = pre_norm.iter().sum();
    if !(mass > 0.0) {
        return Err(LfsError::data("candidate mass is zero, cannot renormalize"));
    }
    let w = pre_norm.iter().map(|v| v / mass).collect();
    let m = order.len();
    Ok(FrameWeights {
        candidates: order,
        pre_norm,
        w,
        w_uni: vec![1.0 / m as f64; m],
        mass,
    })
}
