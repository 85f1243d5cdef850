//! AdamW with decoupled weight decay.
//!
//! `θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)` with bias-corrected moments
//! `m̂ = m/(1 − β₁ᵗ)`, `v̂ = v/(1 − β₂ᵗ)`.

use crate::error::{LfsError, Result};
use crate::tsnet::TSNetParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: TSNetParams,
    pub v: TSNetParams,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: &TSNetParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Applies one update in place. Non-finite gradients abort the step before
/// anything is modified.
pub fn adamw_step(params: &mut TSNetParams, grads: &TSNetParams, state: &mut AdamWState, hyper: &AdamWHyper) -> Result<()> {
    if !grads.is_finite() {
        return Err(LfsError::Numerics(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(LfsError::shape("optimizer state does not match parameters"));
    }
    state.step += 1;
    let step = state.step;
    for (((theta, g), m), v) in params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut())
    {
        update_slice(theta, g, m, v, step, hyper);
    }
    Ok(())
}

pub(crate) fn update_slice(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], step: u64, h: &AdamWHyper) {
    let bc1 = 1.0 - h.beta1.powf(step as f64);
    let bc2 = 1.0 - h.beta2.powf(step as f64);
    for i in 0..theta.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= h.lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * theta[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // scalar reference written from the update rule directly
    fn reference(theta: f64, g: f64, m: f64, v: f64, t: i32, lr: f64, wd: f64) -> (f64, f64, f64) {
        let m1 = 0.9 * m + 0.1 * g;
        let v1 = 0.999 * v + 0.001 * g * g;
        let mh = m1 / (1.0 - 0.9f64.powi(t));
        let vh = v1 / (1.0 - 0.999f64.powi(t));
        (theta - lr * (mh / (vh.sqrt() + 1e-8) + wd * theta), m1, v1)
    }

    fn scalar(theta: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let mut th = [theta];
        let (mut m, mut v) = ([0.0], [0.0]);
        update_slice(&mut th, &[g], &mut m, &mut v, 1, &AdamWHyper::new(lr, wd));
        th[0]
    }

    #[test]
    fn hand_evaluated_first_step() {
        let out = scalar(1.0, 1.0, 0.1, 0.0);
        assert!((out - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((out - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decay_only_path() {
        assert!((scalar(1.0, 0.0, 0.1, 0.1) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let mut th = [0.7, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for step in 1..5 {
            update_slice(&mut th, &[0.0; 2], &mut m, &mut v, step, &AdamWHyper::new(0.1, 0.0));
        }
        assert_eq!(th, [0.7, -2.0]);
        assert_eq!(m, [0.0; 2]);
        assert_eq!(v, [0.0; 2]);
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10_000 {
            let theta = rng.random_range(-5.0..5.0);
            let g = rng.random_range(-3.0..3.0);
            let m0 = rng.random_range(-1.0..1.0);
            let v0: f64 = rng.random_range(0.0..2.0);
            let t = rng.random_range(1..200);
            let lr = rng.random_range(1e-5..1e-1);
            let wd = rng.random_range(0.0..0.1);
            let (e_th, e_m, e_v) = reference(theta, g, m0, v0, t, lr, wd);
            let mut th = [theta];
            let (mut m, mut v) = ([m0], [v0]);
            update_slice(&mut th, &[g], &mut m, &mut v, t as u64, &AdamWHyper::new(lr, wd));
            assert!((th[0] - e_th).abs() < 1e-12);
            assert!((m[0] - e_m).abs() < 1e-12);
            assert!((v[0] - e_v).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let cfg = crate::tsnet::TSNetConfig::with_hidden(2, 2);
        let mut params = crate::tsnet::tsnet_init(&cfg, 0).unwrap();
        let before = params.clone();
        let mut grads = params.zeros_like();
        grads.proj_b[0] = f64::NAN;
        let mut state = AdamWState::new(&params);
        let err = adamw_step(&mut params, &grads, &mut state, &AdamWHyper::new(0.1, 0.0));
        assert!(matches!(err, Err(LfsError::Numerics(_))));
        assert_eq!(params, before);
        assert_eq!(state.step, 0);
    }
}
