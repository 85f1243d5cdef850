mod common;

use common::*;
use lfs_core::captioner::{verify_oracle, CaptionerOracle};
use lfs_core::embeddings::EmbeddingSequence;
use lfs_core::selector::{soft_distribution, softmax_backward};
use lfs_core::trainer::{caption_terms, compute_loss_with, LossOptions, TrainConfig};
use lfs_core::tsnet::{tsnet_backward, tsnet_forward, tsnet_init, TSNetConfig, TSNetParams};
use rand::Rng;

fn small_net(d: usize) -> TSNetConfig {
    TSNetConfig::with_hidden(d, 8)
}

/// Initialization with the zero gate layer replaced by noise so the gate
/// nonlinearity is exercised away from its resting point.
fn perturbed_init(cfg: &TSNetConfig, seed: u64) -> TSNetParams {
    let mut p = tsnet_init(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for v in p.gate2_w.iter_mut().chain(p.gate2_b.iter_mut()) {
        *v = 0.3 * r.sample::<f64, _>(rand_distr::StandardNormal);
    }
    p
}

fn linear_readout(params: &TSNetParams, cfg: &TSNetConfig, x: &EmbeddingSequence, c: &[f64]) -> f64 {
    let f = tsnet_forward(params, cfg, x).unwrap();
    f.s_hat.iter().zip(c).map(|(a, b)| a * b).sum()
}

fn audit_network(cfg: &TSNetConfig, seed: u64) {
    let (n, d) = (16, cfg.dim);
    let mut r = rng(seed);
    let x = random_embeddings(&mut r, "g", n, d);
    let c = normal_vec(&mut r, n);
    let params = perturbed_init(cfg, seed);
    let fwd = tsnet_forward(&params, cfg, &x).unwrap();
    let (grads, grad_x) = tsnet_backward(&params, cfg, &fwd.cache, &c).unwrap();

    let errs = audit_params(&params, &grads, 1e-3, |p| linear_readout(p, cfg, &x, &c));
    let (name, e) = worst(&errs);
    assert!(e < 1e-4, "seed {seed}: {name} relative error {e:.3e} ({errs:?})");

    let e = grad_x_error(&params, cfg, &x.to_f64(), n, d, &c, &grad_x);
    assert!(e < 1e-4, "seed {seed}: grad_x relative error {e:.3e}");
}

/// Input gradient check. Embeddings are stored as f32, so the step is a power
/// of two that every probe represents exactly.
fn grad_x_error(params: &TSNetParams, cfg: &TSNetConfig, xf: &[f64], n: usize, d: usize, c: &[f64], grad_x: &[f64]) -> f64 {
    let h = 1.0 / 256.0;
    let mut probe: Vec<f32> = xf.iter().map(|&v| v as f32).collect();
    let mut fd = Vec::with_capacity(xf.len());
    for i in 0..xf.len() {
        let orig = probe[i];
        let eval = |p: &Vec<f32>| {
            let xs = EmbeddingSequence::new("g", n, d, p.clone()).unwrap();
            linear_readout(params, cfg, &xs, c)
        };
        probe[i] = orig + h as f32;
        let up = eval(&probe);
        probe[i] = orig - h as f32;
        let dn = eval(&probe);
        probe[i] = orig;
        fd.push((up - dn) / (2.0 * h));
    }
    rel_error(&fd, grad_x)
}

#[test]
fn network_gradients_match_finite_differences_on_five_seeds() {
    for seed in 0..5 {
        audit_network(&small_net(8), seed);
    }
}

#[test]
fn network_gradients_under_every_architecture_switch() {
    let base = small_net(6);
    let variants = [
        TSNetConfig { gating: false, ..base.clone() },
        TSNetConfig { normalize: false, ..base.clone() },
        TSNetConfig { event_conv: false, ..base.clone() },
        TSNetConfig { mlp_gelu: false, ..base.clone() },
        TSNetConfig { k1: 3, k2: 5, alpha: 0.5, ..base.clone() },
    ];
    for (i, cfg) in variants.iter().enumerate() {
        audit_network(cfg, 100 + i as u64);
    }
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut r = rng(11);
    for trial in 0..20 {
        let n = 2 + trial % 9;
        let tau = 0.5 + trial as f64 * 0.1;
        let s = normal_vec(&mut r, n);
        let g = normal_vec(&mut r, n);
        let p = soft_distribution(&s, tau).unwrap().p;
        let analytic = softmax_backward(&p, tau, &g);
        let fd = fd_vector(&s, 1e-6, |v| {
            let q = soft_distribution(v, tau).unwrap().p;
            q.iter().zip(&g).map(|(a, b)| a * b).sum()
        });
        let e = rel_error(&fd, &analytic);
        assert!(e < 1e-6, "trial {trial}: {e:.3e}");
    }
}

#[test]
fn caption_chain_rule_on_p() {
    let mut r = rng(21);
    let cap = random_captioner(7, 5, 3);
    for (n, m_max) in [(12, 32), (12, 6), (20, 8)] {
        let ex = random_example(&mut r, n, 5, 7);
        let logits = normal_vec(&mut r, n);
        let p = soft_distribution(&logits, 1.0).unwrap().p;
        let terms = caption_terms(&p, &ex.embeddings, &ex.caption, &cap, m_max, false).unwrap();
        // Differentiate on the fixed candidate set: perturbing p by 1e-7
        // does not reorder the top-M when the gaps exceed it.
        let fd = fd_vector(&p, 1e-7, |q| {
            caption_terms(q, &ex.embeddings, &ex.caption, &cap, m_max, false)
                .unwrap()
                .cap
        });
        let e = rel_error(&fd, &terms.grad_p);
        assert!(e < 1e-4, "n={n} m={m_max}: {e:.3e}");
        for t in 0..n {
            if !terms.weights.candidates.contains(&t) {
                assert_eq!(terms.grad_p[t], 0.0);
            }
        }
    }
}

#[test]
fn full_objective_gradient_on_a_32_frame_video() {
    let cfg = TrainConfig::default();
    let mut r = rng(31);
    let ex = random_example(&mut r, 32, 8, 9);
    let cap = random_captioner(9, 8, 4);
    let net = TSNetConfig::with_hidden(8, 12);
    let params = perturbed_init(&net, 31);
    for tau in [2.0, 1.3, 1.0] {
        let opts = LossOptions::new(tau, &cfg);
        let eval = compute_loss_with(&params, &net, &ex, &cap, &cfg, &opts).unwrap();
        let grads = eval.grads.unwrap();
        let value = LossOptions {
            want_grads: false,
            ..opts
        };
        let errs = audit_params(&params, &grads, 1e-5, |p| {
            compute_loss_with(p, &net, &ex, &cap, &cfg, &value)
                .unwrap()
                .breakdown
                .total
        });
        let (name, e) = worst(&errs);
        assert!(e < 1e-4, "tau {tau}: {name} {e:.3e}");
    }
}

#[test]
fn toy_captioner_passes_its_own_audit() {
    for seed in 0..3 {
        let cap = random_captioner(11, 6, seed);
        let report = verify_oracle(&cap, 5, seed).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_error < 1e-5);
        assert_eq!(cap.feature_dim(), 6);
    }
}
