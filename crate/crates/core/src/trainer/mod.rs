//! Caption-guided training of the scoring network.
//!
//! Per video: `ŝ = TSNet(X)`, `p = softmax(ŝ/τ)`, the top-`m_max` frames of
//! `p` are renormalized into weights `w`, their embeddings are fused with `w`
//! and scored by the frozen captioner. The objective is
//!
//! ```text
//! L = [L_cap(w) − L_cap(w_uni)] + λ₀·‖pre_norm‖₁ − λ_ent·H(p)
//! ```
//!
//! where `w_uni` weights the same candidates equally and contributes no
//! gradient. Each term can be switched off through [`Toggles`].

mod adamw;
mod config;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, AdamWHyper, AdamWState, ADAM_EPS, BETA1, BETA2};
pub use config::{Ablation, ModelConfig, Toggles, TrainConfig};

use crate::captioner::{fuse_features, fuse_grad_weights, verify_oracle, CaptionerOracle};
use crate::embeddings::{CaptionRecord, EmbeddingSequence};
use crate::error::{LfsError, Result};
use crate::selector::{
    entropy, entropy_grad_logits, soft_distribution, softmax_backward, truncate_renormalize, FrameWeights,
};
use crate::synth::{derive_seed, SyntheticVideo};
use crate::tsnet::{tsnet_backward_params, tsnet_forward, tsnet_init, TSNetConfig, TSNetParams};

/// Linear temperature schedule from `tau_start` at step 0 to `tau_end` at
/// `total_steps`.
pub fn anneal_temperature(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(LfsError::param(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac)
}

/// The terms of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cap: f64,
    pub cap_uniform: f64,
    /// `cap − cap_uniform` with the relative baseline on, `cap` otherwise.
    pub cap_rel: f64,
    pub l1: f64,
    pub ent: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Objective assembled from the terms under `toggles`.
    pub fn assemble(&self, toggles: &Toggles, lambda_l1: f64, lambda_ent: f64) -> f64 {
        let mut total = 0.0;
        if toggles.caption_loss {
            total += self.cap_rel;
        }
        if toggles.l1_reg {
            total += lambda_l1 * self.l1;
        }
        if toggles.entropy_reg {
            total -= lambda_ent * self.ent;
        }
        total
    }
}

/// One training video: embeddings plus its caption.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub embeddings: EmbeddingSequence,
    pub caption: CaptionRecord,
}

impl From<SyntheticVideo> for TrainExample {
    fn from(v: SyntheticVideo) -> Self {
        Self {
            embeddings: v.embeddings,
            caption: v.caption,
        }
    }
}

impl From<&SyntheticVideo> for TrainExample {
    fn from(v: &SyntheticVideo) -> Self {
        Self {
            embeddings: v.embeddings.clone(),
            caption: v.caption.clone(),
        }
    }
}

/// Per-evaluation knobs beyond the config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub tau: f64,
    pub lambda_ent: f64,
    /// Test hook: fuse with `w_uni` in place of `w`.
    pub force_uniform: bool,
    pub want_grads: bool,
}

impl LossOptions {
    pub fn new(tau: f64, cfg: &TrainConfig) -> Self {
        Self {
            tau,
            lambda_ent: cfg.lambda_ent,
            force_uniform: false,
            want_grads: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub breakdown: LossBreakdown,
    pub grads: Option<TSNetParams>,
    pub weights: FrameWeights,
    pub p: Vec<f64>,
    pub s_hat: Vec<f64>,
}

/// Caption losses as a function of the soft distribution alone.
#[derive(Debug, Clone)]
pub struct CaptionTerms {
    pub cap: f64,
    pub cap_uniform: f64,
    /// `∂cap/∂p`, zero outside the candidate set.
    pub grad_p: Vec<f64>,
    pub weights: FrameWeights,
}

/// `p → truncate/renormalize → fuse → oracle`, with the gradient of the
/// weighted loss pulled back to `p`.
pub fn caption_terms(
    p: &[f64],
    frames: &EmbeddingSequence,
    caption: &CaptionRecord,
    oracle: &dyn CaptionerOracle,
    m_max: usize,
    force_uniform: bool,
) -> Result<CaptionTerms> {
    let weights = truncate_renormalize(p, m_max)?;
    let dim = frames.dim();
    let feats = frames.gather_rows(&weights.candidates);
    let used_w = if force_uniform { &weights.w_uni } else { &weights.w };
    let fused = fuse_features(&feats, dim, used_w)?;
    let (cap, grad_fused) = oracle.loss_and_grad(&fused.value, &caption.prompt_tokens, &caption.caption_tokens)?;
    let fused_uni = fuse_features(&feats, dim, &weights.w_uni)?;
    let (cap_uniform, _) = oracle.loss_and_grad(&fused_uni.value, &caption.prompt_tokens, &caption.caption_tokens)?;
    let grad_p = if force_uniform {
        vec![0.0; p.len()]
    } else {
        let gw = fuse_grad_weights(&feats, dim, &grad_fused);
        weights.scatter(&weights.backward(&gw), p.len())
    };
    Ok(CaptionTerms {
        cap,
        cap_uniform,
        grad_p,
        weights,
    })
}

/// Evaluates the objective for one video and, if asked, its gradient with
/// respect to every network parameter.
pub fn compute_loss_with(
    params: &TSNetParams,
    net: &TSNetConfig,
    example: &TrainExample,
    oracle: &dyn CaptionerOracle,
    cfg: &TrainConfig,
    opts: &LossOptions,
) -> Result<LossEval> {
    if oracle.feature_dim() != example.embeddings.dim() {
        return Err(LfsError::shape(format!(
            "captioner consumes {}-dim features, embeddings are {}-dim",
            oracle.feature_dim(),
            example.embeddings.dim()
        )));
    }
    let t = &cfg.toggles;
    let fwd = tsnet_forward(params, net, &example.embeddings)?;
    if fwd.s_hat.iter().any(|v| !v.is_finite()) {
        return Err(LfsError::Numerics(format!(
            "non-finite frame scores for {}",
            example.embeddings.video_id()
        )));
    }
    let field = soft_distribution(&fwd.s_hat, opts.tau)?;
    let p = &field.p;
    let n = p.len();

    let terms = caption_terms(p, &example.embeddings, &example.caption, oracle, cfg.m_max, opts.force_uniform)?;
    let l1: f64 = terms.weights.pre_norm.iter().map(|v| v.abs()).sum();
    let ent = entropy(p)?;
    let cap_rel = if t.relative_baseline {
        terms.cap - terms.cap_uniform
    } else {
        terms.cap
    };
    let mut breakdown = LossBreakdown {
        cap: terms.cap,
        cap_uniform: terms.cap_uniform,
        cap_rel,
        l1,
        ent,
        total: 0.0,
    };
    breakdown.total = breakdown.assemble(t, cfg.lambda_l1, opts.lambda_ent);

    let grads = if opts.want_grads {
        let mut grad_p = vec![0.0; n];
        if t.caption_loss {
            grad_p.copy_from_slice(&terms.grad_p);
        }
        if t.l1_reg {
            // pre_norm ≥ 0, so ‖pre_norm‖₁ is linear on the candidates
            for &c in &terms.weights.candidates {
                grad_p[c] += cfg.lambda_l1;
            }
        }
        let mut grad_s_hat = softmax_backward(p, opts.tau, &grad_p);
        if t.entropy_reg {
            for (g, e) in grad_s_hat.iter_mut().zip(entropy_grad_logits(p, opts.tau)) {
                *g -= opts.lambda_ent * e;
            }
        }
        Some(tsnet_backward_params(params, net, &fwd.cache, &grad_s_hat)?)
    } else {
        None
    };

    Ok(LossEval {
        breakdown,
        grads,
        weights: terms.weights,
        p: field.p,
        s_hat: fwd.s_hat,
    })
}

/// [`compute_loss_with`] at temperature `tau` with default options.
pub fn compute_loss(
    params: &TSNetParams,
    net: &TSNetConfig,
    example: &TrainExample,
    oracle: &dyn CaptionerOracle,
    cfg: &TrainConfig,
    tau: f64,
) -> Result<(LossBreakdown, TSNetParams)> {
    let eval = compute_loss_with(params, net, example, oracle, cfg, &LossOptions::new(tau, cfg))?;
    let grads = eval.grads.expect("gradients requested");
    Ok((eval.breakdown, grads))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub video_id: String,
    pub tau: f64,
    pub cap: f64,
    pub cap_uniform: f64,
    pub cap_rel: f64,
    pub l1: f64,
    pub ent: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step(&'a StepLog),
    EpochEnd { epoch: usize, params: &'a TSNetParams },
    /// Training stopped on a numerical failure; `params` is the last good state.
    Aborted { params: &'a TSNetParams, error: &'a LfsError },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TSNetConfig,
    pub params: TSNetParams,
    pub log: Vec<StepLog>,
    /// Mean `H(p)` over the steps of each epoch.
    pub epoch_entropy: Vec<f64>,
}

pub fn train(corpus: &[TrainExample], oracle: &dyn CaptionerOracle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(corpus, oracle, cfg, |_| {})
}

/// Trains from a fresh initialization seeded by `cfg.seed`, reporting
/// progress to `observer`.
pub fn train_with<F>(corpus: &[TrainExample], oracle: &dyn CaptionerOracle, cfg: &TrainConfig, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(TrainEvent<'_>),
{
    cfg.validate()?;
    let first = corpus
        .first()
        .ok_or_else(|| LfsError::param("training corpus is empty"))?;
    let dim = first.embeddings.dim();
    for ex in corpus {
        if ex.embeddings.dim() != dim {
            return Err(LfsError::shape(format!(
                "{} has dim {}, corpus dim is {dim}",
                ex.embeddings.video_id(),
                ex.embeddings.dim()
            )));
        }
        ex.caption.validate_for_training()?;
    }
    if oracle.feature_dim() != dim {
        return Err(LfsError::shape("captioner feature dim does not match embeddings"));
    }
    let audit = verify_oracle(oracle, 2, cfg.seed)?;
    if !audit.passed {
        return Err(LfsError::Oracle(format!(
            "captioner gradient audit failed (relative error {:.3e})",
            audit.max_rel_error
        )));
    }

    let net = cfg.net_config(dim);
    let mut params = tsnet_init(&net, cfg.seed)?;
    let mut state = AdamWState::new(&params);
    let hyper = AdamWHyper::new(cfg.lr, cfg.weight_decay);
    let total_steps = cfg.epochs * corpus.len();
    let schedule_len = total_steps.saturating_sub(1).max(1);

    let mut log = Vec::with_capacity(total_steps);
    let mut epoch_entropy = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut ent_sum = 0.0;
        for &idx in &order {
            let ex = &corpus[idx];
            let tau = anneal_temperature(step, schedule_len, cfg)?;
            let lambda_ent = if cfg.entropy_decay {
                cfg.lambda_ent * (1.0 - step as f64 / schedule_len as f64)
            } else {
                cfg.lambda_ent
            };
            let opts = LossOptions {
                lambda_ent,
                ..LossOptions::new(tau, cfg)
            };
            let result = compute_loss_with(&params, &net, ex, oracle, cfg, &opts).and_then(|eval| {
                if eval.breakdown.total.is_finite() {
                    Ok(eval)
                } else {
                    Err(LfsError::Numerics(format!(
                        "non-finite loss on {} at step {step}",
                        ex.embeddings.video_id()
                    )))
                }
            });
            let eval = match result {
                Ok(e) => e,
                Err(err) => {
                    if matches!(err, LfsError::Numerics(_)) {
                        observer(TrainEvent::Aborted {
                            params: &params,
                            error: &err,
                        });
                    }
                    return Err(err);
                }
            };
            let mut grads = eval.grads.expect("gradients requested");
            let grad_norm = grads.norm();
            let clipped = cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip;
            if clipped {
                grads.scale(cfg.grad_clip / grad_norm);
            }
            if let Err(err) = adamw_step(&mut params, &grads, &mut state, &hyper) {
                observer(TrainEvent::Aborted {
                    params: &params,
                    error: &err,
                });
                return Err(err);
            }
            let b = eval.breakdown;
            let entry = StepLog {
                step,
                epoch,
                video_id: ex.embeddings.video_id().to_owned(),
                tau,
                cap: b.cap,
                cap_uniform: b.cap_uniform,
                cap_rel: b.cap_rel,
                l1: b.l1,
                ent: b.ent,
                total: b.total,
                grad_norm,
                clipped,
            };
            observer(TrainEvent::Step(&entry));
            ent_sum += b.ent;
            log.push(entry);
            step += 1;
        }
        epoch_entropy.push(ent_sum / corpus.len() as f64);
        observer(TrainEvent::EpochEnd {
            epoch,
            params: &params,
        });
    }

    Ok(TrainOutcome {
        net,
        params,
        log,
        epoch_entropy,
    })
}
