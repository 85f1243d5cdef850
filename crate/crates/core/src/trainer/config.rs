use serde::{Deserialize, Serialize};

use crate::error::{LfsError, Result};
use crate::tsnet::TSNetConfig;

/// Training hyperparameters. Defaults: AdamW at
/// `1e-4` learning rate and weight decay, five epochs at batch size one,
/// temperature annealed from 2.0 to 1.0, both regularizer weights at 0.01
/// and at most 16 frames per video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub lambda_l1: f64,
    pub lambda_ent: f64,
    /// Linearly decay the entropy weight to zero over the run.
    pub entropy_decay: bool,
    pub k_max: usize,
    pub m_max: usize,
    /// Global-norm gradient clip; `0` disables clipping.
    pub grad_clip: f64,
    pub retain_endpoints: bool,
    pub seed: u64,
    pub model: ModelConfig,
    pub toggles: Toggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 5,
            batch_size: 1,
            tau_start: 2.0,
            tau_end: 1.0,
            lambda_l1: 0.01,
            lambda_ent: 0.01,
            entropy_decay: false,
            k_max: 16,
            m_max: 32,
            grad_clip: 5.0,
            retain_endpoints: true,
            seed: 0,
            model: ModelConfig::default(),
            toggles: Toggles::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LfsError::param(m.to_owned()));
        if !(self.tau_end > 0.0) || !(self.tau_start >= self.tau_end) || !self.tau_start.is_finite() {
            return bad("need tau_start >= tau_end > 0");
        }
        if !(self.lambda_l1 >= 0.0) || !(self.lambda_ent >= 0.0) {
            return bad("regularizer weights must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size != 1 {
            return bad("only batch_size = 1 is supported");
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay non-negative");
        }
        if self.k_max == 0 || self.m_max == 0 {
            return bad("k_max and m_max must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        Ok(())
    }

    /// Network architecture for `dim`-wide embeddings with the ablation switches applied.
    pub fn net_config(&self, dim: usize) -> TSNetConfig {
        let m = &self.model;
        let mut net = TSNetConfig::with_hidden(dim, m.hidden);
        net.k1 = m.k1;
        net.k2 = m.k2;
        net.alpha = m.alpha;
        if let Some(mh) = m.mlp_hidden {
            net.mlp_hidden = mh;
        }
        net.eps = m.eps;
        net.mlp_gelu = m.mlp_gelu;
        net.gating = self.toggles.gating;
        net.normalize = self.toggles.norm;
        net.event_conv = self.toggles.event_conv;
        net
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub k1: usize,
    pub k2: usize,
    pub alpha: f64,
    /// Defaults to `hidden / 4`.
    pub mlp_hidden: Option<usize>,
    pub eps: f64,
    pub mlp_gelu: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            k1: 5,
            k2: 3,
            alpha: 1.0,
            mlp_hidden: None,
            eps: 1e-5,
            mlp_gelu: true,
        }
    }
}

/// Component switches; every combination is a valid run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    /// Segment-wise selection at inference; off means global top-K.
    pub stratified: bool,
    pub gating: bool,
    pub norm: bool,
    /// Second temporal convolution.
    pub event_conv: bool,
    pub caption_loss: bool,
    pub relative_baseline: bool,
    pub entropy_reg: bool,
    pub l1_reg: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            stratified: true,
            gating: true,
            norm: true,
            event_conv: true,
            caption_loss: true,
            relative_baseline: true,
            entropy_reg: true,
            l1_reg: true,
        }
    }
}

impl Toggles {
    pub const COUNT: usize = 8;

    /// Toggle set from the low `COUNT` bits of `mask`, in field order.
    pub fn from_bits(mask: u32) -> Self {
        let bit = |i: u32| mask & (1 << i) != 0;
        Self {
            stratified: bit(0),
            gating: bit(1),
            norm: bit(2),
            event_conv: bit(3),
            caption_loss: bit(4),
            relative_baseline: bit(5),
            entropy_reg: bit(6),
            l1_reg: bit(7),
        }
    }
}

/// The ablation variants of the full model, each a single switch flipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoStratified,
    NoEventConv,
    NoCaptionLoss,
    NoGating,
    NoNorm,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoStratified,
        Ablation::NoEventConv,
        Ablation::NoCaptionLoss,
        Ablation::NoGating,
        Ablation::NoNorm,
    ];

    pub fn toggles(self) -> Toggles {
        let mut t = Toggles::default();
        match self {
            Ablation::Full => {}
            Ablation::NoStratified => t.stratified = false,
            Ablation::NoEventConv => t.event_conv = false,
            Ablation::NoCaptionLoss => t.caption_loss = false,
            Ablation::NoGating => t.gating = false,
            Ablation::NoNorm => t.norm = false,
        }
        t
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoStratified => "no_stratified",
            Ablation::NoEventConv => "no_event_conv",
            Ablation::NoCaptionLoss => "no_caption_loss",
            Ablation::NoGating => "no_gating",
            Ablation::NoNorm => "no_norm",
        }
    }
}
