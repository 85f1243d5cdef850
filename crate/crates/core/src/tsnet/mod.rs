//! Temporal scoring network.
//!
//! Per video: a "same"-padded temporal convolution with GELU, a global
//! mean-pooled gate `1 + α·tanh(MLP(g))` rescaling every channel, a second
//! temporal convolution with GELU, a pointwise projection to one logit per
//! frame and per-video standardization of the logits.
//!
//! The reverse pass is written out by hand and returns exact gradients for
//! every parameter block and for the input embeddings.

mod checkpoint;
pub(crate) mod kernels;

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSequence;
use crate::error::{LfsError, Result};
use kernels::{add_column_sums, dot, window_matmul, window_matmul_grad_input, window_matmul_grad_w};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, LFSP_MAGIC, LFSP_VERSION};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    std_normal_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * INV_SQRT_2)
}

/// Architecture of the scoring network. The three boolean switches exist for
/// ablations; all default to on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TSNetConfig {
    pub dim: usize,
    pub hidden: usize,
    pub k1: usize,
    pub k2: usize,
    pub alpha: f64,
    pub mlp_hidden: usize,
    pub eps: f64,
    /// Global gated modulation of the first-layer features.
    pub gating: bool,
    /// Per-video standardization of the logits.
    pub normalize: bool,
    /// Second temporal convolution; when off the gated features feed the projection directly.
    pub event_conv: bool,
    /// GELU between the two gate MLP layers.
    pub mlp_gelu: bool,
}

impl TSNetConfig {
    pub fn new(dim: usize) -> Self {
        Self::with_hidden(dim, 256)
    }

    pub fn with_hidden(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            k1: 5,
            k2: 3,
            alpha: 1.0,
            mlp_hidden: (hidden / 4).max(1),
            eps: 1e-5,
            gating: true,
            normalize: true,
            event_conv: true,
            mlp_gelu: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.mlp_hidden == 0 {
            return Err(LfsError::param("dim, hidden and mlp_hidden must be positive"));
        }
        if self.k1.is_multiple_of(2) || self.k2.is_multiple_of(2) {
            return Err(LfsError::param(format!(
                "kernel widths must be odd, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        if !(self.eps > 0.0) || !self.alpha.is_finite() {
            return Err(LfsError::param("eps must be positive and alpha finite"));
        }
        Ok(())
    }

    fn shapes(&self) -> [usize; 10] {
        let (d, h, m) = (self.dim, self.hidden, self.mlp_hidden);
        [
            self.k1 * d * h,
            h,
            h * m,
            m,
            m * h,
            h,
            self.k2 * h * h,
            h,
            h,
            1,
        ]
    }
}

/// Names of the parameter blocks, in storage and checkpoint order.
pub const PARAM_BLOCKS: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "gate.fc1.weight",
    "gate.fc1.bias",
    "gate.fc2.weight",
    "gate.fc2.bias",
    "conv2.weight",
    "conv2.bias",
    "proj.weight",
    "proj.bias",
];

/// Trainable parameters. Layouts:
/// conv weights `[tap][in][out]`, dense weights `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TSNetParams {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub gate1_w: Vec<f64>,
    pub gate1_b: Vec<f64>,
    pub gate2_w: Vec<f64>,
    pub gate2_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
}

impl TSNetParams {
    pub fn zeros(cfg: &TSNetConfig) -> Self {
        let s = cfg.shapes();
        Self {
            conv1_w: vec![0.0; s[0]],
            conv1_b: vec![0.0; s[1]],
            gate1_w: vec![0.0; s[2]],
            gate1_b: vec![0.0; s[3]],
            gate2_w: vec![0.0; s[4]],
            gate2_b: vec![0.0; s[5]],
            conv2_w: vec![0.0; s[6]],
            conv2_b: vec![0.0; s[7]],
            proj_w: vec![0.0; s[8]],
            proj_b: vec![0.0; s[9]],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    pub fn blocks(&self) -> [&Vec<f64>; 10] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.gate1_w,
            &self.gate1_b,
            &self.gate2_w,
            &self.gate2_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.proj_w,
            &self.proj_b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.gate1_w,
            &mut self.gate1_b,
            &mut self.gate2_w,
            &mut self.gate2_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.proj_w,
            &mut self.proj_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, cfg: &TSNetConfig) -> bool {
        self.blocks()
            .iter()
            .zip(cfg.shapes())
            .all(|(b, n)| b.len() == n)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// SHA-256 over the little-endian bytes of every block, hex encoded.
    pub fn checksum(&self) -> String {
        let blocks = self.blocks();
        crate::digest::sha256_f64_blocks(blocks.iter().map(|b| b.as_slice()))
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for b in self.blocks() {
            h.write_usize(b.len());
            for v in b.iter() {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }
}

/// Draws conv, projection and first gate-layer entries uniformly in
/// `±1/√fan_in`; the last gate layer is all zeros so the gate starts at
/// exactly one.
pub fn tsnet_init(cfg: &TSNetConfig, seed: u64) -> Result<TSNetParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = TSNetParams::zeros(cfg);
    let mut fill = |buf: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in buf.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    };
    let (d, h) = (cfg.dim, cfg.hidden);
    fill(&mut p.conv1_w, d * cfg.k1);
    fill(&mut p.conv1_b, d * cfg.k1);
    fill(&mut p.gate1_w, h);
    fill(&mut p.gate1_b, h);
    fill(&mut p.conv2_w, h * cfg.k2);
    fill(&mut p.conv2_b, h * cfg.k2);
    fill(&mut p.proj_w, h);
    fill(&mut p.proj_b, h);
    Ok(p)
}

/// Intermediate activations kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    n: usize,
    fingerprint: u64,
    xpad: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    g: Vec<f64>,
    z1: Vec<f64>,
    u: Vec<f64>,
    z2: Vec<f64>,
    gate: Vec<f64>,
    m1pad: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    mean: f64,
    var: f64,
    s_hat: Vec<f64>,
}

impl ForwardCache {
    pub fn n_frames(&self) -> usize {
        self.n
    }

    /// Gate multiplier per hidden channel.
    pub fn gate(&self) -> &[f64] {
        &self.gate
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.var
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub s: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub cache: ForwardCache,
}

/// Standardizes logits with population variance: `(s − μ)/√(σ² + ε)`.
/// Returns the normalized vector with `μ` and `σ²`.
pub fn normalize_logits(s: &[f64], eps: f64) -> (Vec<f64>, f64, f64) {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    (s.iter().map(|v| (v - mean) * inv).collect(), mean, var)
}

pub fn tsnet_forward(params: &TSNetParams, cfg: &TSNetConfig, x: &EmbeddingSequence) -> Result<Forward> {
    if x.dim() != cfg.dim {
        return Err(LfsError::shape(format!(
            "embedding dim {} does not match network dim {}",
            x.dim(),
            cfg.dim
        )));
    }
    if !params.matches(cfg) {
        return Err(LfsError::shape("parameter shapes do not match config"));
    }
    let (n, d, h, m) = (x.n_frames(), cfg.dim, cfg.hidden, cfg.mlp_hidden);
    let half1 = cfg.k1 / 2;
    let half2 = cfg.k2 / 2;

    let mut xpad = vec![0.0; (n + cfg.k1 - 1) * d];
    for (dst, &src) in xpad[half1 * d..(half1 + n) * d].iter_mut().zip(x.data()) {
        *dst = f64::from(src);
    }

    let mut a1 = vec![0.0; n * h];
    window_matmul(&xpad, d, n, cfg.k1 * d, &params.conv1_w, &params.conv1_b, &mut a1);
    let h1: Vec<f64> = a1.iter().map(|&v| gelu(v)).collect();

    let mut g = vec![0.0; h];
    add_column_sums(&h1, h, &mut g);
    g.iter_mut().for_each(|v| *v /= n as f64);

    let (z1, u, z2, gate) = if cfg.gating {
        let mut z1 = params.gate1_b.clone();
        for (hi, &gv) in g.iter().enumerate() {
            for (zj, w) in z1.iter_mut().zip(&params.gate1_w[hi * m..(hi + 1) * m]) {
                *zj += gv * w;
            }
        }
        let u: Vec<f64> = if cfg.mlp_gelu {
            z1.iter().map(|&v| gelu(v)).collect()
        } else {
            z1.clone()
        };
        let mut z2 = params.gate2_b.clone();
        for (j, &uj) in u.iter().enumerate() {
            for (zh, w) in z2.iter_mut().zip(&params.gate2_w[j * h..(j + 1) * h]) {
                *zh += uj * w;
            }
        }
        let gate = z2.iter().map(|&v| 1.0 + cfg.alpha * v.tanh()).collect();
        (z1, u, z2, gate)
    } else {
        (Vec::new(), Vec::new(), Vec::new(), vec![1.0; h])
    };

    let mut m1pad = vec![0.0; (n + cfg.k2 - 1) * h];
    for (dst_row, src_row) in m1pad[half2 * h..(half2 + n) * h]
        .chunks_exact_mut(h)
        .zip(h1.chunks_exact(h))
    {
        for ((dst, &src), &gv) in dst_row.iter_mut().zip(src_row).zip(&gate) {
            *dst = src * gv;
        }
    }

    let (a2, h2) = if cfg.event_conv {
        let mut a2 = vec![0.0; n * h];
        window_matmul(&m1pad, h, n, cfg.k2 * h, &params.conv2_w, &params.conv2_b, &mut a2);
        let h2 = a2.iter().map(|&v| gelu(v)).collect();
        (a2, h2)
    } else {
        (Vec::new(), m1pad[half2 * h..(half2 + n) * h].to_vec())
    };

    let s: Vec<f64> = h2
        .chunks_exact(h)
        .map(|row| params.proj_b[0] + dot(&params.proj_w, row))
        .collect();

    let (s_hat, mean, var) = if cfg.normalize {
        normalize_logits(&s, cfg.eps)
    } else {
        (s.clone(), 0.0, 0.0)
    };

    let cache = ForwardCache {
        n,
        fingerprint: params.fingerprint(),
        xpad,
        a1,
        h1,
        g,
        z1,
        u,
        z2,
        gate,
        m1pad,
        a2,
        h2,
        mean,
        var,
        s_hat: s_hat.clone(),
    };
    Ok(Forward { s, s_hat, cache })
}

/// Reverse pass for `L = Σ_t grad_s_hat[t]·ŝ(t)`; returns parameter gradients
/// and `∂L/∂X` (`N × d`, row-major).
pub fn tsnet_backward(
    params: &TSNetParams,
    cfg: &TSNetConfig,
    cache: &ForwardCache,
    grad_s_hat: &[f64],
) -> Result<(TSNetParams, Vec<f64>)> {
    let (grads, gx) = backward_impl(params, cfg, cache, grad_s_hat, true)?;
    Ok((grads, gx.unwrap_or_default()))
}

/// Like [`tsnet_backward`] but skips the input gradient.
pub fn tsnet_backward_params(
    params: &TSNetParams,
    cfg: &TSNetConfig,
    cache: &ForwardCache,
    grad_s_hat: &[f64],
) -> Result<TSNetParams> {
    backward_impl(params, cfg, cache, grad_s_hat, false).map(|(g, _)| g)
}

fn backward_impl(
    params: &TSNetParams,
    cfg: &TSNetConfig,
    cache: &ForwardCache,
    grad_s_hat: &[f64],
    want_input: bool,
) -> Result<(TSNetParams, Option<Vec<f64>>)> {
    let n = cache.n;
    if grad_s_hat.len() != n {
        return Err(LfsError::shape(format!(
            "upstream gradient has {} entries for {n} frames",
            grad_s_hat.len()
        )));
    }
    if !params.matches(cfg) || cache.fingerprint != params.fingerprint() {
        return Err(LfsError::State(
            "forward cache was produced with different parameters".into(),
        ));
    }
    let (d, h, m) = (cfg.dim, cfg.hidden, cfg.mlp_hidden);
    let half2 = cfg.k2 / 2;
    let half1 = cfg.k1 / 2;
    let mut grads = params.zeros_like();

    // standardization: ds = r·(dŝ − mean(dŝ) − ŝ·mean(dŝ·ŝ))
    let ds: Vec<f64> = if cfg.normalize {
        let nf = n as f64;
        let r = 1.0 / (cache.var + cfg.eps).sqrt();
        let mean_g = grad_s_hat.iter().sum::<f64>() / nf;
        let mean_gx = grad_s_hat
            .iter()
            .zip(&cache.s_hat)
            .map(|(g, x)| g * x)
            .sum::<f64>()
            / nf;
        grad_s_hat
            .iter()
            .zip(&cache.s_hat)
            .map(|(g, x)| r * (g - mean_g - x * mean_gx))
            .collect()
    } else {
        grad_s_hat.to_vec()
    };

    grads.proj_b[0] = ds.iter().sum();
    let mut dh2 = vec![0.0; n * h];
    for (t, (&dst, row)) in ds.iter().zip(cache.h2.chunks_exact(h)).enumerate() {
        for (gw, &hv) in grads.proj_w.iter_mut().zip(row) {
            *gw += dst * hv;
        }
        for (o, &w) in dh2[t * h..(t + 1) * h].iter_mut().zip(&params.proj_w) {
            *o = dst * w;
        }
    }

    let dm1: Vec<f64> = if cfg.event_conv {
        let da2: Vec<f64> = dh2
            .iter()
            .zip(&cache.a2)
            .map(|(g, &a)| g * gelu_grad(a))
            .collect();
        add_column_sums(&da2, h, &mut grads.conv2_b);
        window_matmul_grad_w(&cache.m1pad, h, n, cfg.k2 * h, &da2, &mut grads.conv2_w);
        let mut dpad = vec![0.0; cache.m1pad.len()];
        window_matmul_grad_input(&da2, &params.conv2_w, h, n, cfg.k2 * h, &mut dpad);
        dpad[half2 * h..(half2 + n) * h].to_vec()
    } else {
        dh2
    };

    // m1 = h1 ⊙ gate
    let mut dh1 = vec![0.0; n * h];
    let mut dgate = vec![0.0; h];
    for ((dh_row, dm_row), h_row) in dh1
        .chunks_exact_mut(h)
        .zip(dm1.chunks_exact(h))
        .zip(cache.h1.chunks_exact(h))
    {
        for c in 0..h {
            dh_row[c] = dm_row[c] * cache.gate[c];
            dgate[c] += dm_row[c] * h_row[c];
        }
    }

    if cfg.gating {
        let dz2: Vec<f64> = dgate
            .iter()
            .zip(&cache.z2)
            .map(|(g, &z)| {
                let th = z.tanh();
                g * cfg.alpha * (1.0 - th * th)
            })
            .collect();
        grads.gate2_b.copy_from_slice(&dz2);
        let mut du = vec![0.0; m];
        for j in 0..m {
            let wrow = &params.gate2_w[j * h..(j + 1) * h];
            du[j] = dot(wrow, &dz2);
            for (gw, &dz) in grads.gate2_w[j * h..(j + 1) * h].iter_mut().zip(&dz2) {
                *gw = cache.u[j] * dz;
            }
        }
        let dz1: Vec<f64> = if cfg.mlp_gelu {
            du.iter().zip(&cache.z1).map(|(g, &z)| g * gelu_grad(z)).collect()
        } else {
            du
        };
        grads.gate1_b.copy_from_slice(&dz1);
        let inv_n = 1.0 / n as f64;
        for c in 0..h {
            let wrow = &params.gate1_w[c * m..(c + 1) * m];
            let dg = dot(wrow, &dz1);
            for (gw, &dz) in grads.gate1_w[c * m..(c + 1) * m].iter_mut().zip(&dz1) {
                *gw = cache.g[c] * dz;
            }
            // g = mean_t h1
            let share = dg * inv_n;
            for row in dh1.chunks_exact_mut(h) {
                row[c] += share;
            }
        }
    }

    let da1: Vec<f64> = dh1
        .iter()
        .zip(&cache.a1)
        .map(|(g, &a)| g * gelu_grad(a))
        .collect();
    add_column_sums(&da1, h, &mut grads.conv1_b);
    window_matmul_grad_w(&cache.xpad, d, n, cfg.k1 * d, &da1, &mut grads.conv1_w);

    let grad_x = if want_input {
        let mut dpad = vec![0.0; cache.xpad.len()];
        window_matmul_grad_input(&da1, &params.conv1_w, d, n, cfg.k1 * d, &mut dpad);
        Some(dpad[half1 * d..(half1 + n) * d].to_vec())
    } else {
        None
    };
    Ok((grads, grad_x))
}
