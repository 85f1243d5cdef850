//! Frozen captioner oracles and the weighted feature-fusion hook.
//!
//! The trainer only ever sees a captioner through [`CaptionerOracle`]: given a
//! fused visual feature and a token sequence it returns the teacher-forced
//! caption loss and the loss gradient with respect to the feature. Oracles are
//! immutable; nothing in this crate holds a mutable reference to one.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::embeddings::{put_f64s, ByteCursor, CaptionRecord};
use crate::error::{LfsError, Result};
use crate::synth::CenterLayout;
use crate::tsnet::kernels::dot;

/// Token id that precedes the first position of every sequence.
pub const BOS: u32 = 0;

pub trait CaptionerOracle: Send + Sync {
    /// Length of the fused feature the oracle consumes.
    fn feature_dim(&self) -> usize;

    fn vocab_size(&self) -> u32;

    /// Teacher-forced loss over the caption tokens and its gradient with
    /// respect to `fused`.
    fn loss_and_grad(&self, fused: &[f64], prompt: &[u32], caption: &[u32]) -> Result<(f64, Vec<f64>)>;

    /// Digest of the frozen parameters; empty when the oracle cannot expose one.
    fn checksum(&self) -> String {
        String::new()
    }
}

/// `F^fused = Σ_t w_t F_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    pub value: Vec<f64>,
}

/// Fuses `T × D` per-frame features (row-major) with weights summing to one.
pub fn fuse_features(frames: &[f64], dim: usize, w: &[f64]) -> Result<FusedFeature> {
    if dim == 0 || frames.len() != w.len() * dim {
        return Err(LfsError::shape(format!(
            "{} feature values cannot be {} rows of width {dim}",
            frames.len(),
            w.len()
        )));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(LfsError::data(format!("fusion weights sum to {total}, expected 1")));
    }
    let mut value = vec![0.0; dim];
    for (row, &wt) in frames.chunks_exact(dim).zip(w) {
        for (v, f) in value.iter_mut().zip(row) {
            *v += wt * f;
        }
    }
    Ok(FusedFeature { value })
}

/// `∂L/∂w_t = F_t · ∂L/∂F^fused`.
pub fn fuse_grad_weights(frames: &[f64], dim: usize, grad_fused: &[f64]) -> Vec<f64> {
    frames.chunks_exact(dim).map(|row| dot(row, grad_fused)).collect()
}

/// `∂L/∂F_t = w_t · ∂L/∂F^fused`, as a `T × D` matrix.
pub fn fuse_grad_frames(w: &[f64], grad_fused: &[f64]) -> Vec<f64> {
    w.iter()
        .flat_map(|&wt| grad_fused.iter().map(move |g| wt * g))
        .collect()
}

/// Role of a token position in a teacher-forced sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Prompt,
    Caption,
    Pad,
}

/// Visual-bias bigram captioner:
/// `logits(i) = R·F^fused + B[y_{i−1}] + b`, with `y_{i−1}` the previous
/// non-padding token (or [`BOS`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCaptioner {
    vocab_size: u32,
    dim: usize,
    readout: Vec<f64>,
    bigram: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyCaptioner {
    pub fn new(vocab_size: u32, dim: usize, readout: Vec<f64>, bigram: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let v = vocab_size as usize;
        if v == 0 || dim == 0 {
            return Err(LfsError::param("vocab_size and dim must be positive"));
        }
        if readout.len() != v * dim || bigram.len() != v * v || bias.len() != v {
            return Err(LfsError::shape("captioner matrices do not match V and D"));
        }
        if readout.iter().chain(&bigram).chain(&bias).any(|x| !x.is_finite()) {
            return Err(LfsError::data("captioner parameters must be finite"));
        }
        Ok(Self {
            vocab_size,
            dim,
            readout,
            bigram,
            bias,
        })
    }

    pub fn zeros(vocab_size: u32, dim: usize) -> Result<Self> {
        let v = vocab_size as usize;
        Self::new(vocab_size, dim, vec![0.0; v * dim], vec![0.0; v * v], vec![0.0; v])
    }

    /// Gaussian entries with standard deviation `scale`.
    pub fn random(vocab_size: u32, dim: usize, seed: u64, scale: f64) -> Result<Self> {
        let v = vocab_size as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect::<Vec<f64>>()
        };
        let readout = draw(v * dim);
        let bigram = draw(v * v);
        let bias = draw(v);
        Self::new(vocab_size, dim, readout, bigram, bias)
    }

    /// A captioner that "recognizes" the synthetic event clusters: row `v` of
    /// the readout is `gain·c(v)/‖c(v)‖²`, so a fused feature equal to the
    /// token's center raises that token's logit by `gain`. The background and
    /// [`BOS`] rows are zero; the bigram table holds small seeded noise.
    pub fn aligned(layout: &CenterLayout, gain: f64, seed: u64) -> Result<Self> {
        let v = layout.slots();
        let dim = layout.dim();
        let mut readout = vec![0.0; v * dim];
        for tok in 1..v {
            let c = layout.center(tok);
            let sq: f64 = c.iter().map(|x| x * x).sum();
            for (r, &x) in readout[tok * dim..(tok + 1) * dim].iter_mut().zip(c) {
                *r = gain * x / sq;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bigram = (0..v * v).map(|_| rng.random_range(-0.1..0.1)).collect();
        Self::new(v as u32, dim, readout, bigram, vec![0.0; v])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn readout(&self) -> &[f64] {
        &self.readout
    }

    pub fn bigram(&self) -> &[f64] {
        &self.bigram
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Loss summed over `Caption` positions of `tokens`.
    pub fn loss_with_roles(&self, fused: &[f64], tokens: &[u32], roles: &[TokenRole]) -> Result<(f64, Vec<f64>)> {
        if fused.len() != self.dim {
            return Err(LfsError::shape(format!(
                "fused feature has {} values, captioner expects {}",
                fused.len(),
                self.dim
            )));
        }
        if tokens.len() != roles.len() {
            return Err(LfsError::shape("tokens and roles differ in length"));
        }
        let v = self.vocab_size as usize;
        if !roles.contains(&TokenRole::Caption) {
            return Err(LfsError::data("no caption tokens to score"));
        }
        let visual: Vec<f64> = self
            .readout
            .chunks_exact(self.dim)
            .map(|row| dot(row, fused))
            .collect();

        let mut loss = 0.0;
        let mut grad_visual = vec![0.0; v];
        let mut logits = vec![0.0; v];
        let mut prev = BOS;
        for (&tok, &role) in tokens.iter().zip(roles) {
            if role == TokenRole::Pad {
                continue;
            }
            if tok >= self.vocab_size {
                return Err(LfsError::data(format!("token {tok} outside vocabulary")));
            }
            if role == TokenRole::Caption {
                let brow = &self.bigram[prev as usize * v..(prev as usize + 1) * v];
                for (((l, a), b), c) in logits.iter_mut().zip(&visual).zip(brow).zip(&self.bias) {
                    *l = a + b + c;
                }
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                let lse = max + z.ln();
                loss += lse - logits[tok as usize];
                for (g, l) in grad_visual.iter_mut().zip(&logits) {
                    *g += (l - lse).exp();
                }
                grad_visual[tok as usize] -= 1.0;
            }
            prev = tok;
        }

        let mut grad = vec![0.0; self.dim];
        for (row, &g) in self.readout.chunks_exact(self.dim).zip(&grad_visual) {
            if g != 0.0 {
                for (o, r) in grad.iter_mut().zip(row) {
                    *o += g * r;
                }
            }
        }
        Ok((loss, grad))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 8 * (self.readout.len() + self.bigram.len() + self.bias.len()));
        buf.extend_from_slice(LFSC_MAGIC);
        buf.extend_from_slice(&self.vocab_size.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        put_f64s(&mut buf, &self.readout);
        put_f64s(&mut buf, &self.bigram);
        put_f64s(&mut buf, &self.bias);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != LFSC_MAGIC {
            return Err(LfsError::format("bad LFSC magic"));
        }
        let v = cur.u32()?;
        let d = cur.u32()? as usize;
        let vu = v as usize;
        let expected = 8 * (vu * d + vu * vu + vu);
        if cur.remaining() != expected {
            return Err(LfsError::format(format!(
                "captioner payload is {} bytes, V={v} D={d} needs {expected}",
                cur.remaining()
            )));
        }
        let readout = cur.f64_vec(vu * d)?;
        let bigram = cur.f64_vec(vu * vu)?;
        let bias = cur.f64_vec(vu)?;
        Self::new(v, d, readout, bigram, bias)
    }
}

/// LFSC layout: magic, `V: u32`, `D: u32`, then readout `V×D`, bigram `V×V`
/// and bias `V`, all `f64` little-endian.
pub const LFSC_MAGIC: &[u8; 4] = b"LFSC";

pub fn write_captioner(cap: &ToyCaptioner, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, cap.to_bytes())?;
    Ok(())
}

pub fn read_captioner(path: impl AsRef<Path>) -> Result<ToyCaptioner> {
    ToyCaptioner::from_bytes(&fs::read(path)?)
}

impl CaptionerOracle for ToyCaptioner {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn loss_and_grad(&self, fused: &[f64], prompt: &[u32], caption: &[u32]) -> Result<(f64, Vec<f64>)> {
        if caption.is_empty() {
            return Err(LfsError::data("empty caption"));
        }
        let tokens: Vec<u32> = prompt.iter().chain(caption).copied().collect();
        let roles: Vec<TokenRole> = std::iter::repeat_n(TokenRole::Prompt, prompt.len())
            .chain(std::iter::repeat_n(TokenRole::Caption, caption.len()))
            .collect();
        self.loss_with_roles(fused, &tokens, &roles)
    }

    fn checksum(&self) -> String {
        crate::digest::sha256_bytes(&self.to_bytes())
    }
}

/// Masked caption cross-entropy of the toy captioner for one record.
pub fn toy_caption_loss(cap: &ToyCaptioner, fused: &FusedFeature, rec: &CaptionRecord) -> Result<(f64, Vec<f64>)> {
    cap.loss_and_grad(&fused.value, &rec.prompt_tokens, &rec.caption_tokens)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub trials: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Tolerance on the relative gradient error for an oracle to pass.
pub const ORACLE_TOLERANCE: f64 = 1e-4;

/// Audits an oracle's gradient against central differences on random fused
/// features and token sequences.
pub fn verify_oracle(oracle: &dyn CaptionerOracle, trials: usize, seed: u64) -> Result<OracleReport> {
    let dim = oracle.feature_dim();
    let vocab = oracle.vocab_size().max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let finite = |loss: f64, grad: &[f64]| -> Result<()> {
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(LfsError::Oracle("oracle returned a non-finite value".into()));
        }
        if grad.len() != dim {
            return Err(LfsError::Oracle(format!(
                "gradient has {} entries, feature dim is {dim}",
                grad.len()
            )));
        }
        Ok(())
    };
    for _ in 0..trials {
        let fused: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let prompt: Vec<u32> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..vocab)).collect();
        let caption: Vec<u32> = (0..rng.random_range(1..6)).map(|_| rng.random_range(1..vocab)).collect();
        let (loss, grad) = oracle.loss_and_grad(&fused, &prompt, &caption)?;
        finite(loss, &grad)?;
        let mut err: f64 = 0.0;
        let mut scale: f64 = 1e-6;
        let mut probe = fused.clone();
        for k in 0..dim {
            probe[k] = fused[k] + h;
            let (up, _) = oracle.loss_and_grad(&probe, &prompt, &caption)?;
            probe[k] = fused[k] - h;
            let (dn, _) = oracle.loss_and_grad(&probe, &prompt, &caption)?;
            probe[k] = fused[k];
            if !up.is_finite() || !dn.is_finite() {
                return Err(LfsError::Oracle("oracle returned a non-finite value".into()));
            }
            let fd = (up - dn) / (2.0 * h);
            err = err.max((fd - grad[k]).abs());
            scale = scale.max(fd.abs()).max(grad[k].abs());
        }
        worst = worst.max(err / scale);
    }
    Ok(OracleReport {
        trials,
        max_rel_error: worst,
        passed: worst < ORACLE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(prompt: Vec<u32>, caption: Vec<u32>, v: u32) -> CaptionRecord {
        CaptionRecord {
            video_id: "r".into(),
            prompt_tokens: prompt,
            caption_tokens: caption,
            vocab_size: v,
        }
    }

    #[test]
    fn fusion_examples() {
        let f = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(fuse_features(&f, 2, &[0.25, 0.75]).unwrap().value, vec![0.25, 0.75]);
        assert_eq!(fuse_features(&f, 2, &[0.0, 1.0]).unwrap().value, vec![0.0, 1.0]);
        let g = [2.0, 4.0, 6.0, 8.0, 1.0, 3.0];
        let third = 1.0 / 3.0;
        let m = fuse_features(&g, 2, &[third, third, third]).unwrap().value;
        assert!((m[0] - 3.0).abs() < 1e-12 && (m[1] - 5.0).abs() < 1e-12);
        assert!(matches!(fuse_features(&g, 2, &[0.5, 0.5]), Err(LfsError::Shape(_))));
    }

    #[test]
    fn fusion_gradients() {
        let f = [1.0, 2.0, -1.0, 0.5];
        assert_eq!(fuse_grad_weights(&f, 2, &[2.0, 1.0]), vec![4.0, -1.5]);
        assert_eq!(fuse_grad_frames(&[0.25, 0.75], &[2.0, 1.0]), vec![0.5, 0.25, 1.5, 0.75]);
    }

    #[test]
    fn zero_captioner_gives_log_v_per_token() {
        let cap = ToyCaptioner::zeros(7, 3).unwrap();
        let fused = FusedFeature { value: vec![0.3, -2.0, 1.0] };
        let (loss, grad) = toy_caption_loss(&cap, &fused, &rec(vec![1, 2], vec![3, 4, 5], 7)).unwrap();
        assert!((loss - 3.0 * 7f64.ln()).abs() < 1e-12);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_caption_is_data_error() {
        let cap = ToyCaptioner::zeros(4, 2).unwrap();
        let fused = FusedFeature { value: vec![0.0; 2] };
        assert!(matches!(
            toy_caption_loss(&cap, &fused, &rec(vec![1], vec![], 4)),
            Err(LfsError::Data(_))
        ));
    }

    #[test]
    fn toy_gradient_matches_finite_differences() {
        let cap = ToyCaptioner::random(9, 6, 4, 0.8).unwrap();
        let report = verify_oracle(&cap, 20, 1).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_error < 1e-5);
    }

    #[test]
    fn prompt_only_reaches_loss_through_first_bigram() {
        // zero readout: loss depends on the prompt only via the context of caption position 0
        let mut cap = ToyCaptioner::random(6, 3, 2, 1.0).unwrap();
        cap.readout.fill(0.0);
        let fused = vec![0.1, 0.2, 0.3];
        let caption = [2, 5, 1];
        let brute = |prev0: u32| -> f64 {
            let v = 6usize;
            let mut prev = prev0;
            let mut loss = 0.0;
            for &tok in &caption {
                let logits: Vec<f64> = (0..v)
                    .map(|j| cap.bigram[prev as usize * v + j] + cap.bias[j])
                    .collect();
                let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
                loss += lse - logits[tok as usize];
                prev = tok;
            }
            loss
        };
        let (base, _) = cap.loss_and_grad(&fused, &[], &caption).unwrap();
        assert!((base - brute(BOS)).abs() < 1e-12);
        let (a, _) = cap.loss_and_grad(&fused, &[4, 3], &caption).unwrap();
        assert!((a - brute(3)).abs() < 1e-12);
        let (b, _) = cap.loss_and_grad(&fused, &[1, 1, 4, 3], &caption).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn padding_values_never_matter() {
        let cap = ToyCaptioner::random(8, 4, 5, 1.0).unwrap();
        let fused = vec![0.4, -0.1, 0.9, 0.0];
        let roles = [
            TokenRole::Pad,
            TokenRole::Prompt,
            TokenRole::Pad,
            TokenRole::Caption,
            TokenRole::Caption,
            TokenRole::Pad,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut reference = None;
        for _ in 0..20 {
            let tokens = [
                rng.random_range(0..8),
                5,
                rng.random_range(0..8),
                2,
                7,
                rng.random_range(0..8),
            ];
            let out = cap.loss_with_roles(&fused, &tokens, &roles).unwrap();
            match &reference {
                None => reference = Some(out),
                Some(r) => assert_eq!(&out, r),
            }
        }
    }

    #[test]
    fn zero_gradient_oracle_fails_audit() {
        struct Lazy(ToyCaptioner);
        impl CaptionerOracle for Lazy {
            fn feature_dim(&self) -> usize {
                self.0.dim()
            }
            fn vocab_size(&self) -> u32 {
                CaptionerOracle::vocab_size(&self.0)
            }
            fn loss_and_grad(&self, f: &[f64], p: &[u32], c: &[u32]) -> Result<(f64, Vec<f64>)> {
                let (l, g) = self.0.loss_and_grad(f, p, c)?;
                Ok((l, vec![0.0; g.len()]))
            }
        }
        let lazy = Lazy(ToyCaptioner::random(5, 3, 1, 1.0).unwrap());
        let report = verify_oracle(&lazy, 3, 0).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn nan_oracle_is_oracle_error() {
        struct Broken;
        impl CaptionerOracle for Broken {
            fn feature_dim(&self) -> usize {
                2
            }
            fn vocab_size(&self) -> u32 {
                4
            }
            fn loss_and_grad(&self, _: &[f64], _: &[u32], _: &[u32]) -> Result<(f64, Vec<f64>)> {
                Ok((f64::NAN, vec![0.0; 2]))
            }
        }
        assert!(matches!(verify_oracle(&Broken, 2, 0), Err(LfsError::Oracle(_))));
    }

    #[test]
    fn aligned_captioner_prefers_matching_token() {
        let layout = CenterLayout::new(32, 8, 0.3, 1);
        let cap = ToyCaptioner::aligned(&layout, 6.0, 0).unwrap();
        let fused = layout.center(3).to_vec();
        let (right, _) = cap.loss_and_grad(&fused, &[], &[3]).unwrap();
        let (wrong, _) = cap.loss_and_grad(&fused, &[], &[4]).unwrap();
        assert!(right + 5.0 < wrong);
    }

    #[test]
    fn lfsc_round_trip() {
        let cap = ToyCaptioner::random(5, 3, 8, 1.0).unwrap();
        let bytes = cap.to_bytes();
        assert_eq!(&bytes[..4], b"LFSC");
        assert_eq!(bytes.len(), 12 + 8 * (15 + 25 + 5));
        let back = ToyCaptioner::from_bytes(&bytes).unwrap();
        assert_eq!(back, cap);
        assert_eq!(back.checksum(), cap.checksum());
        assert!(ToyCaptioner::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }
}
