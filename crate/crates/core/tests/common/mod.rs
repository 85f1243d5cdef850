#![allow(dead_code)]

use lfs_core::captioner::ToyCaptioner;
use lfs_core::embeddings::{CaptionRecord, EmbeddingSequence};
use lfs_core::trainer::TrainExample;
use lfs_core::tsnet::{TSNetParams, PARAM_BLOCKS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_embeddings(rng: &mut ChaCha8Rng, id: &str, n: usize, d: usize) -> EmbeddingSequence {
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
    EmbeddingSequence::new(id, n, d, data).unwrap()
}

pub fn random_example(rng: &mut ChaCha8Rng, n: usize, d: usize, vocab: u32) -> TrainExample {
    let embeddings = random_embeddings(rng, "fd", n, d);
    let caption = CaptionRecord {
        video_id: "fd".into(),
        prompt_tokens: (0..2).map(|_| rng.random_range(1..vocab)).collect(),
        caption_tokens: (0..5).map(|_| rng.random_range(1..vocab)).collect(),
        vocab_size: vocab,
    };
    TrainExample { embeddings, caption }
}

pub fn random_captioner(vocab: u32, d: usize, seed: u64) -> ToyCaptioner {
    ToyCaptioner::random(vocab, d, seed, 0.5).unwrap()
}

/// `max |fd − analytic| / max(|fd|, |analytic|)` over a vector. The scale is
/// floored at `1e-6` so blocks whose exact gradient vanishes (the projection
/// bias under standardization) compare against rounding noise absolutely.
pub fn rel_error(fd: &[f64], analytic: &[f64]) -> f64 {
    let err = fd
        .iter()
        .zip(analytic)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = fd
        .iter()
        .chain(analytic)
        .map(|v| v.abs())
        .fold(1e-6, f64::max);
    err / scale
}

/// Central differences of `f` along every coordinate of `x`.
pub fn fd_vector(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let dn = f(&probe);
            probe[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Per-block relative error of `analytic` against central differences of
/// `loss` over every parameter.
pub fn audit_params(
    params: &TSNetParams,
    analytic: &TSNetParams,
    h: f64,
    loss: impl Fn(&TSNetParams) -> f64,
) -> Vec<(&'static str, f64)> {
    let mut probe = params.clone();
    let mut out = Vec::new();
    for (b, name) in PARAM_BLOCKS.iter().enumerate() {
        let len = params.blocks()[b].len();
        let mut fd = Vec::with_capacity(len);
        for i in 0..len {
            let orig = params.blocks()[b][i];
            probe.blocks_mut()[b][i] = orig + h;
            let up = loss(&probe);
            probe.blocks_mut()[b][i] = orig - h;
            let dn = loss(&probe);
            probe.blocks_mut()[b][i] = orig;
            fd.push((up - dn) / (2.0 * h));
        }
        out.push((*name, rel_error(&fd, analytic.blocks()[b])));
    }
    out
}

pub fn worst(errs: &[(&'static str, f64)]) -> (&'static str, f64) {
    errs.iter()
        .copied()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a })
}
