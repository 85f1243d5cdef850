//! Synthetic event videos with aligned caption token streams.
//!
//! Every token id and the background own a disjoint block of embedding
//! coordinates filled with seeded random signs. Event frames are the token's
//! center plus i.i.d. Gaussian noise, everything else is the background center
//! plus noise. The caption is the event tokens in temporal order.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embeddings::{CaptionRecord, EmbeddingSequence};
use crate::error::{LfsError, Result};
use crate::par;

/// Generator parameters for one synthetic video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_frames: usize,
    pub dim: usize,
    pub n_events: usize,
    pub event_len_mean: usize,
    pub event_len_jitter: usize,
    pub background_noise: f64,
    pub vocab_size: u32,
    pub seed: u64,
    /// Seed of the shared center layout; videos meant for one captioner must agree on it.
    pub layout_seed: u64,
    pub prompt_tokens: Vec<u32>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_frames: 256,
            dim: 64,
            n_events: 5,
            event_len_mean: 8,
            event_len_jitter: 2,
            background_noise: 0.3,
            vocab_size: 16,
            seed: 0,
            layout_seed: 0,
            prompt_tokens: Vec::new(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.dim == 0 {
            return Err(LfsError::spec("n_frames and dim must be positive"));
        }
        if self.vocab_size < 2 {
            return Err(LfsError::spec("vocab_size must be at least 2 (id 0 is reserved)"));
        }
        if self.n_events > self.vocab_size as usize {
            return Err(LfsError::spec(format!(
                "n_events {} exceeds vocab_size {}",
                self.n_events, self.vocab_size
            )));
        }
        if self.dim < self.vocab_size as usize {
            return Err(LfsError::spec(format!(
                "dim {} cannot hold {} disjoint center blocks",
                self.dim, self.vocab_size
            )));
        }
        if !(self.background_noise >= 0.0 && self.background_noise.is_finite()) {
            return Err(LfsError::spec("background_noise must be finite and non-negative"));
        }
        if self.n_events > 0 && self.event_len_mean == 0 {
            return Err(LfsError::spec("event_len_mean must be positive"));
        }
        let max_len = self.event_len_mean + self.event_len_jitter;
        let needed = self.n_events.saturating_mul(max_len);
        if needed > self.n_frames {
            return Err(LfsError::spec(format!(
                "infeasible packing: {} events of up to {max_len} frames need {needed} > {} frames",
                self.n_events, self.n_frames
            )));
        }
        if let Some(t) = self.prompt_tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(LfsError::spec(format!("prompt token {t} out of vocabulary")));
        }
        Ok(())
    }

    pub fn layout(&self) -> CenterLayout {
        CenterLayout::new(self.dim, self.vocab_size, self.background_noise, self.layout_seed)
    }
}

/// Cluster centers for the background (slot 0) and each token id `1..V`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterLayout {
    dim: usize,
    block: usize,
    amplitude: f64,
    centers: Vec<f64>,
}

impl CenterLayout {
    /// Slot `v` occupies coordinates `[v·B, (v+1)·B)` with `B = dim / V`.
    /// The amplitude is raised above 1 when needed so that pairwise center
    /// distance `amplitude·√(2B)` is at least four noise deviations.
    ///
    /// Requires `vocab_size >= 1` and `dim >= vocab_size`.
    pub fn new(dim: usize, vocab_size: u32, noise: f64, seed: u64) -> Self {
        let slots = vocab_size as usize;
        assert!(slots >= 1 && dim >= slots, "layout needs dim >= vocab_size >= 1");
        let block = dim / slots;
        let amplitude = f64::max(1.0, 4.0 * noise / (2.0 * block as f64).sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4c46_535f_4c41_594f);
        let mut centers = vec![0.0; slots * dim];
        for v in 0..slots {
            for c in v * block..(v + 1) * block {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                centers[v * dim + c] = sign * amplitude;
            }
        }
        Self {
            dim,
            block,
            amplitude,
            centers,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slots(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Center for token `v`; slot 0 is the background.
    pub fn center(&self, v: usize) -> &[f64] {
        &self.centers[v * self.dim..(v + 1) * self.dim]
    }

    pub fn background(&self) -> &[f64] {
        self.center(0)
    }

    /// Smallest pairwise center distance.
    pub fn min_separation(&self) -> f64 {
        let n = self.slots();
        let mut best = f64::INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                let d: f64 = self
                    .center(a)
                    .iter()
                    .zip(self.center(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                best = best.min(d.sqrt());
            }
        }
        best
    }
}

/// A planted event: frames `[start, end)` showing token `token`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub start: usize,
    pub end: usize,
    pub token: u32,
}

impl Event {
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub embeddings: EmbeddingSequence,
    pub caption: CaptionRecord,
    pub events: Vec<Event>,
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub video_id: String,
    pub n_frames: usize,
    pub events: Vec<Event>,
}

impl SyntheticVideo {
    pub fn event_record(&self) -> EventRecord {
        EventRecord {
            video_id: self.embeddings.video_id().to_owned(),
            n_frames: self.embeddings.n_frames(),
            events: self.events.clone(),
        }
    }
}

/// Generates one video; `video_id` is `synth-<seed>`.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticVideo> {
    synth_generate_named(spec, format!("synth-{}", spec.seed))
}

pub fn synth_generate_named(spec: &SyntheticSpec, video_id: String) -> Result<SyntheticVideo> {
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let jitter = spec.event_len_jitter as i64;
    let lengths: Vec<usize> = (0..spec.n_events)
        .map(|_| {
            let delta = if jitter > 0 { rng.random_range(-jitter..=jitter) } else { 0 };
            (spec.event_len_mean as i64 + delta).max(1) as usize
        })
        .collect();
    let total: usize = lengths.iter().sum();
    let free = spec.n_frames - total;
    let mut offsets: Vec<usize> = (0..spec.n_events).map(|_| rng.random_range(0..=free)).collect();
    offsets.sort_unstable();

    let usable = spec.vocab_size as usize - 1;
    let tokens: Vec<u32> = if spec.n_events <= usable {
        index::sample(&mut rng, usable, spec.n_events)
            .into_iter()
            .map(|i| i as u32 + 1)
            .collect()
    } else {
        (0..spec.n_events)
            .map(|_| rng.random_range(1..spec.vocab_size))
            .collect()
    };

    let mut events = Vec::with_capacity(spec.n_events);
    let mut consumed = 0;
    for ((len, off), token) in lengths.iter().zip(&offsets).zip(&tokens) {
        let start = off + consumed;
        events.push(Event {
            start,
            end: start + len,
            token: *token,
        });
        consumed += len;
    }

    let noise = Normal::new(0.0, spec.background_noise)
        .map_err(|e| LfsError::spec(format!("noise distribution: {e}")))?;
    let mut data = Vec::with_capacity(spec.n_frames * spec.dim);
    let mut next_event = 0;
    for t in 0..spec.n_frames {
        while next_event < events.len() && events[next_event].end <= t {
            next_event += 1;
        }
        let slot = match events.get(next_event) {
            Some(ev) if ev.contains(t) => ev.token as usize,
            _ => 0,
        };
        for &c in layout.center(slot) {
            data.push((c + noise.sample(&mut rng)) as f32);
        }
    }

    let embeddings = EmbeddingSequence::new(video_id.clone(), spec.n_frames, spec.dim, data)?;
    let caption = CaptionRecord {
        video_id,
        prompt_tokens: spec.prompt_tokens.clone(),
        caption_tokens: events.iter().map(|e| e.token).collect(),
        vocab_size: spec.vocab_size,
    };
    Ok(SyntheticVideo {
        embeddings,
        caption,
        events,
    })
}

/// Per-video seed derivation (splitmix64 finalizer over base and index).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates `count` videos sharing one center layout. Video `i` uses
/// `derive_seed(spec.seed, i)` and id `vid<i>` zero-padded to five digits.
pub fn synth_corpus(spec: &SyntheticSpec, count: usize) -> Result<Vec<SyntheticVideo>> {
    par::try_map_range(count, |i| {
        let mut s = spec.clone();
        s.seed = derive_seed(spec.seed, i as u64);
        synth_generate_named(&s, format!("vid{i:05}"))
            .map_err(|e| match e {
                LfsError::Spec(m) => LfsError::spec(format!("video {i}: {m}")),
                other => LfsError::spec(format!("video {i}: {other}")),
            })
    })
}
