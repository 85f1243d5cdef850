//! On-disk corpus layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/captions.jsonl
//! <dir>/events.jsonl
//! <dir>/captioner.lfsc
//! <dir>/videos/<video_id>.lfse
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use lfs_core::captioner::{write_captioner, ToyCaptioner};
use lfs_core::embeddings::{read_captions, read_embeddings, read_jsonl, write_captions, write_embeddings, write_jsonl};
use lfs_core::synth::{EventRecord, SyntheticVideo};
use lfs_core::{par, sha256_bytes};

use crate::config::FileConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CAPTIONS: &str = "captions.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const CAPTIONER: &str = "captioner.lfsc";
pub const VIDEOS: &str = "videos";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub file: String,
    pub n_frames: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: FileConfig,
    pub dim: usize,
    pub captioner_sha256: String,
    pub videos: Vec<ManifestEntry>,
}

fn video_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(VIDEOS).join(format!("{id}.lfse"))
}

/// Writes every video file in parallel, then the shared files and the manifest.
pub fn write_corpus(dir: &Path, videos: &[SyntheticVideo], captioner: &ToyCaptioner, config: &FileConfig) -> anyhow::Result<Manifest> {
    fs::create_dir_all(dir.join(VIDEOS)).with_context(|| format!("creating {}", dir.display()))?;
    let entries = par::try_map_range(videos.len(), |i| -> anyhow::Result<ManifestEntry> {
        let emb = &videos[i].embeddings;
        let path = video_path(dir, emb.video_id());
        write_embeddings(emb, &path)?;
        Ok(ManifestEntry {
            video_id: emb.video_id().to_owned(),
            file: format!("{VIDEOS}/{}.lfse", emb.video_id()),
            n_frames: emb.n_frames(),
            sha256: sha256_bytes(&emb.to_bytes()),
        })
    })?;
    let captions: Vec<_> = videos.iter().map(|v| v.caption.clone()).collect();
    write_captions(&captions, dir.join(CAPTIONS))?;
    let events: Vec<EventRecord> = videos.iter().map(SyntheticVideo::event_record).collect();
    write_jsonl(&events, dir.join(EVENTS))?;
    write_captioner(captioner, dir.join(CAPTIONER))?;
    let manifest = Manifest {
        config: config.clone(),
        dim: config.synth.dim,
        captioner_sha256: sha256_bytes(&captioner.to_bytes()),
        videos: entries,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(lfs_core::LfsError::from)
        .with_context(|| format!("parsing {}", path.display()))
}

/// Loads every video listed in the manifest with its caption and events.
pub fn load_corpus(dir: &Path) -> anyhow::Result<Vec<SyntheticVideo>> {
    let manifest = read_manifest(dir)?;
    let mut captions: HashMap<_, _> = read_captions(dir.join(CAPTIONS))?
        .into_iter()
        .map(|c| (c.video_id.clone(), c))
        .collect();
    let mut events: HashMap<_, _> = read_jsonl::<EventRecord>(dir.join(EVENTS))?
        .into_iter()
        .map(|e| (e.video_id.clone(), e))
        .collect();

    let mut pending = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        let Some(caption) = captions.remove(&entry.video_id) else {
            bail!(lfs_core::LfsError::Data(format!("no caption for {}", entry.video_id)));
        };
        let Some(ev) = events.remove(&entry.video_id) else {
            bail!(lfs_core::LfsError::Data(format!("no events for {}", entry.video_id)));
        };
        pending.push((dir.join(&entry.file), caption, ev.events));
    }
    let embeddings = par::try_map_range(pending.len(), |i| read_embeddings(&pending[i].0))?;
    Ok(pending
        .into_iter()
        .zip(embeddings)
        .map(|((_, caption, events), embeddings)| SyntheticVideo {
            embeddings,
            caption,
            events,
        })
        .collect())
}
