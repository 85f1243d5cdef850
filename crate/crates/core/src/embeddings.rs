//! Frame-embedding sequences, caption records and their on-disk formats.
//!
//! LFSE layout (all integers little-endian):
//!
//! | bytes      | field                         |
//! |------------|-------------------------------|
//! | 4          | magic `LFSE`                  |
//! | 2          | version (`1`)                 |
//! | 2          | reserved (`0`)                |
//! | 4          | `id_len`                      |
//! | `id_len`   | video id, UTF-8               |
//! | 4          | `N` (frames)                  |
//! | 4          | `d` (embedding dim)           |
//! | `4·N·d`    | `f32` payload, row-major      |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LfsError, Result};

pub const LFSE_MAGIC: &[u8; 4] = b"LFSE";
pub const LFSE_VERSION: u16 = 1;

/// Precomputed frame embeddings for one video, `n_frames × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    video_id: String,
    n_frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingSequence {
    pub fn new(video_id: impl Into<String>, n_frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if n_frames == 0 || dim == 0 {
            return Err(LfsError::data(format!(
                "embedding sequence needs n_frames >= 1 and dim >= 1, got {n_frames}x{dim}"
            )));
        }
        let expected = n_frames
            .checked_mul(dim)
            .ok_or_else(|| LfsError::data("embedding shape overflows"))?;
        if data.len() != expected {
            return Err(LfsError::data(format!(
                "payload has {} values, shape {n_frames}x{dim} needs {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LfsError::data(format!(
                "non-finite value at frame {}, channel {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            video_id: video_id.into(),
            n_frames,
            dim,
            data,
        })
    }

    /// Builds a sequence from equally sized rows.
    pub fn from_rows(video_id: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(LfsError::data("ragged embedding rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(video_id, rows.len(), dim, data)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Payload widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Selected rows, widened to `f64`, concatenated row-major.
    pub fn gather_rows(&self, frames: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(frames.len() * self.dim);
        for &t in frames {
            out.extend(self.row(t).iter().map(|&v| f64::from(v)));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.video_id.as_bytes();
        let mut buf = Vec::with_capacity(20 + id.len() + 4 * self.data.len());
        buf.extend_from_slice(LFSE_MAGIC);
        buf.extend_from_slice(&LFSE_VERSION.to_le_bytes());
        buf.extend_from_slice(&0u16.to_le_bytes());
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != LFSE_MAGIC {
            return Err(LfsError::format("bad LFSE magic"));
        }
        let version = cur.u16()?;
        if version != LFSE_VERSION {
            return Err(LfsError::format(format!("unsupported LFSE version {version}")));
        }
        let _reserved = cur.u16()?;
        let id_len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| LfsError::format("video id is not UTF-8"))?
            .to_owned();
        let n = cur.u32()? as usize;
        let d = cur.u32()? as usize;
        let count = n
            .checked_mul(d)
            .ok_or_else(|| LfsError::format("declared shape overflows"))?;
        if cur.remaining() != count * 4 {
            return Err(LfsError::format(format!(
                "payload holds {} bytes, header declares {n}x{d} floats ({} bytes)",
                cur.remaining(),
                count * 4
            )));
        }
        let payload = cur.take(count * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(id, n, d, data)
    }
}

pub fn write_embeddings(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&seq.to_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    EmbeddingSequence::from_bytes(&bytes)
}

/// Prompt plus ground-truth caption, as integer token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub video_id: String,
    pub prompt_tokens: Vec<u32>,
    pub caption_tokens: Vec<u32>,
    pub vocab_size: u32,
}

impl CaptionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(LfsError::data("vocab_size must be positive"));
        }
        let bad = self
            .prompt_tokens
            .iter()
            .chain(&self.caption_tokens)
            .find(|&&t| t >= self.vocab_size);
        if let Some(t) = bad {
            return Err(LfsError::data(format!(
                "token {t} out of range for vocab_size {} in {}",
                self.vocab_size, self.video_id
            )));
        }
        Ok(())
    }

    /// Training records additionally need a non-empty caption.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        if self.caption_tokens.is_empty() {
            return Err(LfsError::data(format!("empty caption for {}", self.video_id)));
        }
        Ok(())
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| LfsError::format(format!("line {}: {e}", lineno + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_captions(path: impl AsRef<Path>) -> Result<Vec<CaptionRecord>> {
    let records: Vec<CaptionRecord> = read_jsonl(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn write_captions(records: &[CaptionRecord], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(records, path)
}

/// Little-endian reader over a byte slice; every short read is a format error.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(LfsError::format(format!(
                "truncated: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }

    pub(crate) fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub(crate) fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}
