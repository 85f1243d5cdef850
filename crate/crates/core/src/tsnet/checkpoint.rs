//! LFSP parameter checkpoints.
//!
//! Layout, little-endian: magic `LFSP`, version `u16`, reserved `u16`, then
//! the config as `dim, hidden, k1, k2, mlp_hidden` (`u32` each), `alpha`,
//! `eps` (`f64`), a flag byte (bit 0 gating, 1 normalize, 2 event_conv,
//! 3 mlp_gelu), and finally every parameter block as `f64` in
//! [`PARAM_BLOCKS`](super::PARAM_BLOCKS) order. Block lengths follow from the
//! config.

use std::fs;
use std::path::Path;

use super::{TSNetConfig, TSNetParams};
use crate::embeddings::{put_f64s, ByteCursor};
use crate::error::{LfsError, Result};

pub const LFSP_MAGIC: &[u8; 4] = b"LFSP";
pub const LFSP_VERSION: u16 = 1;

pub fn encode_checkpoint(cfg: &TSNetConfig, params: &TSNetParams) -> Result<Vec<u8>> {
    cfg.validate()?;
    if !params.matches(cfg) {
        return Err(LfsError::shape("parameters do not match config"));
    }
    let mut buf = Vec::with_capacity(48 + params.len() * 8);
    buf.extend_from_slice(LFSP_MAGIC);
    buf.extend_from_slice(&LFSP_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    for v in [cfg.dim, cfg.hidden, cfg.k1, cfg.k2, cfg.mlp_hidden] {
        let v = u32::try_from(v).map_err(|_| LfsError::param("config value exceeds u32"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&cfg.alpha.to_le_bytes());
    buf.extend_from_slice(&cfg.eps.to_le_bytes());
    let flags = u8::from(cfg.gating)
        | u8::from(cfg.normalize) << 1
        | u8::from(cfg.event_conv) << 2
        | u8::from(cfg.mlp_gelu) << 3;
    buf.push(flags);
    for block in params.blocks() {
        put_f64s(&mut buf, block);
    }
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(TSNetConfig, TSNetParams)> {
    let mut cur = ByteCursor::new(bytes);
    if cur.take(4)? != LFSP_MAGIC {
        return Err(LfsError::format("bad LFSP magic"));
    }
    let version = cur.u16()?;
    if version != LFSP_VERSION {
        return Err(LfsError::format(format!("unsupported LFSP version {version}")));
    }
    let _reserved = cur.u16()?;
    let dim = cur.u32()? as usize;
    let hidden = cur.u32()? as usize;
    let k1 = cur.u32()? as usize;
    let k2 = cur.u32()? as usize;
    let mlp_hidden = cur.u32()? as usize;
    let alpha = cur.f64()?;
    let eps = cur.f64()?;
    let flags = cur.u8()?;
    if flags & !0x0f != 0 {
        return Err(LfsError::format(format!("unknown flag bits {flags:#04x}")));
    }
    let cfg = TSNetConfig {
        dim,
        hidden,
        k1,
        k2,
        alpha,
        mlp_hidden,
        eps,
        gating: flags & 1 != 0,
        normalize: flags & 2 != 0,
        event_conv: flags & 4 != 0,
        mlp_gelu: flags & 8 != 0,
    };
    cfg.validate()
        .map_err(|e| LfsError::format(format!("invalid config in checkpoint: {e}")))?;
    let total: usize = cfg.shapes().iter().sum();
    if cur.remaining() != total * 8 {
        return Err(LfsError::format(format!(
            "checkpoint carries {} parameter bytes, config needs {}",
            cur.remaining(),
            total * 8
        )));
    }
    let mut params = TSNetParams::zeros(&cfg);
    for block in params.blocks_mut() {
        let n = block.len();
        *block = cur.f64_vec(n)?;
    }
    if !params.is_finite() {
        return Err(LfsError::data("checkpoint contains non-finite parameters"));
    }
    Ok((cfg, params))
}

pub fn write_checkpoint(cfg: &TSNetConfig, params: &TSNetParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(cfg, params)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(TSNetConfig, TSNetParams)> {
    decode_checkpoint(&fs::read(path)?)
}
