use sha2::{Digest, Sha256};

/// SHA-256 of the concatenated little-endian bytes of `blocks`, hex encoded.
pub fn sha256_f64_blocks<'a>(blocks: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut hasher = Sha256::new();
    for block in blocks {
        hasher.update((block.len() as u64).to_le_bytes());
        for v in block {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
