//! Content digests and exact binary encodings of `f64` payloads.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `parts`, each part length-prefixed so that
/// `("ab", "c")` and `("a", "bc")` never collide.
pub fn hex_digest(parts: &[&[u8]]) -> String {
    hex::encode(raw_digest(parts))
}

/// First eight bytes of the SHA-256 of `parts`, little-endian.
pub fn digest_u64(parts: &[&[u8]]) -> u64 {
    let d = raw_digest(parts);
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

fn raw_digest(parts: &[&[u8]]) -> Vec<u8> {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().to_vec()
}

/// Base64 of the little-endian bytes of `values`.
pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

/// Inverse of [`encode_f64s`]. Returns `None` on bad base64 or a byte count
/// that is not a multiple of eight.
pub fn decode_f64s(text: &str) -> Option<Vec<f64>> {
    let bytes = STANDARD.decode(text.trim()).ok()?;
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    )
}
