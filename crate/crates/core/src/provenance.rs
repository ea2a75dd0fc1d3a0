//! Content digests stamped on every output.

use sha2::{Digest, Sha256};

use crate::series::hex_string;

/// First 16 bytes of the SHA-256 of the compact JSON form, as hex.
pub fn digest_json(value: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(value.to_string().as_bytes());
    hex_string(&hasher.finalize()[..16])
}
