//! Content digests used for log identity, split keys, cache keys and model
//! fingerprints.

use alloc::string::String;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the canonical JSON rendering of `value`.
///
/// Structs serialize in declaration order and maps are `BTreeMap`s throughout
/// the crate, so the rendering is deterministic.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("in-memory serialization cannot fail");
    sha256_hex(&bytes)
}

/// Digest of a tagged tuple of parts, e.g. a cache key from upstream digests.
pub fn digest_parts(tag: &str, parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(tag.as_bytes());
    for part in parts {
        hasher.update([0u8]);
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}
