//! Content digests.
//!
//! Every content-addressed identifier in the crate (window ids, query hashes,
//! prompt hashes) is a lowercase hex SHA-256 over canonical bytes.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the canonical JSON serialization of `value`.
///
/// Canonical here means serde_json's compact form with object keys in
/// sorted order, which holds for any value routed through `serde_json::Value`.
pub fn canonical_json_digest<T: serde::Serialize>(value: &T) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

pub fn canonical_json<T: serde::Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&v).expect("json value serializes")
}
