use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the compact JSON encoding. Struct fields serialize in
/// declaration order and every map in this crate is a `BTreeMap`, so the
/// encoding is canonical.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    sha256_hex(&bytes)
}
