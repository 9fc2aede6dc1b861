// SPDX-License-Identifier: Apache-2.0

//! Canonical JSON and SHA-256 digests.
//!
//! Every digest in the pipeline (asset hashes, ledger digests, audit chain
//! links) is computed over the canonical form produced here: UTF-8 JSON with
//! lexicographically sorted object keys, no insignificant whitespace, and
//! floating point values rounded to six decimal places.

use serde::Serialize;
use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};

/// Number of decimal places kept for floats in canonical output.
pub const FLOAT_DECIMALS: i32 = 6;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// 64 zero characters, used as the predecessor of the first link in a chain.
pub fn zero_digest() -> String {
    "0".repeat(64)
}

/// Returns true when `s` is a 64-character lowercase hex string.
pub fn is_hex_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Rounds `x` to the canonical number of decimals.
pub fn round_float(x: f64) -> f64 {
    let scale = 10f64.powi(FLOAT_DECIMALS);
    let r = (x * scale).round() / scale;
    // avoid "-0.0" in output
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn normalize(value: Value) -> Value {
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().unwrap_or(0.0);
                Number::from_f64(round_float(f))
                    .map(Value::Number)
                    .unwrap_or(Value::Null)
            } else {
                Value::Number(n)
            }
        }
        Value::Array(items) => Value::Array(items.into_iter().map(normalize).collect()),
        Value::Object(map) => {
            // serde_json's default map is a BTreeMap, so keys come out sorted.
            let mut out = Map::new();
            for (k, v) in map {
                out.insert(k, normalize(v));
            }
            Value::Object(out)
        }
        other => other,
    }
}

/// Converts any serializable value into its canonical JSON value.
pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Value> {
    Ok(normalize(serde_json::to_value(value)?))
}

/// Canonical compact JSON text for `value`.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    serde_json::to_string(&to_canonical_value(value)?)
}

/// SHA-256 over the canonical JSON of `value`.
pub fn canonical_digest<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    Ok(sha256_hex(to_canonical_string(value)?.as_bytes()))
}
