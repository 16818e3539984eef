//! Deterministic JSON serialization and projection hashing.
//!
//! The canonical form is the byte-exact preimage of every digest the kernel
//! computes, and also the on-disk form of each log line and of `roadmap.json`:
//!
//! - object keys sorted by Unicode code point (byte order of UTF-8)
//! - `,` and `:` separators, no other whitespace
//! - strings emitted as raw UTF-8; only `"`, `\` and U+0000..U+001F escaped,
//!   using the short escapes where JSON has one and lowercase `\u00xx` otherwise
//! - integers only; an integer-valued float is written as the integer
//! - exactly one trailing LF
//!
//! Strings are hashed as-is. Producers are expected to hand over NFC text.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::projection::Roadmap;

/// Largest magnitude at which every integer is exactly representable as f64.
const MAX_SAFE_FLOAT_INT: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("value at {pointer} cannot be canonicalized: {reason}")]
    NonCanonicalizableValue { pointer: String, reason: String },
}

/// A lowercase 64-character hex SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HashDigest(String);

impl HashDigest {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        HashDigest(hex::encode(Sha256::digest(bytes)))
    }

    pub fn parse(s: &str) -> Result<Self, InvalidDigest> {
        let ok = s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if ok {
            Ok(HashDigest(s.to_owned()))
        } else {
            Err(InvalidDigest(s.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("not a lowercase 64-hex sha256 digest: {0:?}")]
pub struct InvalidDigest(pub String);

impl TryFrom<String> for HashDigest {
    type Error = InvalidDigest;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        HashDigest::parse(&s)
    }
}

impl From<HashDigest> for String {
    fn from(d: HashDigest) -> String {
        d.0
    }
}

/// Output of [`canonicalize`]: UTF-8, LF-terminated, fixpoint under re-parsing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalBytes(Vec<u8>);

impl CanonicalBytes {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    /// The document text without the trailing LF.
    pub fn as_line(&self) -> &str {
        let s = std::str::from_utf8(&self.0).expect("canonical bytes are UTF-8");
        s.strip_suffix('\n').unwrap_or(s)
    }

    pub fn digest(&self) -> HashDigest {
        HashDigest::of_bytes(&self.0)
    }
}

pub fn canonicalize(doc: &Value) -> Result<CanonicalBytes, CanonicalError> {
    let mut out = Vec::with_capacity(128);
    let mut pointer = String::new();
    write_value(doc, &mut out, &mut pointer)?;
    out.push(b'\n');
    Ok(CanonicalBytes(out))
}

/// Canonicalize any serializable value. Maps with non-string keys are rejected.
pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> Result<CanonicalBytes, CanonicalError> {
    let doc = serde_json::to_value(value).map_err(|e| CanonicalError::NonCanonicalizableValue {
        pointer: String::new(),
        reason: e.to_string(),
    })?;
    canonicalize(&doc)
}

/// The hashed subset of a roadmap. The `run` block, which carries the stored
/// hash and verification metadata, is left out so the digest cannot refer to
/// itself.
pub fn hash_input(projected: &Roadmap) -> Value {
    let mut doc = Map::new();
    doc.insert(
        "schema_version".into(),
        Value::String(projected.schema_version.clone()),
    );
    doc.insert("project".into(), to_value(&projected.project));
    doc.insert("tasks".into(), to_value(&projected.tasks));
    doc.insert("indexes".into(), to_value(&projected.indexes));
    Value::Object(doc)
}

pub fn compute_projection_hash(projected: &Roadmap) -> Result<HashDigest, CanonicalError> {
    Ok(canonicalize(&hash_input(projected))?.digest())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    // Roadmap parts are plain structs with string keys; this cannot fail.
    serde_json::to_value(v).expect("roadmap components serialize to JSON")
}

fn write_value(v: &Value, out: &mut Vec<u8>, pointer: &mut String) -> Result<(), CanonicalError> {
    match v {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => write_number(n, out, pointer)?,
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                let len = pointer.len();
                pointer.push('/');
                pointer.push_str(&i.to_string());
                write_value(item, out, pointer)?;
                pointer.truncate(len);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            // Sort explicitly: serde_json's map may preserve insertion order
            // depending on enabled features.
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_unstable_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (k, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(k, out);
                out.push(b':');
                let len = pointer.len();
                pointer.push('/');
                pointer.push_str(&k.replace('~', "~0").replace('/', "~1"));
                write_value(item, out, pointer)?;
                pointer.truncate(len);
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_number(
    n: &serde_json::Number,
    out: &mut Vec<u8>,
    pointer: &str,
) -> Result<(), CanonicalError> {
    if let Some(i) = n.as_i64() {
        out.extend_from_slice(i.to_string().as_bytes());
        return Ok(());
    }
    if let Some(u) = n.as_u64() {
        out.extend_from_slice(u.to_string().as_bytes());
        return Ok(());
    }
    let f = n.as_f64().unwrap_or(f64::NAN);
    let reject = |reason: &str| CanonicalError::NonCanonicalizableValue {
        pointer: pointer.to_owned(),
        reason: reason.to_owned(),
    };
    if !f.is_finite() {
        return Err(reject("non-finite number"));
    }
    if f.fract() != 0.0 {
        return Err(reject("fractional number; carry it as a string"));
    }
    if f.abs() > MAX_SAFE_FLOAT_INT {
        return Err(reject(
            "integer-valued float outside the exactly representable range",
        ));
    }
    // -0.0 renders as 0
    out.extend_from_slice((f as i64).to_string().as_bytes());
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    out.push(b'"');
    let bytes = s.as_bytes();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        let esc: &[u8] = match b {
            b'"' => b"\\\"",
            b'\\' => b"\\\\",
            b'\n' => b"\\n",
            b'\r' => b"\\r",
            b'\t' => b"\\t",
            0x08 => b"\\b",
            0x0c => b"\\f",
            0x00..=0x1f => b"",
            _ => continue,
        };
        out.extend_from_slice(&bytes[start..i]);
        if esc.is_empty() {
            out.extend_from_slice(b"\\u00");
            out.push(HEX[(b >> 4) as usize]);
            out.push(HEX[(b & 0xf) as usize]);
        } else {
            out.extend_from_slice(esc);
        }
        start = i + 1;
    }
    out.extend_from_slice(&bytes[start..]);
    out.push(b'"');
}
