//! Versioned JSON model files shared by every trained artifact.
//!
//! ```json
//! {"magic":"RISKCASCADE-MODEL","format_version":1,"kind":"...","feature_dim":9,"seed":42,"params":{...}}
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a reload
//! reproduces parameters bit-for-bit.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::util::write_atomic;

pub const MODEL_MAGIC: &str = "RISKCASCADE-MODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    magic: String,
    format_version: u32,
    kind: String,
    feature_dim: usize,
    seed: u64,
    params: Value,
}

pub fn encode_model<P: Serialize>(kind: &str, feature_dim: usize, seed: u64, params: &P) -> Vec<u8> {
    let env = Envelope {
        magic: MODEL_MAGIC.to_string(),
        format_version: MODEL_FORMAT_VERSION,
        kind: kind.to_string(),
        feature_dim,
        seed,
        params: serde_json::to_value(params).expect("model params serialize"),
    };
    let mut bytes = serde_json::to_vec(&env).expect("envelope serializes");
    bytes.push(b'\n');
    bytes
}

/// Decodes a model file, checking magic, version, kind and feature dimension.
pub fn decode_model<P: DeserializeOwned>(bytes: &[u8], kind: &str, feature_dim: usize) -> Result<(u64, P)> {
    let env: Envelope =
        serde_json::from_slice(bytes).map_err(|e| Error::ModelFile(format!("not a model file: {e}")))?;
    if env.magic != MODEL_MAGIC {
        return Err(Error::ModelFile(format!("bad magic `{}`", env.magic)));
    }
    if env.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFile(format!("unsupported format version {}", env.format_version)));
    }
    if env.kind != kind {
        return Err(Error::ModelFile(format!("expected a `{kind}` model, found `{}`", env.kind)));
    }
    if env.feature_dim != feature_dim {
        return Err(Error::Dimension {
            expected: feature_dim,
            got: env.feature_dim,
        });
    }
    let params = serde_json::from_value(env.params).map_err(|e| Error::ModelFile(format!("bad params: {e}")))?;
    Ok((env.seed, params))
}

/// Reads only the `kind` tag of a model file.
pub fn peek_kind(bytes: &[u8]) -> Result<String> {
    let env: Envelope =
        serde_json::from_slice(bytes).map_err(|e| Error::ModelFile(format!("not a model file: {e}")))?;
    Ok(env.kind)
}

pub fn write_model_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
}

pub fn read_model_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
