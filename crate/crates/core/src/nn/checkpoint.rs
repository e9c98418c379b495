//! Checkpoint files for [`NetworkParams`]: a JSON form and a compact
//! versioned binary form (magic, version, JSON shape header, then the flat
//! weight vector as little-endian f64). The format is chosen by file
//! extension: `.json` is JSON, anything else binary.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CheckpointError;

use super::{NetworkConfig, NetworkParams};

const MAGIC: &[u8; 8] = b"PSNGCKPT";
const VERSION: u32 = 1;
/// Safety caps for untrusted input.
const MAX_HEADER: u32 = 1 << 20;
const MAX_WEIGHTS: u64 = 1 << 26;

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    version: u32,
    config: NetworkConfig,
    weights: Vec<f64>,
}

pub fn encode_json(params: &NetworkParams) -> String {
    serde_json::to_string(&JsonCheckpoint {
        version: VERSION,
        config: params.config.clone(),
        weights: params.flat(),
    })
    .expect("checkpoint serializes")
}

pub fn decode_json(text: &str) -> Result<NetworkParams, CheckpointError> {
    let ck: JsonCheckpoint =
        serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if ck.version != VERSION {
        return Err(CheckpointError::Version(ck.version));
    }
    rebuild(ck.config, &ck.weights)
}

pub fn encode_binary(params: &NetworkParams) -> Vec<u8> {
    let header = serde_json::to_vec(&params.config).expect("config serializes");
    let weights = params.flat();
    let mut out = Vec::with_capacity(24 + header.len() + 8 * weights.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in &weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<NetworkParams, CheckpointError> {
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
        if cur.len() < n {
            return Err(CheckpointError::Format("truncated checkpoint".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_len = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if header_len > MAX_HEADER {
        return Err(CheckpointError::Format("oversized header".into()));
    }
    let config: NetworkConfig = serde_json::from_slice(take(header_len as usize)?)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    let n_weights = u64::from_le_bytes(take(8)?.try_into().unwrap());
    if n_weights > MAX_WEIGHTS {
        return Err(CheckpointError::Format("oversized weight vector".into()));
    }
    let raw = take(n_weights as usize * 8)?;
    if !cur.is_empty() {
        return Err(CheckpointError::Format("trailing bytes".into()));
    }
    let weights: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    rebuild(config, &weights)
}

fn rebuild(config: NetworkConfig, weights: &[f64]) -> Result<NetworkParams, CheckpointError> {
    let mut params = NetworkParams::init(config, 0)?;
    params.set_flat(weights)?;
    Ok(params)
}

pub fn save_params(path: &Path, params: &NetworkParams) -> Result<(), CheckpointError> {
    let bytes = if path.extension().is_some_and(|e| e == "json") {
        encode_json(params).into_bytes()
    } else {
        encode_binary(params)
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<NetworkParams, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if path.extension().is_some_and(|e| e == "json") {
        decode_json(std::str::from_utf8(&bytes).map_err(|e| CheckpointError::Format(e.to_string()))?)
    } else {
        decode_binary(&bytes)
    }
}
