//! `model.bin`: the 8 bytes `SHIFTLAB`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then `num_params` little-endian `f64` values in
//! layout order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use shiftlab_core::diffcore::ModelSpec;
use shiftlab_core::Model;

use crate::error::{HarnessError, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 8] = b"SHIFTLAB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub version: u32,
    pub dtype: String,
    pub spec: ModelSpec,
    pub num_params: usize,
    pub seed: u64,
    pub command: String,
}

pub fn encode_model(model: &Model, seed: u64, command: &str) -> Result<Vec<u8>> {
    let header = ModelHeader {
        version: FORMAT_VERSION,
        dtype: "f64".into(),
        spec: *model.spec(),
        num_params: model.num_params(),
        seed,
        command: command.into(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_model(mut bytes: &[u8]) -> Result<(ModelHeader, Model)> {
    let mut magic = [0u8; 8];
    bytes.read_exact(&mut magic).map_err(|_| HarnessError::ModelFile("truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(HarnessError::ModelFile("missing SHIFTLAB magic".into()));
    }
    let mut len = [0u8; 4];
    bytes.read_exact(&mut len).map_err(|_| HarnessError::ModelFile("truncated header length".into()))?;
    let len = u32::from_le_bytes(len) as usize;
    if bytes.len() < len {
        return Err(HarnessError::ModelFile("truncated header".into()));
    }
    let header: ModelHeader = serde_json::from_slice(&bytes[..len])?;
    if header.version != FORMAT_VERSION || header.dtype != "f64" {
        return Err(HarnessError::ModelFile(format!("unsupported version {} / dtype {}", header.version, header.dtype)));
    }
    let body = &bytes[len..];
    if body.len() != 8 * header.num_params {
        return Err(HarnessError::ModelFile(format!("expected {} parameter bytes, found {}", 8 * header.num_params, body.len())));
    }
    let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let model = Model::from_params(header.spec, params)?;
    Ok((header, model))
}

pub fn save_model(path: impl AsRef<Path>, model: &Model, seed: u64, command: &str) -> Result<()> {
    let bytes = encode_model(model, seed, command)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelHeader, Model)> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Model::init(ModelSpec::mlp(3, 4, 2), 5).unwrap();
        let bytes = encode_model(&m, 5, "train").unwrap();
        let (h, back) = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(h.num_params, m.num_params());
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::init(ModelSpec::linear(2, 2), 0).unwrap();
        let bytes = encode_model(&m, 0, "train").unwrap();
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
    }
}
