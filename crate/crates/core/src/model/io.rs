//! Model file: `"CTVM"` | version (u32 LE) | CRC-32 of payload (u32 LE) |
//! payload length (u64 LE) | payload (bincode of the model: transform bundle,
//! architecture, conditioning flag, parameter arrays in declaration order).

use std::path::Path;

use super::ModelParams;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CTVM";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

fn payload(model: &ModelParams) -> Vec<u8> {
    bincode::serialize(model).expect("model serialization is infallible")
}

pub(super) fn fingerprint(model: &ModelParams) -> String {
    format!("{:08x}", crc32fast::hash(&payload(model)))
}

pub fn to_bytes(model: &ModelParams) -> Vec<u8> {
    let body = payload(model);
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Corruption("missing CTVM magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corruption("truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let crc = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != len {
        return Err(Error::Corruption(format!(
            "payload is {} bytes, header declares {len}",
            body.len()
        )));
    }
    if crc32fast::hash(body) != crc {
        return Err(Error::Corruption("checksum mismatch".into()));
    }
    bincode::deserialize(body).map_err(|e| Error::Corruption(format!("undecodable payload: {e}")))
}

pub fn save_model(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
