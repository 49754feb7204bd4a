//! Binary checkpoint: `MDLMTOY\0`, u32 version, u32 header length, a JSON
//! header (config and tensor table), u64 parameter count, then the flat
//! parameters as little-endian f64. All integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamLayout, TensorSpec, ToyDenoiser, ToyDenoiserConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MDLMTOY\0";
const VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 20;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ToyDenoiserConfig,
    tensors: Vec<TensorSpec>,
}

pub fn write_checkpoint(model: &ToyDenoiser) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        config: model.cfg.clone(),
        tensors: model.layout.tensors.clone(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(24 + header.len() + 8 * model.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn parse_checkpoint(mut bytes: &[u8]) -> Result<ToyDenoiser> {
    let b = &mut bytes;
    if take(b, 8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len =
        u32::from_le_bytes(take(b, 4, "header length")?.try_into().expect("4 bytes")) as usize;
    if header_len > MAX_HEADER {
        return Err(Error::Checkpoint(format!(
            "header length {header_len} too large"
        )));
    }
    let header: Header = serde_json::from_slice(take(b, header_len, "header")?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let layout = ParamLayout::for_config(&header.config);
    if layout.tensors != header.tensors {
        return Err(Error::Checkpoint(
            "tensor table does not match config".into(),
        ));
    }
    let count = u64::from_le_bytes(take(b, 8, "parameter count")?.try_into().expect("8 bytes"));
    if count != layout.total as u64 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, header says {count}",
            layout.total
        )));
    }
    if b.len() != layout.total * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            layout.total * 8,
            b.len()
        )));
    }
    let params: Vec<f64> = b
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    ToyDenoiser::from_parts(header.config, params)
}

pub fn save_checkpoint(model: &ToyDenoiser, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ToyDenoiser> {
    parse_checkpoint(&std::fs::read(path)?)
}
