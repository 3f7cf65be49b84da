//! Binary checkpoint: `TMAE`, a little-endian u32 format version, a
//! little-endian u64 header length, a UTF-8 JSON header, then every
//! parameter as raw little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelState, TrainMetadata};
use crate::data::CodeVocabulary;
use crate::embedding::CostBinner;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"TMAE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocabulary: CodeVocabulary,
    fingerprint: String,
    binner_edges: Vec<f64>,
    binner_fitted_on: usize,
    cost_scale: f64,
    metadata: TrainMetadata,
    parameters: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the blob section.
    offset: usize,
}

pub fn write_checkpoint(state: &ModelState) -> Result<Vec<u8>> {
    let mut parameters = Vec::with_capacity(state.params.len());
    let mut offset = 0;
    for (_, p) in state.params.iter() {
        parameters.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.value.len() * 8;
    }
    let header = Header {
        model: state.config.clone(),
        vocabulary: state.vocab.clone(),
        fingerprint: state.fingerprint(),
        binner_edges: state.binner.edges().to_vec(),
        binner_fitted_on: state.binner.fitted_on(),
        cost_scale: state.cost_scale,
        metadata: state.metadata.clone(),
        parameters,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in state.params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'b>(bytes: &mut &'b [u8], n: usize) -> Result<&'b [u8]> {
    if bytes.len() < n {
        return Err(Error::TruncatedCheckpoint);
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut rest = bytes;
    let magic = take(&mut rest, 4).map_err(|_| {
        if MAGIC.starts_with(bytes) {
            Error::TruncatedCheckpoint
        } else {
            Error::BadMagic
        }
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut rest, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(take(&mut rest, 8)?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len).map_err(|_| Error::TruncatedCheckpoint)?;
    let header: Header =
        serde_json::from_slice(take(&mut rest, header_len)?).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if header.vocabulary.fingerprint() != header.fingerprint {
        return Err(Error::CorruptCheckpoint("vocabulary does not match its fingerprint".into()));
    }
    let blobs = rest;
    let mut params = ParamSet::new();
    let mut expected_offset = 0;
    for entry in &header.parameters {
        if entry.offset != expected_offset {
            return Err(Error::CorruptCheckpoint(format!("parameter {} at unexpected offset", entry.name)));
        }
        let count: usize = entry.shape.iter().product();
        let end = entry.offset + count * 8;
        let raw = blobs.get(entry.offset..end).ok_or(Error::TruncatedCheckpoint)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.add(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
        expected_offset = end;
    }
    if blobs.len() != expected_offset {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after parameters",
            blobs.len() - expected_offset
        )));
    }
    let binner = CostBinner::from_edges(header.binner_edges, header.binner_fitted_on)?;
    ModelState::new(params, header.model, header.vocabulary, binner, header.cost_scale, header.metadata)
}

pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(state)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
