//! Weight files.
//!
//! ```text
//! SDNZ v1\n
//! {"config": {...}, "blobs": [{"name": .., "shape": [..], "sha256": ..}, ..]}\n
//! <TNSR blob>  one per entry of "blobs", in order
//! ```
//!
//! Each checksum covers the blob's full TNSR bytes (header line and payload).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DenoiserConfig, ToyDenoiser};
use crate::error::{Error, Result};
use crate::tensor_io::{decode_tnsr, encode_tnsr, TnsrHeader};

pub const SDNZ_MAGIC: &str = "SDNZ v1";

#[derive(Serialize, Deserialize)]
struct FileHeader {
    config: DenoiserConfig,
    blobs: Vec<BlobInfo>,
}

/// One entry of a weight file's blob table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn ordered_blobs(d: &ToyDenoiser) -> Vec<(String, Vec<u8>)> {
    d.config
        .weight_shapes()
        .into_iter()
        .map(|(name, _)| {
            let bytes = encode_tnsr(&d.weights[&name]);
            (name, bytes)
        })
        .collect()
}

pub(super) fn checksum(d: &ToyDenoiser) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in ordered_blobs(d) {
        h.update(name.as_bytes());
        h.update(&bytes);
    }
    hex(&h.finalize())
}

pub fn save_weights(d: &ToyDenoiser, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blobs = ordered_blobs(d);
    let header = FileHeader {
        config: d.config.clone(),
        blobs: blobs
            .iter()
            .map(|(name, bytes)| BlobInfo {
                name: name.clone(),
                shape: d.weights[name].shape().to_vec(),
                sha256: sha256_hex(bytes),
            })
            .collect(),
    };
    let mut out = format!("{SDNZ_MAGIC}\n").into_bytes();
    out.extend(serde_json::to_vec(&header)?);
    out.push(b'\n');
    for (_, bytes) in &blobs {
        out.extend_from_slice(bytes);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads one raw TNSR blob (header line plus payload).
fn read_blob<R: BufRead>(r: &mut R, name: &str) -> Result<Vec<u8>> {
    let what = format!("blob `{name}`");
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::format(&what, e.to_string()))?;
    let header = TnsrHeader::parse(line.trim_end_matches('\n')).map_err(|e| Error::format(&what, e.to_string()))?;
    let mut bytes = line.into_bytes();
    let start = bytes.len();
    bytes.resize(start + header.numel() * 4, 0);
    r.read_exact(&mut bytes[start..])
        .map_err(|_| Error::format(&what, "truncated payload"))?;
    Ok(bytes)
}

/// Reads the config and blob table without loading any weights.
pub fn read_weights_header(path: impl AsRef<Path>) -> Result<(DenoiserConfig, Vec<BlobInfo>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let header = read_file_header(&mut BufReader::new(file))?;
    Ok((header.config, header.blobs))
}

fn read_file_header<R: BufRead>(r: &mut R) -> Result<FileHeader> {
    let mut magic = String::new();
    r.read_line(&mut magic).map_err(|e| Error::format("weight file", e.to_string()))?;
    if magic.trim_end() != SDNZ_MAGIC {
        return Err(Error::format("weight file", "missing SDNZ v1 magic"));
    }
    let mut json = String::new();
    r.read_line(&mut json).map_err(|e| Error::format("weight file", e.to_string()))?;
    serde_json::from_str(&json).map_err(|e| Error::format("weight file header", e.to_string()))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ToyDenoiser> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_file_header(&mut r)?;
    let mut weights: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    for entry in &header.blobs {
        let bytes = read_blob(&mut r, &entry.name)?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Checksum(entry.name.clone()));
        }
        let t = decode_tnsr(&bytes)?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Shape(format!(
                "blob `{}` is {:?}, header says {:?}",
                entry.name,
                t.shape(),
                entry.shape
            )));
        }
        weights.insert(entry.name.clone(), t);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::format("weight file", "trailing bytes after last blob"));
    }
    ToyDenoiser::from_weights(header.config, weights)
}
