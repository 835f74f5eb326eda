//! Binary tensor files.
//!
//! A TNSR file is one ASCII header line followed by a little-endian float32
//! payload in row-major order:
//!
//! ```text
//! TNSR v1 f32 <ndim> <dim0> <dim1> ...\n
//! <prod(dims) * 4 bytes>
//! ```
//!
//! Values are stored as `f32`; in-memory tensors are `f64`, so a write/read
//! cycle rounds to single precision.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const TNSR_MAGIC: &str = "TNSR";
pub const TNSR_VERSION: &str = "v1";

/// Header of a TNSR blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TnsrHeader {
    pub dtype: String,
    pub dims: Vec<usize>,
}

impl TnsrHeader {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn to_line(&self) -> String {
        let mut line = format!(
            "{TNSR_MAGIC} {TNSR_VERSION} {} {}",
            self.dtype,
            self.dims.len()
        );
        for d in &self.dims {
            line.push(' ');
            line.push_str(&d.to_string());
        }
        line.push('\n');
        line
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = |msg: &str| Error::format("TNSR header", msg.to_string());
        let mut parts = line.split_ascii_whitespace();
        if parts.next() != Some(TNSR_MAGIC) {
            return Err(bad("missing magic"));
        }
        if parts.next() != Some(TNSR_VERSION) {
            return Err(bad("unsupported version"));
        }
        let dtype = parts.next().ok_or_else(|| bad("missing dtype"))?;
        if dtype != "f32" {
            return Err(bad(&format!("unsupported dtype `{dtype}`")));
        }
        let ndim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad ndim"))?;
        let dims = parts
            .map(|s| s.parse::<usize>().map_err(|_| bad("bad dim")))
            .collect::<Result<Vec<_>>>()?;
        if dims.len() != ndim {
            return Err(bad("ndim does not match dims"));
        }
        Ok(TnsrHeader {
            dtype: dtype.to_string(),
            dims,
        })
    }
}

/// Encodes a tensor into TNSR bytes.
pub fn encode_tnsr(tensor: &ArrayD<f64>) -> Vec<u8> {
    let header = TnsrHeader {
        dtype: "f32".into(),
        dims: tensor.shape().to_vec(),
    };
    let mut out = header.to_line().into_bytes();
    out.reserve(tensor.len() * 4);
    for &v in tensor.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Reads one TNSR blob from a stream.
pub fn read_tnsr_from<R: BufRead>(reader: &mut R) -> Result<ArrayD<f64>> {
    let mut line = String::new();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::format("TNSR header", e.to_string()))?;
    let header = TnsrHeader::parse(line.trim_end_matches('\n'))?;
    let mut payload = vec![0u8; header.numel() * 4];
    reader
        .read_exact(&mut payload)
        .map_err(|_| Error::format("TNSR payload", "truncated payload"))?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ArrayD::from_shape_vec(IxDyn(&header.dims), data)
        .map_err(|e| Error::format("TNSR payload", e.to_string()))
}

pub fn decode_tnsr(bytes: &[u8]) -> Result<ArrayD<f64>> {
    let mut cursor = std::io::Cursor::new(bytes);
    read_tnsr_from(&mut cursor)
}

pub fn write_tnsr(path: impl AsRef<Path>, tensor: &ArrayD<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_tnsr(tensor))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_tnsr(path: impl AsRef<Path>) -> Result<ArrayD<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tnsr_from(&mut BufReader::new(file))
}

/// Reads only the header line of a TNSR file.
pub fn read_tnsr_header(path: impl AsRef<Path>) -> Result<TnsrHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file)
        .read_line(&mut line)
        .map_err(|e| Error::io(path, e))?;
    TnsrHeader::parse(line.trim_end())
}

/// Writes an 8-bit binary PGM of a `[rows x cols]` image with values in [0,1].
/// Row 0 is drawn at the bottom so low mel bands sit low in the picture.
pub fn write_pgm(path: impl AsRef<Path>, image: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = image.dim();
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in (0..rows).rev() {
        for c in 0..cols {
            let v = image[[r, c]].clamp(0.0, 1.0);
            bytes.push((v * 255.0).round() as u8);
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn header_line_format() {
        let t = Array3::<f64>::zeros((2, 3, 4)).into_dyn();
        let bytes = encode_tnsr(&t);
        let line_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(&bytes[..line_end], b"TNSR v1 f32 3 2 3 4");
        assert_eq!(bytes.len(), line_end + 1 + 24 * 4);
    }

    #[test]
    fn payload_is_little_endian_row_major() {
        let t = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn();
        let bytes = encode_tnsr(&t);
        let start = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(&bytes[start..start + 4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[start + 4..start + 8], &2.0f32.to_le_bytes());
        assert_eq!(&bytes[start + 8..start + 12], &3.0f32.to_le_bytes());
        let back = decode_tnsr(&bytes).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(TnsrHeader::parse("TNSR v2 f32 1 3").is_err());
        assert!(TnsrHeader::parse("TNSR v1 f64 1 3").is_err());
        assert!(TnsrHeader::parse("TNSR v1 f32 2 3").is_err());
        assert!(TnsrHeader::parse("XXXX v1 f32 1 3").is_err());
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let t = Array3::<f64>::ones((1, 2, 2)).into_dyn();
        let bytes = encode_tnsr(&t);
        assert!(decode_tnsr(&bytes[..bytes.len() - 1]).is_err());
    }
}
