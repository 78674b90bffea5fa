//! `TDF1` binary feature files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `TDF1` |
//! | 4 | version (`u32`, currently 1) |
//! | 4 | `T` (`u32`) |
//! | 4 | `D` (`u32`) |
//! | 4 | stride (`u32`) |
//! | 1 | stream tag (`u8`: 0 temporal-level, 1 spatial-level) |
//! | `4·T·D` | row-major `f32` payload |

use std::path::Path;

use thiserror::Error;
use tridet_autograd::Tensor;

use crate::error::{Error, Result};
use crate::sequence::{FeatureSequence, Stream};

pub const MAGIC: &[u8; 4] = b"TDF1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 21;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureFileError {
    #[error("bad magic {0:?}, expected \"TDF1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}, expected {FORMAT_VERSION}")]
    UnsupportedVersion(u32),
    #[error("truncated header: expected {HEADER_LEN} bytes, got {0}")]
    TruncatedHeader(usize),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing data: expected {expected} payload bytes, got {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("empty feature file: T = {t}, D = {d}")]
    Empty { t: usize, d: usize },
    #[error("zero stride")]
    ZeroStride,
    #[error("unknown stream tag {0}")]
    UnknownStream(u8),
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

pub fn encode_feature_file(seq: &FeatureSequence) -> Vec<u8> {
    let (t, d) = (seq.len(), seq.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * d);
    out.extend_from_slice(MAGIC);
    for v in [FORMAT_VERSION, t as u32, d as u32, seq.stride as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(seq.stream.tag());
    for &v in seq.features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<FeatureSequence, FeatureFileError> {
    if bytes.len() < 4 {
        return Err(FeatureFileError::TruncatedHeader(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if &magic != MAGIC {
        return Err(FeatureFileError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FeatureFileError::TruncatedHeader(bytes.len()));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(FeatureFileError::UnsupportedVersion(version));
    }
    let t = u32_at(bytes, 8) as usize;
    let d = u32_at(bytes, 12) as usize;
    let stride = u32_at(bytes, 16) as usize;
    let stream = Stream::from_tag(bytes[20]).ok_or(FeatureFileError::UnknownStream(bytes[20]))?;
    if t == 0 || d == 0 {
        return Err(FeatureFileError::Empty { t, d });
    }
    if stride == 0 {
        return Err(FeatureFileError::ZeroStride);
    }
    let expected = 4 * t * d;
    let actual = bytes.len() - HEADER_LEN;
    if actual < expected {
        return Err(FeatureFileError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(FeatureFileError::TrailingBytes { expected, actual });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    let features = Tensor::new(vec![t, d], data).expect("length checked");
    Ok(FeatureSequence {
        features,
        stride,
        stream,
    })
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(decode_feature_file(&bytes)?)
}

pub fn write_feature_file(seq: &FeatureSequence, path: &Path) -> Result<()> {
    std::fs::write(path, encode_feature_file(seq))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
