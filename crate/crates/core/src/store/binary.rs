use std::fs;
use std::path::Path;

use super::{Codebook, FeatureMatrix, UnitSequence};
use crate::error::{Error, Result};

pub const FEATURES_MAGIC: [u8; 4] = *b"USFM";
pub const UNITS_MAGIC: [u8; 4] = *b"USUQ";
pub const CODEBOOK_MAGIC: [u8; 4] = *b"USCB";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 16;

fn header(magic: [u8; 4], a: usize, b: usize, payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(a as u32).to_le_bytes());
    out.extend_from_slice(&(b as u32).to_le_bytes());
    out
}

fn le_u32(bytes: &[u8]) -> u32 {
    u32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
}

/// Validates the header and payload length; returns the two header dimensions
/// and the payload slice.
fn parse<'a>(
    bytes: &'a [u8],
    magic: [u8; 4],
    format: &'static str,
    elems: impl FnOnce(u32, u32) -> u64,
) -> Result<(u32, u32, &'a [u8])> {
    if bytes.len() >= 4 && bytes[..4] != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found: bytes[..4].try_into().unwrap(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            format,
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = le_u32(&bytes[4..8]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            format,
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let a = le_u32(&bytes[8..12]);
    let b = le_u32(&bytes[12..16]);
    let payload = &bytes[HEADER_LEN..];
    let expected = elems(a, b) * 4;
    if (payload.len() as u64) < expected {
        return Err(Error::Truncated {
            format,
            expected: usize::try_from(expected).unwrap_or(usize::MAX),
            found: payload.len(),
        });
    }
    if payload.len() as u64 > expected {
        return Err(Error::TrailingBytes {
            format,
            extra: payload.len() - expected as usize,
        });
    }
    Ok((a, b, payload))
}

fn f32s(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn encode_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = header(FEATURES_MAGIC, m.rows(), m.dim(), m.as_slice().len() * 4);
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a `USFM` buffer. The format carries no id, so the caller supplies one.
pub fn decode_features(bytes: &[u8], utterance_id: impl Into<String>) -> Result<FeatureMatrix> {
    let (rows, dim, payload) = parse(bytes, FEATURES_MAGIC, "USFM", |t, d| t as u64 * d as u64)?;
    if rows == 0 || dim == 0 {
        return Err(Error::Shape(format!(
            "feature file declares T = {rows}, D = {dim}"
        )));
    }
    FeatureMatrix::new(utterance_id, dim as usize, f32s(payload))
}

pub fn encode_units(u: &UnitSequence) -> Vec<u8> {
    let mut out = header(UNITS_MAGIC, u.len(), u.k() as usize, u.len() * 4);
    for v in u.units() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_units(bytes: &[u8], utterance_id: impl Into<String>) -> Result<UnitSequence> {
    let (_, k, payload) = parse(bytes, UNITS_MAGIC, "USUQ", |t, _| t as u64)?;
    let units = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    UnitSequence::new(utterance_id, units, k)
}

pub fn encode_codebook(cb: &Codebook) -> Vec<u8> {
    let mut out = header(CODEBOOK_MAGIC, cb.k(), cb.dim(), cb.as_slice().len() * 4);
    for v in cb.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let (k, dim, payload) = parse(bytes, CODEBOOK_MAGIC, "USCB", |k, d| k as u64 * d as u64)?;
    if k == 0 || dim == 0 {
        return Err(Error::Shape(format!(
            "codebook file declares K = {k}, D = {dim}"
        )));
    }
    Codebook::new(dim as usize, f32s(payload))
}

pub fn write_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_features(m))
}

/// Reads a `USFM` file; the utterance id is taken from the file stem.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    decode_features(&read_file(path)?, stem(path))
}

pub fn write_units(u: &UnitSequence, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_units(u))
}

/// Reads a `USUQ` file; the utterance id is taken from the file stem.
pub fn read_units(path: impl AsRef<Path>) -> Result<UnitSequence> {
    let path = path.as_ref();
    decode_units(&read_file(path)?, stem(path))
}

pub fn write_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_codebook(cb))
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    decode_codebook(&read_file(path.as_ref())?)
}
