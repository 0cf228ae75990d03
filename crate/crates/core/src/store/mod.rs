//! Core data types and their on-disk formats.
//!
//! Three little-endian binary formats share a 16-byte header
//! (`magic`, `u32 version`, two `u32` dimensions) followed by a raw payload:
//!
//! | magic  | dims    | payload                 |
//! |--------|---------|-------------------------|
//! | `USFM` | `T, D`  | `T·D` f32, row-major    |
//! | `USUQ` | `T, K`  | `T` u32 unit ids        |
//! | `USCB` | `K, D`  | `K·D` f32, row-major    |
//!
//! Datasets are described by a JSON-lines [`Manifest`].

mod binary;
mod manifest;

use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use binary::{
    decode_codebook, decode_features, decode_units, encode_codebook, encode_features, encode_units,
    read_codebook, read_features, read_units, write_codebook, write_features, write_units,
    CODEBOOK_MAGIC, FEATURES_MAGIC, FORMAT_VERSION, UNITS_MAGIC,
};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestEntry};

/// Frame hop of the features this engine is tuned for: one frame per 20 ms of 16 kHz audio.
pub const DEFAULT_FRAME_HOP_MS: u32 = 20;

fn check_finite(data: &[f32], dim: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            row: i / dim,
            col: i % dim,
            value: data[i],
        }),
        None => Ok(()),
    }
}

/// `T×D` frame-level continuous features of one utterance.
#[derive(Clone, PartialEq)]
pub struct FeatureMatrix {
    utterance_id: String,
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    frame_hop_ms: u32,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major `data` with `dim` columns.
    pub fn new(utterance_id: impl Into<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be at least 1".into()));
        }
        if data.is_empty() {
            return Err(Error::Shape(
                "feature matrix needs at least one frame".into(),
            ));
        }
        if data.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values do not divide into rows of {dim}",
                data.len()
            )));
        }
        check_finite(&data, dim)?;
        Ok(Self {
            utterance_id: utterance_id.into(),
            rows: data.len() / dim,
            dim,
            data,
            frame_hop_ms: DEFAULT_FRAME_HOP_MS,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(utterance_id: impl Into<String>, rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(utterance_id, dim, data)
    }

    /// Stacks the rows of several matrices of equal dimension.
    pub fn concat<'a>(
        utterance_id: impl Into<String>,
        parts: impl IntoIterator<Item = &'a FeatureMatrix>,
    ) -> Result<Self> {
        let mut dim = None;
        let mut data = Vec::new();
        for m in parts {
            match dim {
                None => dim = Some(m.dim),
                Some(d) if d != m.dim => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: m.dim,
                    })
                }
                Some(_) => {}
            }
            data.extend_from_slice(&m.data);
        }
        Self::new(utterance_id, dim.unwrap_or(0), data)
    }

    pub fn with_frame_hop_ms(mut self, hop: u32) -> Self {
        assert!(hop > 0, "frame hop must be positive");
        self.frame_hop_ms = hop;
        self
    }

    pub fn with_utterance_id(mut self, id: impl Into<String>) -> Self {
        self.utterance_id = id.into();
        self
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    /// Number of frames `T`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_hop_ms(&self) -> u32 {
        self.frame_hop_ms
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

impl fmt::Debug for FeatureMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureMatrix")
            .field("utterance_id", &self.utterance_id)
            .field("rows", &self.rows)
            .field("dim", &self.dim)
            .field("frame_hop_ms", &self.frame_hop_ms)
            .finish_non_exhaustive()
    }
}

/// Discrete unit ids for one utterance, each in `[0, K)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitSequence {
    utterance_id: String,
    units: Vec<u32>,
    k: u32,
}

impl UnitSequence {
    pub fn new(utterance_id: impl Into<String>, units: Vec<u32>, k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::Shape("codebook size K must be at least 1".into()));
        }
        if let Some(position) = units.iter().position(|&u| u >= k) {
            return Err(Error::UnitOutOfRange {
                position,
                unit: units[position],
                k,
            });
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            units,
            k,
        })
    }

    pub fn with_utterance_id(mut self, id: impl Into<String>) -> Self {
        self.utterance_id = id.into();
        self
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn units(&self) -> &[u32] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Codebook size the ids were drawn from.
    pub fn k(&self) -> u32 {
        self.k
    }
}

/// An utterance's unit sequence paired with its features, frame for frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    units: UnitSequence,
    features: FeatureMatrix,
}

impl Utterance {
    /// Pairs `units` with `features`; the units take the features' utterance id.
    pub fn new(units: UnitSequence, features: FeatureMatrix) -> Result<Self> {
        if units.len() != features.rows() {
            return Err(Error::LengthMismatch {
                utterance_id: features.utterance_id().to_string(),
                units: units.len(),
                frames: features.rows(),
            });
        }
        let units = units.with_utterance_id(features.utterance_id());
        Ok(Self { units, features })
    }

    pub fn id(&self) -> &str {
        self.features.utterance_id()
    }

    pub fn units(&self) -> &UnitSequence {
        &self.units
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// `K×D` k-means centroids defining the discrete unit space.
///
/// The SHA-256 of the codebook's `USCB` encoding is computed once at
/// construction and used to bind reference pools to the codebook that
/// produced their units.
#[derive(Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
    fingerprint: [u8; 32],
}

impl Codebook {
    pub fn new(dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("codebook dimension must be at least 1".into()));
        }
        if centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} centroid values do not form K ≥ 1 rows of {dim}",
                centroids.len()
            )));
        }
        let k = centroids.len() / dim;
        if u32::try_from(k).is_err() {
            return Err(Error::Shape(format!("K = {k} does not fit in u32")));
        }
        check_finite(&centroids, dim)?;
        let mut cb = Self {
            k,
            dim,
            centroids,
            fingerprint: [0; 32],
        };
        cb.fingerprint = Sha256::digest(encode_codebook(&cb)).into();
        Ok(cb)
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(Error::Shape("ragged centroid rows".into()));
        }
        Self::new(
            dim,
            rows.iter()
                .flat_map(|r| r.as_ref().iter().copied())
                .collect(),
        )
    }

    /// Number of clusters `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.centroids
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl fmt::Debug for Codebook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Codebook")
            .field("k", &self.k)
            .field("dim", &self.dim)
            .field("fingerprint", &&self.fingerprint_hex()[..16])
            .finish_non_exhaustive()
    }
}
