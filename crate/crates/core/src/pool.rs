//! Indexed reference pool of one target speaker's frames.
//!
//! Two lookups back frame selection: exact unit-subsequence occurrences
//! (an n-gram index over every window of length `min_len..=max_len`) and the
//! per-cluster frame lists used for inverse k-means sampling. Windows never
//! cross utterance boundaries.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;
use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Codebook, FeatureMatrix, UnitSequence, Utterance};

pub const DEFAULT_MIN_LEN: usize = 2;
pub const DEFAULT_MAX_LEN: usize = 10;

pub const POOL_MAGIC: [u8; 4] = *b"USPL";
pub const POOL_VERSION: u32 = 1;

/// A frame of the pool: utterance ordinal plus position within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub utterance_ordinal: u32,
    pub frame_index: u32,
}

/// Start of a contiguous match inside one reference utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Occurrence {
    pub utterance_ordinal: u32,
    pub start_frame: u32,
}

impl Occurrence {
    /// The `offset`-th frame of the matched span.
    pub fn frame(&self, offset: usize) -> FrameRef {
        FrameRef {
            utterance_ordinal: self.utterance_ordinal,
            frame_index: self.start_frame + offset as u32,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
fn extend_hash(h: u64, unit: u32) -> u64 {
    (h ^ unit as u64).wrapping_mul(FNV_PRIME)
}

fn window_hash(units: &[u32]) -> u64 {
    units.iter().fold(FNV_OFFSET, |h, &u| extend_hash(h, u))
}

/// Windows of one length: hash → run of global start positions in `starts`.
/// Hash collisions are resolved at query time by comparing units.
#[derive(Debug, Default)]
struct WindowTable {
    buckets: FxHashMap<u64, (u32, u32)>,
    starts: Vec<u32>,
}

impl WindowTable {
    fn build(mut entries: Vec<(u64, u32)>) -> Self {
        entries.sort_unstable();
        let mut buckets = FxHashMap::default();
        let mut starts = Vec::with_capacity(entries.len());
        let mut i = 0;
        while i < entries.len() {
            let h = entries[i].0;
            let begin = starts.len() as u32;
            while i < entries.len() && entries[i].0 == h {
                starts.push(entries[i].1);
                i += 1;
            }
            buckets.insert(h, (begin, starts.len() as u32 - begin));
        }
        Self { buckets, starts }
    }

    fn candidates(&self, h: u64) -> &[u32] {
        match self.buckets.get(&h) {
            Some(&(begin, len)) => &self.starts[begin as usize..(begin + len) as usize],
            None => &[],
        }
    }
}

/// Immutable, indexed collection of a speaker's reference utterances.
#[derive(Debug)]
pub struct ReferencePool {
    utterances: Vec<Arc<Utterance>>,
    /// Global frame offset of each utterance, plus the total at the end.
    offsets: Vec<u32>,
    units: Vec<u32>,
    k: u32,
    dim: usize,
    fingerprint: [u8; 32],
    min_len: usize,
    max_len: usize,
    clusters: Vec<Vec<FrameRef>>,
    cluster_means: Vec<Option<Box<[f32]>>>,
    windows: Vec<WindowTable>,
}

/// Builds a pool over `refs` in the given order.
///
/// Each utterance's units must come from `cb`; the pool remembers the
/// codebook's fingerprint and refuses to be used with any other.
pub fn build_pool<I>(
    refs: I,
    cb: &Codebook,
    min_len: usize,
    max_len: usize,
) -> Result<ReferencePool>
where
    I: IntoIterator,
    I::Item: Into<Arc<Utterance>>,
{
    let utterances: Vec<Arc<Utterance>> = refs.into_iter().map(Into::into).collect();
    for u in &utterances {
        if u.units().k() as usize != cb.k() {
            return Err(Error::CodebookSizeMismatch {
                units_k: u.units().k(),
                codebook_k: cb.k() as u32,
            });
        }
    }
    ReferencePool::from_parts(
        utterances,
        cb.k() as u32,
        cb.dim(),
        *cb.fingerprint(),
        min_len,
        max_len,
    )
}

impl ReferencePool {
    fn from_parts(
        utterances: Vec<Arc<Utterance>>,
        k: u32,
        dim: usize,
        fingerprint: [u8; 32],
        min_len: usize,
        max_len: usize,
    ) -> Result<Self> {
        if min_len == 0 || min_len > max_len {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= min_len <= max_len, got min_len = {min_len}, max_len = {max_len}"
            )));
        }
        if utterances.is_empty() {
            return Err(Error::EmptyPool);
        }

        let mut offsets = Vec::with_capacity(utterances.len() + 1);
        let mut units = Vec::new();
        for u in &utterances {
            if u.features().dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: u.features().dim(),
                });
            }
            if let Some(position) = u.units().units().iter().position(|&x| x >= k) {
                return Err(Error::UnitOutOfRange {
                    position,
                    unit: u.units().units()[position],
                    k,
                });
            }
            offsets.push(
                u32::try_from(units.len())
                    .map_err(|_| Error::Shape("pool exceeds u32 frames".into()))?,
            );
            units.extend_from_slice(u.units().units());
        }
        offsets.push(
            u32::try_from(units.len())
                .map_err(|_| Error::Shape("pool exceeds u32 frames".into()))?,
        );

        let mut clusters = vec![Vec::new(); k as usize];
        let mut sums: FxHashMap<u32, Vec<f64>> = FxHashMap::default();
        for (ordinal, u) in utterances.iter().enumerate() {
            for (t, (&unit, row)) in u
                .units()
                .units()
                .iter()
                .zip(u.features().iter_rows())
                .enumerate()
            {
                clusters[unit as usize].push(FrameRef {
                    utterance_ordinal: ordinal as u32,
                    frame_index: t as u32,
                });
                let acc = sums.entry(unit).or_insert_with(|| vec![0.0; dim]);
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v as f64;
                }
            }
        }
        let cluster_means = clusters
            .iter()
            .enumerate()
            .map(|(c, members)| {
                sums.get(&(c as u32)).map(|s| {
                    let n = members.len() as f64;
                    s.iter().map(|&v| (v / n) as f32).collect::<Box<[f32]>>()
                })
            })
            .collect();

        let lengths = max_len - min_len + 1;
        let mut entries: Vec<Vec<(u64, u32)>> = vec![Vec::new(); lengths];
        for (ordinal, u) in utterances.iter().enumerate() {
            let seq = u.units().units();
            let base = offsets[ordinal];
            for start in 0..seq.len() {
                let mut h = FNV_OFFSET;
                for (len, &unit) in seq[start..].iter().take(max_len).enumerate() {
                    h = extend_hash(h, unit);
                    let len = len + 1;
                    if len >= min_len {
                        entries[len - min_len].push((h, base + start as u32));
                    }
                }
            }
        }
        let windows = entries.into_iter().map(WindowTable::build).collect();

        Ok(Self {
            utterances,
            offsets,
            units,
            k,
            dim,
            fingerprint,
            min_len,
            max_len,
            clusters,
            cluster_means,
            windows,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn min_len(&self) -> usize {
        self.min_len
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    /// Fails unless the pool was built against `cb`.
    pub fn check_codebook(&self, cb: &Codebook) -> Result<()> {
        if cb.fingerprint() != &self.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        Ok(())
    }

    pub fn num_utterances(&self) -> usize {
        self.utterances.len()
    }

    pub fn total_frames(&self) -> usize {
        self.units.len()
    }

    pub fn utterance(&self, ordinal: usize) -> &Utterance {
        &self.utterances[ordinal]
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().map(|u| &**u)
    }

    /// Utterance ids indexed by ordinal.
    pub fn utterance_ids(&self) -> Vec<String> {
        self.utterances.iter().map(|u| u.id().to_string()).collect()
    }

    pub fn unit_at(&self, f: FrameRef) -> u32 {
        self.utterances[f.utterance_ordinal as usize]
            .units()
            .units()[f.frame_index as usize]
    }

    pub fn features_at(&self, f: FrameRef) -> &[f32] {
        self.utterances[f.utterance_ordinal as usize]
            .features()
            .row(f.frame_index as usize)
    }

    /// Frame count per cluster.
    pub fn occupancy(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    /// Frames whose unit is `unit`, in `(utterance, frame)` order.
    pub fn frames_in_cluster(&self, unit: u32) -> Result<&[FrameRef]> {
        self.clusters
            .get(unit as usize)
            .map(Vec::as_slice)
            .ok_or(Error::UnitOutOfRange {
                position: 0,
                unit,
                k: self.k,
            })
    }

    /// Mean of a cluster's frames, accumulated in f64 in canonical frame order.
    /// `None` for clusters with no frames.
    pub fn cluster_mean(&self, unit: u32) -> Option<&[f32]> {
        self.cluster_means.get(unit as usize)?.as_deref()
    }

    fn check_query(&self, query: &[u32]) -> Result<()> {
        if query.len() < self.min_len || query.len() > self.max_len {
            return Err(Error::QueryLength {
                len: query.len(),
                min: self.min_len,
                max: self.max_len,
            });
        }
        Ok(())
    }

    fn locate(&self, global: u32) -> Occurrence {
        let ordinal = self.offsets.partition_point(|&o| o <= global) - 1;
        Occurrence {
            utterance_ordinal: ordinal as u32,
            start_frame: global - self.offsets[ordinal],
        }
    }

    fn matches(&self, query: &[u32]) -> impl Iterator<Item = u32> + '_ {
        let table = &self.windows[query.len() - self.min_len];
        let query = query.to_vec();
        table
            .candidates(window_hash(&query))
            .iter()
            .copied()
            .filter(move |&g| self.units[g as usize..g as usize + query.len()] == query[..])
    }

    /// Every contiguous occurrence of `query`, ordered by utterance then start frame.
    pub fn find_occurrences(&self, query: &[u32]) -> Result<Vec<Occurrence>> {
        self.check_query(query)?;
        Ok(self.matches(query).map(|g| self.locate(g)).collect())
    }

    /// The canonical-order first occurrence of `query`, if any.
    pub fn first_occurrence(&self, query: &[u32]) -> Result<Option<Occurrence>> {
        self.check_query(query)?;
        Ok(self.matches(query).next().map(|g| self.locate(g)))
    }

    /// Serializes the pool to a `USPL` cache file. Indexes are rebuilt on load.
    ///
    /// Layout (little-endian): magic, `u32` version, `u32` min_len,
    /// `u32` max_len, `u32` K, `u32` D, 32-byte codebook fingerprint,
    /// `u32` utterance count, then per utterance `u32` id length, id bytes,
    /// `u32` T, `T` u32 units and `T·D` f32 features.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&POOL_MAGIC);
        for v in [
            POOL_VERSION,
            self.min_len as u32,
            self.max_len as u32,
            self.k,
            self.dim as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&(self.utterances.len() as u32).to_le_bytes());
        for u in &self.utterances {
            out.extend_from_slice(&(u.id().len() as u32).to_le_bytes());
            out.extend_from_slice(u.id().as_bytes());
            out.extend_from_slice(&(u.len() as u32).to_le_bytes());
            for x in u.units().units() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for x in u.features().as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if magic != POOL_MAGIC {
            return Err(Error::BadMagic {
                expected: POOL_MAGIC,
                found: magic,
            });
        }
        let version = read_u32(&mut r)?;
        if version != POOL_VERSION {
            return Err(Error::UnsupportedVersion {
                format: "USPL",
                expected: POOL_VERSION,
                found: version,
            });
        }
        let min_len = read_u32(&mut r)? as usize;
        let max_len = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)?;
        let dim = read_u32(&mut r)? as usize;
        let mut fingerprint = [0u8; 32];
        read_exact(&mut r, &mut fingerprint)?;
        let count = read_u32(&mut r)?;
        let mut utterances = Vec::new();
        for _ in 0..count {
            let id_len = read_u32(&mut r)? as usize;
            let id = String::from_utf8(read_vec(&mut r, id_len)?)
                .map_err(|_| Error::Shape("utterance id is not UTF-8".into()))?;
            let t = read_u32(&mut r)? as usize;
            let units = read_vec(&mut r, t * 4)?
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let feats = read_vec(&mut r, t * dim * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let units = UnitSequence::new(id.clone(), units, k)?;
            let features = FeatureMatrix::new(id, dim, feats)?;
            utterances.push(Arc::new(Utterance::new(units, features)?));
        }
        let extra = bytes.len() - r.position() as usize;
        if extra > 0 {
            return Err(Error::TrailingBytes {
                format: "USPL",
                extra,
            });
        }
        Self::from_parts(utterances, k, dim, fingerprint, min_len, max_len)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn read_exact(r: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    let remaining = r.get_ref().len() - r.position() as usize;
    r.read_exact(buf).map_err(|_| Error::Truncated {
        format: "USPL",
        expected: buf.len(),
        found: remaining,
    })
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_vec(r: &mut Cursor<&[u8]>, len: usize) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(Error::Truncated {
            format: "USPL",
            expected: len,
            found: remaining,
        });
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

/// Naive scan with the same contract as [`ReferencePool::find_occurrences`].
/// Kept as the reference the index is checked against.
pub fn brute_force_find(pool: &ReferencePool, query: &[u32]) -> Result<Vec<Occurrence>> {
    pool.check_query(query)?;
    let mut out = Vec::new();
    for (ordinal, u) in pool.utterances().enumerate() {
        let seq = u.units().units();
        if seq.len() < query.len() {
            continue;
        }
        for start in 0..=seq.len() - query.len() {
            if seq[start..start + query.len()] == *query {
                out.push(Occurrence {
                    utterance_ordinal: ordinal as u32,
                    start_frame: start as u32,
                });
            }
        }
    }
    Ok(out)
}
