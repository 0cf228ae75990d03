//! Frame selection: greedy longest-first subsequence matching against the
//! reference pool, then inverse k-means sampling for the frames left over.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::pool::{
    build_pool, FrameRef, Occurrence, ReferencePool, DEFAULT_MAX_LEN, DEFAULT_MIN_LEN,
};
use crate::store::{Codebook, FeatureMatrix, UnitSequence, Utterance};
use crate::tokenizer::nearest_nonempty_cluster;

/// How an unmatched frame's feature is recovered from its cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// One cluster member drawn uniformly.
    Random,
    /// Mean of all cluster members.
    Average,
}

/// Which occurrence a matched window copies when the pool holds several.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccurrencePolicy {
    /// Lowest utterance ordinal, then lowest start frame.
    Earliest,
    /// Uniform over all occurrences, from the selection's generator.
    SeededRandom,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionConfig {
    pub max_len: usize,
    pub min_len: usize,
    pub sampling_mode: SamplingMode,
    pub occurrence_policy: OccurrencePolicy,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            min_len: DEFAULT_MIN_LEN,
            sampling_mode: SamplingMode::Average,
            occurrence_policy: OccurrencePolicy::Earliest,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= min_len <= max_len, got min_len = {}, max_len = {}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    fn check_pool(&self, pool: &ReferencePool) -> Result<()> {
        self.validate()?;
        if self.min_len < pool.min_len() || self.max_len > pool.max_len() {
            return Err(Error::InvalidConfig(format!(
                "match lengths [{}, {}] exceed the pool's index range [{}, {}]",
                self.min_len,
                self.max_len,
                pool.min_len(),
                pool.max_len()
            )));
        }
        Ok(())
    }
}

/// A run of predicted positions replaced by a contiguous reference span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedSegment {
    /// Order in which the greedy scan found the segment.
    pub segment_id: usize,
    /// First covered position in the predicted sequence.
    pub start: usize,
    pub len: usize,
    pub source: Occurrence,
}

impl MatchedSegment {
    pub fn positions(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Result of subsequence matching alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchCover {
    pub segments: Vec<MatchedSegment>,
    pub len: usize,
}

impl MatchCover {
    pub fn covered_frames(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn coverage(&self) -> f64 {
        self.covered_frames() as f64 / self.len as f64
    }
}

/// Where one output frame came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Matched {
        segment_id: usize,
        source: FrameRef,
    },
    Sampled {
        requested_unit: u32,
        resolved_cluster: u32,
        mode: SamplingMode,
        /// The drawn frame (random) or every cluster member (average).
        sources: Vec<FrameRef>,
    },
}

impl Provenance {
    pub fn is_matched(&self) -> bool {
        matches!(self, Provenance::Matched { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub features: FeatureMatrix,
    pub trace: Vec<Provenance>,
    pub segments: Vec<MatchedSegment>,
    pub matched_frames: usize,
    /// Fraction of frames produced by subsequence matching.
    pub coverage: f64,
}

fn check_inputs(
    predicted: &UnitSequence,
    pool: &ReferencePool,
    cb: &Codebook,
    cfg: &SelectionConfig,
) -> Result<()> {
    pool.check_codebook(cb)?;
    cfg.check_pool(pool)?;
    if predicted.k() as usize != cb.k() {
        return Err(Error::CodebookSizeMismatch {
            units_k: predicted.k(),
            codebook_k: cb.k() as u32,
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

fn greedy_cover(
    predicted: &[u32],
    pool: &ReferencePool,
    cfg: &SelectionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MatchedSegment>> {
    let n = predicted.len();
    let mut covered = vec![false; n];
    let mut segments = Vec::new();
    for len in (cfg.min_len..=cfg.max_len.min(n)).rev() {
        let mut i = 0;
        while i + len <= n {
            // every window starting at or before a covered position overlaps it
            if let Some(last) = covered[i..i + len].iter().rposition(|&c| c) {
                i += last + 1;
                continue;
            }
            let window = &predicted[i..i + len];
            let found = match cfg.occurrence_policy {
                OccurrencePolicy::Earliest => pool.first_occurrence(window)?,
                OccurrencePolicy::SeededRandom => {
                    let all = pool.find_occurrences(window)?;
                    (!all.is_empty()).then(|| all[rng.random_range(0..all.len())])
                }
            };
            match found {
                Some(source) => {
                    covered[i..i + len].fill(true);
                    segments.push(MatchedSegment {
                        segment_id: segments.len(),
                        start: i,
                        len,
                        source,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
    }
    Ok(segments)
}

/// Greedy longest-first cover of `predicted` by reference segments.
///
/// For each length from `max_len` down to `min_len`, windows are scanned left
/// to right; a window made only of uncovered positions that occurs in the
/// pool is covered and the scan resumes right after it.
pub fn subsequence_match(
    predicted: &UnitSequence,
    pool: &ReferencePool,
    cb: &Codebook,
    cfg: &SelectionConfig,
) -> Result<MatchCover> {
    check_inputs(predicted, pool, cb, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(MatchCover {
        segments: greedy_cover(predicted.units(), pool, cfg, &mut rng)?,
        len: predicted.len(),
    })
}

/// Inverse k-means lookups with the nearest-nonempty fallback memoized.
struct Sampler<'a> {
    pool: &'a ReferencePool,
    cb: &'a Codebook,
    occupancy: Vec<usize>,
    resolved: FxHashMap<u32, u32>,
}

impl<'a> Sampler<'a> {
    fn new(pool: &'a ReferencePool, cb: &'a Codebook) -> Self {
        Self {
            pool,
            cb,
            occupancy: pool.occupancy(),
            resolved: FxHashMap::default(),
        }
    }

    fn sample<R: Rng + ?Sized>(
        &mut self,
        unit: u32,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<(Vec<f32>, Provenance)> {
        let cluster = match self.resolved.get(&unit) {
            Some(&c) => c,
            None => {
                let c = nearest_nonempty_cluster(unit, &self.occupancy, self.cb)?;
                self.resolved.insert(unit, c);
                c
            }
        };
        let members = self.pool.frames_in_cluster(cluster)?;
        let (vector, sources) = match mode {
            SamplingMode::Random => {
                let pick = members[rng.random_range(0..members.len())];
                (self.pool.features_at(pick).to_vec(), vec![pick])
            }
            SamplingMode::Average => {
                let mean = self
                    .pool
                    .cluster_mean(cluster)
                    .expect("occupied cluster has a mean");
                (mean.to_vec(), members.to_vec())
            }
        };
        Ok((
            vector,
            Provenance::Sampled {
                requested_unit: unit,
                resolved_cluster: cluster,
                mode,
                sources,
            },
        ))
    }
}

/// Recovers a continuous feature for `unit` from the pool's frames of the
/// same cluster, or of the nearest occupied cluster when `unit` has none.
pub fn inverse_kmeans_sample<R: Rng + ?Sized>(
    unit: u32,
    pool: &ReferencePool,
    cb: &Codebook,
    cfg: &SelectionConfig,
    rng: &mut R,
) -> Result<(Vec<f32>, Provenance)> {
    pool.check_codebook(cb)?;
    if pool.total_frames() == 0 {
        return Err(Error::EmptyPool);
    }
    Sampler::new(pool, cb).sample(unit, cfg.sampling_mode, rng)
}

/// Selects a feature frame from `pool` for every unit of `predicted`.
///
/// Matching runs first; remaining positions are then sampled left to right.
/// One ChaCha8 stream seeded from `cfg.seed` drives both stages, so the
/// result is a pure function of the inputs.
pub fn select_frames(
    predicted: &UnitSequence,
    pool: &ReferencePool,
    cb: &Codebook,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    check_inputs(predicted, pool, cb, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let units = predicted.units();
    let n = units.len();
    let dim = pool.dim();

    let segments = greedy_cover(units, pool, cfg, &mut rng)?;
    let mut trace: Vec<Option<Provenance>> = vec![None; n];
    let mut data = vec![0f32; n * dim];
    for seg in &segments {
        for (offset, pos) in seg.positions().enumerate() {
            let source = seg.source.frame(offset);
            data[pos * dim..(pos + 1) * dim].copy_from_slice(pool.features_at(source));
            trace[pos] = Some(Provenance::Matched {
                segment_id: seg.segment_id,
                source,
            });
        }
    }

    let mut sampler = Sampler::new(pool, cb);
    for pos in 0..n {
        if trace[pos].is_some() {
            continue;
        }
        let (vector, prov) = sampler.sample(units[pos], cfg.sampling_mode, &mut rng)?;
        data[pos * dim..(pos + 1) * dim].copy_from_slice(&vector);
        trace[pos] = Some(prov);
    }

    let matched_frames = segments.iter().map(|s| s.len).sum();
    Ok(SelectionResult {
        features: FeatureMatrix::new(predicted.utterance_id(), dim, data)?,
        trace: trace
            .into_iter()
            .map(|p| p.expect("every position filled"))
            .collect(),
        segments,
        matched_frames,
        coverage: matched_frames as f64 / n as f64,
    })
}

/// Vocoder training inputs: every utterance of one speaker re-synthesized
/// from a pool of all the speaker's other utterances, using its own
/// ground-truth units as the prediction.
///
/// Speakers with fewer than two utterances yield no pairs.
pub fn leave_one_out_pairs(
    utterances: &[Arc<Utterance>],
    cb: &Codebook,
    cfg: &SelectionConfig,
) -> Result<Vec<(String, SelectionResult)>> {
    cfg.validate()?;
    if utterances.len() < 2 {
        warn!(
            utterances = utterances.len(),
            "speaker needs at least two utterances for leave-one-out selection; skipping"
        );
        return Ok(Vec::new());
    }
    (0..utterances.len())
        .into_par_iter()
        .map(|target| {
            let others = utterances
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != target)
                .map(|(_, u)| Arc::clone(u));
            let pool = build_pool(others, cb, cfg.min_len, cfg.max_len)?;
            let u = &utterances[target];
            let result = select_frames(u.units(), &pool, cb, cfg)?;
            Ok((u.id().to_string(), result))
        })
        .collect()
}

/// One frame of the serialized selection trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub pos: usize,
    pub kind: TraceKind,
    pub unit: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_cluster: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_utt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_frame: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SamplingMode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Match,
    Sample,
}

/// JSON trace of one selection. `src_utt`/`src_frame` name the copied frame
/// for matches and random samples; averaged samples carry neither.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub utterance_id: String,
    pub coverage: f64,
    pub frames: Vec<TraceFrame>,
}

impl SelectionResult {
    /// Serializable trace. `source_ids[o]` names the pool's utterance with
    /// ordinal `o` (see [`ReferencePool::utterance_ids`]).
    pub fn trace_document<S: AsRef<str>>(
        &self,
        predicted: &UnitSequence,
        source_ids: &[S],
    ) -> TraceDocument {
        let src = |f: FrameRef| {
            (
                Some(
                    source_ids[f.utterance_ordinal as usize]
                        .as_ref()
                        .to_string(),
                ),
                Some(f.frame_index),
            )
        };
        let frames = self
            .trace
            .iter()
            .enumerate()
            .map(|(pos, prov)| match prov {
                Provenance::Matched { segment_id, source } => {
                    let (src_utt, src_frame) = src(*source);
                    TraceFrame {
                        pos,
                        kind: TraceKind::Match,
                        unit: predicted.units()[pos],
                        resolved_cluster: None,
                        src_utt,
                        src_frame,
                        segment_id: Some(*segment_id),
                        mode: None,
                    }
                }
                Provenance::Sampled {
                    requested_unit,
                    resolved_cluster,
                    mode,
                    sources,
                } => {
                    let (src_utt, src_frame) = match mode {
                        SamplingMode::Random => src(sources[0]),
                        SamplingMode::Average => (None, None),
                    };
                    TraceFrame {
                        pos,
                        kind: TraceKind::Sample,
                        unit: *requested_unit,
                        resolved_cluster: Some(*resolved_cluster),
                        src_utt,
                        src_frame,
                        segment_id: None,
                        mode: Some(*mode),
                    }
                }
            })
            .collect();
        TraceDocument {
            utterance_id: self.features.utterance_id().to_string(),
            coverage: self.coverage,
            frames,
        }
    }

    /// Checks every structural invariant of a selection against the inputs
    /// that produced it. Returns the first violation found.
    pub fn verify(
        &self,
        predicted: &UnitSequence,
        pool: &ReferencePool,
        cb: &Codebook,
        cfg: &SelectionConfig,
    ) -> std::result::Result<(), String> {
        let units = predicted.units();
        let n = units.len();
        if self.trace.len() != n || self.features.rows() != n {
            return Err(format!(
                "trace has {} entries and features {} rows for {n} predicted units",
                self.trace.len(),
                self.features.rows()
            ));
        }
        let occupancy = pool.occupancy();
        let mut matched = 0;
        for (pos, prov) in self.trace.iter().enumerate() {
            let out = self.features.row(pos);
            match prov {
                Provenance::Matched { segment_id, source } => {
                    matched += 1;
                    let seg = self
                        .segments
                        .get(*segment_id)
                        .ok_or_else(|| format!("pos {pos}: unknown segment {segment_id}"))?;
                    if !seg.positions().contains(&pos) {
                        return Err(format!("pos {pos} lies outside segment {segment_id}"));
                    }
                    if *source != seg.source.frame(pos - seg.start) {
                        return Err(format!(
                            "pos {pos}: source not contiguous within segment {segment_id}"
                        ));
                    }
                    if pool.unit_at(*source) != units[pos] {
                        return Err(format!(
                            "pos {pos}: matched source unit differs from predicted"
                        ));
                    }
                    if out != pool.features_at(*source) {
                        return Err(format!(
                            "pos {pos}: matched features differ from source frame"
                        ));
                    }
                }
                Provenance::Sampled {
                    requested_unit,
                    resolved_cluster,
                    mode,
                    sources,
                } => {
                    if *requested_unit != units[pos] {
                        return Err(format!("pos {pos}: requested unit differs from predicted"));
                    }
                    let expect = nearest_nonempty_cluster(*requested_unit, &occupancy, cb)
                        .map_err(|e| e.to_string())?;
                    if *resolved_cluster != expect {
                        return Err(format!(
                            "pos {pos}: resolved cluster {resolved_cluster}, expected {expect}"
                        ));
                    }
                    if occupancy[*requested_unit as usize] > 0 && resolved_cluster != requested_unit
                    {
                        return Err(format!("pos {pos}: occupied cluster not used"));
                    }
                    if *mode != cfg.sampling_mode {
                        return Err(format!("pos {pos}: sampled with {mode:?}"));
                    }
                    match mode {
                        SamplingMode::Random => {
                            let [pick] = sources.as_slice() else {
                                return Err(format!(
                                    "pos {pos}: random sample must have one source"
                                ));
                            };
                            if pool.unit_at(*pick) != *resolved_cluster {
                                return Err(format!(
                                    "pos {pos}: sampled frame outside resolved cluster"
                                ));
                            }
                            if out != pool.features_at(*pick) {
                                return Err(format!(
                                    "pos {pos}: sampled features differ from source frame"
                                ));
                            }
                        }
                        SamplingMode::Average => {
                            let members = pool
                                .frames_in_cluster(*resolved_cluster)
                                .map_err(|e| e.to_string())?;
                            if sources.as_slice() != members {
                                return Err(format!(
                                    "pos {pos}: averaged sources are not the whole cluster"
                                ));
                            }
                            if Some(out) != pool.cluster_mean(*resolved_cluster) {
                                return Err(format!(
                                    "pos {pos}: averaged features differ from cluster mean"
                                ));
                            }
                        }
                    }
                }
            }
        }
        let mut seen = vec![false; n];
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.segment_id != i {
                return Err(format!("segment {i} carries id {}", seg.segment_id));
            }
            if seg.len < cfg.min_len || seg.len > cfg.max_len {
                return Err(format!("segment {i} has length {}", seg.len));
            }
            if seg.start + seg.len > n {
                return Err(format!("segment {i} runs past the sequence"));
            }
            let src_len = pool.utterance(seg.source.utterance_ordinal as usize).len();
            if seg.source.start_frame as usize + seg.len > src_len {
                return Err(format!("segment {i} runs past its source utterance"));
            }
            for pos in seg.positions() {
                if std::mem::replace(&mut seen[pos], true) {
                    return Err(format!("segments overlap at pos {pos}"));
                }
            }
        }
        if matched != self.matched_frames || seen.iter().filter(|&&s| s).count() != matched {
            return Err("matched frame count disagrees with segments".into());
        }
        if self.coverage != matched as f64 / n as f64 {
            return Err("coverage disagrees with matched frame count".into());
        }
        Ok(())
    }
}
