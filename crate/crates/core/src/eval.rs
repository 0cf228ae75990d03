//! Feature-space reconstruction metrics and the reference-duration sweep.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{build_pool, ReferencePool};
use crate::select::{select_frames, Provenance, SelectionConfig};
use crate::store::{Codebook, Utterance};

/// How well a selection reproduces the target's own features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub utterance_id: String,
    pub coverage: f64,
    pub mean_cosine: f64,
    pub mean_sq_err: f64,
    /// Share of sampled frames whose own cluster was occupied; 1.0 when
    /// nothing was sampled.
    pub cluster_hit_rate: f64,
    pub pool_frames: usize,
    pub pool_seconds: f64,
}

/// Cosine similarity in f64. Two zero vectors count as identical, a zero
/// vector against a non-zero one as orthogonal.
fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na * nb).sqrt()).clamp(-1.0, 1.0),
    }
}

fn mean_sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64
}

/// Re-synthesizes `target` from its ground-truth units and compares the
/// selected frames against its real ones.
pub fn reconstruction_eval(
    target: &Utterance,
    pool: &ReferencePool,
    cb: &Codebook,
    cfg: &SelectionConfig,
) -> Result<ReconReport> {
    let sel = select_frames(target.units(), pool, cb, cfg)?;
    let truth = target.features();
    if truth.dim() != sel.features.dim() {
        return Err(Error::DimensionMismatch {
            expected: sel.features.dim(),
            found: truth.dim(),
        });
    }
    let n = truth.rows() as f64;
    let (mut cos, mut mse) = (0f64, 0f64);
    for (a, b) in sel.features.iter_rows().zip(truth.iter_rows()) {
        cos += cosine(a, b);
        mse += mean_sq(a, b);
    }
    let (mut sampled, mut hits) = (0usize, 0usize);
    for p in &sel.trace {
        if let Provenance::Sampled {
            requested_unit,
            resolved_cluster,
            ..
        } = p
        {
            sampled += 1;
            hits += usize::from(requested_unit == resolved_cluster);
        }
    }
    let hop = pool.utterance(0).features().frame_hop_ms() as f64;
    Ok(ReconReport {
        utterance_id: target.id().to_string(),
        coverage: sel.coverage,
        mean_cosine: cos / n,
        mean_sq_err: mse / n,
        cluster_hit_rate: if sampled == 0 {
            1.0
        } else {
            hits as f64 / sampled as f64
        },
        pool_frames: pool.total_frames(),
        pool_seconds: pool.total_frames() as f64 * hop / 1000.0,
    })
}

/// A reference-material budget, e.g. `30s` → 1500 frames at a 20 ms hop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DurationBudget {
    pub label: String,
    pub frames: usize,
}

/// Parses `<number>s` or `<number>min` into a frame budget.
pub fn parse_duration(token: &str, frame_hop_ms: u32) -> Result<DurationBudget> {
    let token = token.trim();
    let bad = || {
        Error::InvalidConfig(format!(
            "duration `{token}` is not of the form <n>s or <n>min"
        ))
    };
    let (number, scale) = if let Some(n) = token.strip_suffix("min") {
        (n, 60.0)
    } else if let Some(n) = token.strip_suffix('s') {
        (n, 1.0)
    } else {
        return Err(bad());
    };
    let value: f64 = number.parse().map_err(|_| bad())?;
    if !value.is_finite() || value <= 0.0 {
        return Err(bad());
    }
    if frame_hop_ms == 0 {
        return Err(Error::InvalidConfig("frame hop must be positive".into()));
    }
    Ok(DurationBudget {
        label: token.to_string(),
        frames: (value * scale * 1000.0 / frame_hop_ms as f64).round() as usize,
    })
}

/// Leading whole utterances until `budget` frames are reached. The flag is
/// set when the material runs out first.
pub fn truncate_refs(refs: &[Arc<Utterance>], budget: usize) -> (Vec<Arc<Utterance>>, bool) {
    let mut taken = Vec::new();
    let mut frames = 0;
    for u in refs {
        if frames >= budget {
            break;
        }
        frames += u.len();
        taken.push(Arc::clone(u));
    }
    (taken, frames < budget)
}

/// One speaker's held-out targets and reference material, in manifest order.
#[derive(Clone, Debug)]
pub struct SpeakerSplit {
    pub speaker_id: String,
    pub targets: Vec<Arc<Utterance>>,
    pub refs: Vec<Arc<Utterance>>,
}

/// Metrics for one reference duration, averaged over all targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub duration_label: String,
    pub n_targets: usize,
    pub mean_coverage: f64,
    pub mean_cosine: f64,
    pub mean_mse: f64,
    pub mean_cluster_hit_rate: f64,
    pub budget_frames: usize,
    pub mean_pool_frames: f64,
    /// Some speaker had less material than the budget; its whole pool was used.
    pub all_material: bool,
}

/// Averages reports in utterance-id order so the result does not depend on
/// the order targets were supplied in.
pub fn average_reports(
    label: &str,
    budget_frames: usize,
    all_material: bool,
    reports: &[ReconReport],
) -> SweepRow {
    let mut sorted: Vec<&ReconReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let n = sorted.len() as f64;
    let mean = |f: fn(&ReconReport) -> f64| sorted.iter().map(|r| f(r)).sum::<f64>() / n;
    SweepRow {
        duration_label: label.to_string(),
        n_targets: sorted.len(),
        mean_coverage: mean(|r| r.coverage),
        mean_cosine: mean(|r| r.mean_cosine),
        mean_mse: mean(|r| r.mean_sq_err),
        mean_cluster_hit_rate: mean(|r| r.cluster_hit_rate),
        budget_frames,
        mean_pool_frames: mean(|r| r.pool_frames as f64),
        all_material,
    }
}

/// Runs every budget over every speaker: each speaker's reference list is
/// cut to the budget (whole utterances only), pooled, and used to rebuild
/// that speaker's targets.
pub fn sweep_speakers(
    speakers: &[SpeakerSplit],
    budgets: &[DurationBudget],
    cb: &Codebook,
    cfg: &SelectionConfig,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if speakers.iter().all(|s| s.targets.is_empty()) {
        return Err(Error::InvalidConfig(
            "sweep needs at least one target utterance".into(),
        ));
    }
    if let Some(s) = speakers.iter().find(|s| s.refs.is_empty()) {
        return Err(Error::InvalidConfig(format!(
            "speaker `{}` has no reference material",
            s.speaker_id
        )));
    }
    budgets
        .iter()
        .map(|budget| {
            let per_speaker: Vec<(Vec<ReconReport>, bool)> = speakers
                .par_iter()
                .map(|s| {
                    let (refs, exhausted) = truncate_refs(&s.refs, budget.frames);
                    let pool = build_pool(refs, cb, cfg.min_len, cfg.max_len)?;
                    let reports = s
                        .targets
                        .par_iter()
                        .map(|t| reconstruction_eval(t, &pool, cb, cfg))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((reports, exhausted))
                })
                .collect::<Result<_>>()?;
            let all_material = per_speaker.iter().any(|(_, e)| *e);
            let reports: Vec<ReconReport> = per_speaker.into_iter().flat_map(|(r, _)| r).collect();
            Ok(average_reports(
                &budget.label,
                budget.frames,
                all_material,
                &reports,
            ))
        })
        .collect()
}

/// Single-speaker form of [`sweep_speakers`].
pub fn reference_duration_sweep(
    targets: &[Arc<Utterance>],
    refs: &[Arc<Utterance>],
    budgets: &[DurationBudget],
    cb: &Codebook,
    cfg: &SelectionConfig,
) -> Result<Vec<SweepRow>> {
    let split = SpeakerSplit {
        speaker_id: String::new(),
        targets: targets.to_vec(),
        refs: refs.to_vec(),
    };
    sweep_speakers(std::slice::from_ref(&split), budgets, cb, cfg)
}

/// Fixed-width text rendering of sweep rows.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>10} {:>9} {:>10} {:>10} {:>12}",
        "duration", "targets", "coverage", "cosine", "mse", "hit_rate", "pool_frames"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>10.4} {:>9.4} {:>10.5} {:>10.4} {:>11.0}{}",
            r.duration_label,
            r.n_targets,
            r.mean_coverage,
            r.mean_cosine,
            r.mean_mse,
            r.mean_cluster_hit_rate,
            r.mean_pool_frames,
            if r.all_material { "*" } else { "" }
        );
    }
    if rows.iter().any(|r| r.all_material) {
        out.push_str("* reference material exhausted before the budget; all of it was used\n");
    }
    out
}
