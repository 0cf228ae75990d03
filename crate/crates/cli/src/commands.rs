use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use tracing::info;
use unitsel_core::eval::{format_table, sweep_speakers, SpeakerSplit};
use unitsel_core::store::{
    load_manifest, read_codebook, read_units, write_codebook, write_features, write_manifest,
    write_units,
};
use unitsel_core::synth::{self, SynthConfig};
use unitsel_core::{
    assign_units, build_pool as build_reference_pool, fit_kmeans, leave_one_out_pairs,
    parse_duration, select_frames, FeatureMatrix, KMeansConfig, Manifest, ManifestEntry,
    ReferencePool, SelectionConfig,
};

use crate::data::{choose_speaker, load_all};
use crate::outputs::{file_stem, Outputs};
use crate::{
    BuildPoolArgs, EvalArgs, PairsArgs, SelectArgs, SelectionArgs, SynthArgs, TokenizeArgs,
    TrainArgs,
};

fn selection_config(a: &SelectionArgs, seed: u64) -> Result<SelectionConfig> {
    let cfg = SelectionConfig {
        max_len: a.max_len,
        min_len: a.min_len,
        sampling_mode: a.mode.into(),
        occurrence_policy: a.occurrence.into(),
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

pub fn train_codebook(a: TrainArgs, seed: u64) -> Result<()> {
    let cfg = KMeansConfig {
        k: a.k,
        max_iters: a.iters,
        rel_tol: a.tol,
        seed,
    };
    ensure!(cfg.k >= 1, "--k must be at least 1");
    ensure!(cfg.max_iters >= 1, "--iters must be at least 1");
    ensure!(cfg.rel_tol >= 0.0, "--tol must be non-negative");

    let manifest = load_manifest(&a.manifest)?;
    ensure!(
        !manifest.is_empty(),
        "manifest {} has no utterances",
        a.manifest.display()
    );
    let mats = manifest
        .entries()
        .iter()
        .map(|e| unitsel_core::store::read_features(&e.feature_path))
        .collect::<Result<Vec<_>, _>>()?;
    let frames = FeatureMatrix::concat("training", &mats)?;
    info!(
        frames = frames.rows(),
        dim = frames.dim(),
        k = cfg.k,
        "training codebook"
    );
    let fit = fit_kmeans(&frames, &cfg)?;

    let mut out = Outputs::new();
    write_codebook(&fit.codebook, out.track(&a.out))?;
    out.commit();
    println!(
        "final objective {:.6} after {} lloyd steps{}",
        fit.final_objective(),
        fit.objectives.len() - 1,
        if fit.converged {
            ""
        } else {
            " (max iterations reached)"
        }
    );
    Ok(())
}

pub fn tokenize(a: TokenizeArgs) -> Result<()> {
    let cb = read_codebook(&a.codebook)?;
    let manifest = load_manifest(&a.manifest)?;
    let mut out = Outputs::new();
    out.ensure_dir(&a.out_dir)?;

    let mut entries = Vec::with_capacity(manifest.len());
    for e in manifest.entries() {
        let features = unitsel_core::store::read_features(&e.feature_path)?
            .with_utterance_id(e.utterance_id.clone());
        let units = assign_units(&features, &cb)?;
        let name = format!("{}.usuq", file_stem(&e.utterance_id));
        write_units(&units, out.track(a.out_dir.join(&name)))?;
        entries.push(ManifestEntry {
            feature_path: absolute(&e.feature_path)?,
            units_path: Some(PathBuf::from(name)),
            ..e.clone()
        });
    }
    write_manifest(
        &Manifest::from_entries(entries)?,
        out.track(a.out_dir.join("manifest.jsonl")),
    )?;
    out.commit();
    info!(utterances = manifest.len(), "tokenized");
    Ok(())
}

fn speaker_pool(
    manifest_path: &Path,
    speaker: Option<&str>,
    cb: &unitsel_core::Codebook,
    min_len: usize,
    max_len: usize,
) -> Result<ReferencePool> {
    let manifest = load_manifest(manifest_path)?;
    let speaker = choose_speaker(&manifest, speaker)?;
    let utts = load_all(manifest.speaker_entries(&speaker), cb)?;
    info!(speaker = %speaker, utterances = utts.len(), "building reference pool");
    Ok(build_reference_pool(utts, cb, min_len, max_len)?)
}

pub fn build_pool(a: BuildPoolArgs) -> Result<()> {
    ensure!(
        a.min_len >= 1 && a.min_len <= a.max_len,
        "need 1 <= --min-len <= --max-len"
    );
    let cb = read_codebook(&a.codebook)?;
    let pool = speaker_pool(&a.manifest, a.speaker.as_deref(), &cb, a.min_len, a.max_len)?;
    let mut out = Outputs::new();
    pool.save(out.track(&a.out))?;
    out.commit();
    Ok(())
}

pub fn select(a: SelectArgs, seed: u64) -> Result<()> {
    let cfg = selection_config(&a.selection, seed)?;
    let cb = read_codebook(&a.codebook)?;
    let predicted = read_units(&a.predicted_units)?;
    let pool = match (&a.pool, &a.ref_manifest) {
        (Some(p), _) => {
            ReferencePool::load(p).with_context(|| format!("loading pool {}", p.display()))?
        }
        (None, Some(m)) => speaker_pool(m, a.speaker.as_deref(), &cb, cfg.min_len, cfg.max_len)?,
        (None, None) => bail!("either --ref-manifest or --pool is required"),
    };
    let result = select_frames(&predicted, &pool, &cb, &cfg)?;
    info!(
        frames = predicted.len(),
        coverage = result.coverage,
        segments = result.segments.len(),
        "selected"
    );

    let mut out = Outputs::new();
    write_features(&result.features, out.track(&a.out_features))?;
    write_json(
        &result.trace_document(&predicted, &pool.utterance_ids()),
        &out.track(&a.out_trace),
    )?;
    out.commit();
    Ok(())
}

#[derive(Serialize)]
struct PairRecord<'a> {
    utterance_id: &'a str,
    speaker_id: &'a str,
    selected_features: String,
    trace: String,
    target_feature_path: PathBuf,
    coverage: f64,
}

pub fn prepare_vocoder_pairs(a: PairsArgs, seed: u64) -> Result<()> {
    let cfg = selection_config(&a.selection, seed)?;
    let cb = read_codebook(&a.codebook)?;
    let manifest = load_manifest(&a.manifest)?;
    let mut out = Outputs::new();
    out.ensure_dir(&a.out_dir)?;

    let mut index = Vec::new();
    for speaker in manifest.speakers() {
        let entries: Vec<&ManifestEntry> = manifest.speaker_entries(speaker).collect();
        let utts = load_all(entries.iter().copied(), &cb)?;
        let pairs = leave_one_out_pairs(&utts, &cb, &cfg)?;
        let ids: Vec<&str> = utts.iter().map(|u| u.id()).collect();
        for (target, ((id, result), entry)) in pairs.iter().zip(&entries).enumerate() {
            // the pool holds every other utterance, in manifest order
            let pool_ids: Vec<&str> = ids
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != target)
                .map(|(_, s)| *s)
                .collect();
            let stem = file_stem(id);
            let feat_name = format!("{stem}.usfm");
            let trace_name = format!("{stem}.trace.json");
            write_features(&result.features, out.track(a.out_dir.join(&feat_name)))?;
            let doc = result.trace_document(utts[target].units(), &pool_ids);
            write_json(&doc, &out.track(a.out_dir.join(&trace_name)))?;
            index.push(serde_json::to_string(&PairRecord {
                utterance_id: id,
                speaker_id: speaker,
                selected_features: feat_name,
                trace: trace_name,
                target_feature_path: absolute(&entry.feature_path)?,
                coverage: result.coverage,
            })?);
        }
        info!(speaker, pairs = pairs.len(), "prepared");
    }
    let mut text = index.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    let path = out.track(a.out_dir.join("pairs.jsonl"));
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    out.commit();
    Ok(())
}

pub fn eval(a: EvalArgs, seed: u64) -> Result<()> {
    let cfg = selection_config(&a.selection, seed)?;
    let budgets = a
        .durations
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_duration(t, a.frame_hop_ms))
        .collect::<Result<Vec<_>, _>>()?;
    ensure!(!budgets.is_empty(), "--durations is empty");
    ensure!(a.n_targets >= 1, "--n-targets must be at least 1");

    let cb = read_codebook(&a.codebook)?;
    let manifest = load_manifest(&a.manifest)?;
    let speaker = choose_speaker(&manifest, a.speaker.as_deref())?;
    let mut utts: Vec<Arc<_>> = load_all(manifest.speaker_entries(&speaker), &cb)?;
    ensure!(
        utts.len() > a.n_targets,
        "speaker `{speaker}` has {} utterances; need more than --n-targets {}",
        utts.len(),
        a.n_targets
    );
    let targets = utts.split_off(utts.len() - a.n_targets);
    let split = SpeakerSplit {
        speaker_id: speaker,
        targets,
        refs: utts,
    };
    let rows = sweep_speakers(std::slice::from_ref(&split), &budgets, &cb, &cfg)?;

    let mut out = Outputs::new();
    write_json(&rows, &out.track(&a.out_report))?;
    out.commit();
    print!("{}", format_table(&rows));
    Ok(())
}

pub fn synth_corpus(a: SynthArgs, seed: u64) -> Result<()> {
    let cfg = SynthConfig {
        speakers: a.speakers,
        k: a.k,
        dim: a.dim,
        ref_seconds: a.ref_seconds,
        targets_per_speaker: a.targets,
        seed,
        ..Default::default()
    };
    let corpus = synth::generate(&cfg)?;
    let mut out = Outputs::new();
    out.ensure_dir(&a.out_dir)?;
    write_codebook(&corpus.codebook, out.track(a.out_dir.join("codebook.uscb")))?;

    let mut entries = Vec::new();
    for s in &corpus.speakers {
        for u in s.refs.iter().chain(&s.targets) {
            let name = format!("{}.usfm", file_stem(u.id()));
            write_features(u.features(), out.track(a.out_dir.join(&name)))?;
            entries.push(ManifestEntry {
                utterance_id: u.id().to_string(),
                speaker_id: s.speaker_id.clone(),
                feature_path: PathBuf::from(name),
                units_path: None,
                duration_ms: Some(u.len() as u64 * cfg.frame_hop_ms as u64),
            });
        }
    }
    write_manifest(
        &Manifest::from_entries(entries)?,
        out.track(a.out_dir.join("manifest.jsonl")),
    )?;
    out.commit();
    info!(speakers = cfg.speakers, "synthetic corpus written");
    Ok(())
}
