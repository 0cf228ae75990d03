//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Run with `cargo test -p unitsel-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitsel_core::eval::sweep_speakers;
use unitsel_core::synth::{generate, SynthConfig};
use unitsel_core::{
    assign_units, brute_force_find, build_pool, fit_kmeans, leave_one_out_pairs, parse_duration,
    select_frames, Codebook, FeatureMatrix, KMeansConfig, OccurrencePolicy, Provenance,
    SamplingMode, SelectionConfig, UnitSequence, Utterance,
};

// Pinned thresholds.
const SEARCH_INSTANCES: usize = 1000;
const SEARCH_SPEEDUP: f64 = 10.0;
const TIMING_POOL_FRAMES: usize = 100_000;
const QUANT_TRIALS: u64 = 10;
const QUANT_FRAMES: usize = 500;
const KMEANS_RUNS: u64 = 10;
const SELECTIONS: u64 = 100;
const SWEEP_SPEAKERS: usize = 10;
const SWEEP_K: usize = 2000;
const SWEEP_LIMIT: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_codebook(r: &mut ChaCha8Rng, k: usize, dim: usize) -> Codebook {
    Codebook::new(
        dim,
        (0..k * dim).map(|_| r.random_range(-1f32..1.0)).collect(),
    )
    .unwrap()
}

fn random_units(r: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<u32> {
    (0..len).map(|_| r.random_range(0..k as u32)).collect()
}

fn utterance(
    r: &mut ChaCha8Rng,
    id: String,
    units: Vec<u32>,
    k: usize,
    dim: usize,
) -> Arc<Utterance> {
    let data = (0..units.len() * dim)
        .map(|_| r.random_range(-1f32..1.0))
        .collect();
    let features = FeatureMatrix::new(id.clone(), dim, data).unwrap();
    Arc::new(Utterance::new(UnitSequence::new(id, units, k as u32).unwrap(), features).unwrap())
}

fn random_refs(
    r: &mut ChaCha8Rng,
    n: usize,
    max_len: usize,
    k: usize,
    dim: usize,
) -> Vec<Arc<Utterance>> {
    (0..n)
        .map(|i| {
            let len = r.random_range(1..=max_len);
            let units = random_units(r, len, k);
            utterance(r, format!("ref{i:04}"), units, k, dim)
        })
        .collect()
}

/// Query of length 2..=10, cut from the pool half of the time.
fn query(r: &mut ChaCha8Rng, refs: &[Arc<Utterance>], k: usize) -> Vec<u32> {
    let len = r.random_range(2..=10);
    if r.random_bool(0.5) {
        let u = refs[r.random_range(0..refs.len())].units().units();
        if u.len() >= len {
            let s = r.random_range(0..=u.len() - len);
            return u[s..s + len].to_vec();
        }
    }
    random_units(r, len, k)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn subsequence_search() -> Outcome {
    let mut r = rng(1);
    let ks = [2, 10, 100, 500, 2000];
    let (mut instances, mut with_hits) = (0, 0);
    for p in 0..50 {
        let k = ks[p % ks.len()];
        let cb = random_codebook(&mut r, k, 2);
        let n = r.random_range(1..20);
        let refs = random_refs(&mut r, n, 400, k, 2);
        let pool = build_pool(refs.clone(), &cb, 2, 10).map_err(|e| e.to_string())?;
        for _ in 0..SEARCH_INSTANCES / 50 {
            let q = query(&mut r, &refs, k);
            let fast = pool.find_occurrences(&q).unwrap();
            let slow = brute_force_find(&pool, &q).unwrap();
            check(fast == slow, || {
                format!("K={k} query {q:?}: index {fast:?} vs scan {slow:?}")
            })?;
            instances += 1;
            with_hits += !fast.is_empty() as usize;
        }
    }

    let k = 500;
    let cb = random_codebook(&mut r, k, 2);
    let refs = random_refs(&mut r, 200, 2 * TIMING_POOL_FRAMES / 200, k, 2);
    let pool = build_pool(refs.clone(), &cb, 2, 10).unwrap();
    check(pool.total_frames() >= TIMING_POOL_FRAMES * 9 / 10, || {
        format!("timing pool has only {} frames", pool.total_frames())
    })?;
    let queries: Vec<Vec<u32>> = (0..400).map(|_| query(&mut r, &refs, k)).collect();
    let t = Instant::now();
    let a: usize = queries
        .iter()
        .map(|q| pool.find_occurrences(q).unwrap().len())
        .sum();
    let indexed = t.elapsed();
    let t = Instant::now();
    let b: usize = queries
        .iter()
        .map(|q| brute_force_find(&pool, q).unwrap().len())
        .sum();
    let brute = t.elapsed();
    let ratio = indexed.as_secs_f64() / brute.as_secs_f64();
    check(a == b, || "timing queries disagree".into())?;
    check(ratio <= 1.0 / SEARCH_SPEEDUP, || {
        format!("indexed {indexed:?} vs brute {brute:?} (ratio {ratio:.4} > 0.1)")
    })?;
    Ok(format!(
        "{instances} instances ({with_hits} with hits) identical; {} frames: indexed {indexed:.2?} vs brute {brute:.2?} (ratio {ratio:.5})",
        pool.total_frames()
    ))
}

fn quantization() -> Outcome {
    let mut r = rng(2);
    for trial in 0..QUANT_TRIALS {
        let k = r.random_range(2..=256);
        let dim = r.random_range(1..=48);
        let cb = random_codebook(&mut r, k, dim);
        let data = (0..QUANT_FRAMES * dim)
            .map(|_| r.random_range(-1.5f32..1.5))
            .collect();
        let m = FeatureMatrix::new("q", dim, data).unwrap();
        let units = assign_units(&m, &cb).unwrap();
        for (t, &u) in units.units().iter().enumerate() {
            let row = m.row(t);
            let mut best = (0u32, f64::INFINITY);
            for c in 0..k {
                let d: f64 = row
                    .iter()
                    .zip(cb.centroid(c))
                    .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                    .sum();
                if d < best.1 {
                    best = (c as u32, d);
                }
            }
            check(u == best.0, || {
                format!("trial {trial} frame {t}: {u} vs {}", best.0)
            })?;
        }
    }

    let data: Vec<f32> = (0..8000 * 8).map(|_| r.random_range(-1f32..1.0)).collect();
    let frames = FeatureMatrix::new("k", 8, data).unwrap();
    let mut steps = 0;
    for seed in 0..KMEANS_RUNS {
        let fit = fit_kmeans(
            &frames,
            &KMeansConfig {
                k: 32,
                max_iters: 40,
                rel_tol: 0.0,
                seed,
            },
        )
        .unwrap();
        for (i, w) in fit.objectives.windows(2).enumerate() {
            check(w[1] <= w[0], || {
                format!("seed {seed} step {i}: {} -> {}", w[0], w[1])
            })?;
        }
        steps += fit.objectives.len() - 1;
    }
    Ok(format!(
        "{QUANT_TRIALS} trials x {QUANT_FRAMES} frames match brute force; {KMEANS_RUNS} k-means runs, {steps} steps, objective non-increasing"
    ))
}

fn unit_consistency() -> Outcome {
    let mut r = rng(3);
    let (mut matched, mut sampled, mut fallback) = (0, 0, 0);
    for i in 0..SELECTIONS {
        let k = [16, 128, 1024][i as usize % 3];
        let cb = random_codebook(&mut r, k, 4);
        let n = r.random_range(1..10);
        let refs = random_refs(&mut r, n, 300, k, 4);
        let pool = build_pool(refs, &cb, 2, 10).unwrap();
        let occupancy = pool.occupancy();
        let len = r.random_range(1..200);
        let predicted = UnitSequence::new("p", random_units(&mut r, len, k), k as u32).unwrap();
        let cfg = SelectionConfig {
            sampling_mode: SamplingMode::Random,
            occurrence_policy: if i % 2 == 0 {
                OccurrencePolicy::Earliest
            } else {
                OccurrencePolicy::SeededRandom
            },
            seed: i,
            ..Default::default()
        };
        let res = select_frames(&predicted, &pool, &cb, &cfg).unwrap();
        for (pos, p) in res.trace.iter().enumerate() {
            let unit = predicted.units()[pos];
            match p {
                Provenance::Matched { source, .. } => {
                    matched += 1;
                    check(pool.unit_at(*source) == unit, || {
                        format!("selection {i} pos {pos}: matched unit differs")
                    })?;
                }
                Provenance::Sampled {
                    resolved_cluster,
                    sources,
                    ..
                } => {
                    sampled += 1;
                    check(
                        sources.len() == 1 && pool.unit_at(sources[0]) == *resolved_cluster,
                        || format!("selection {i} pos {pos}: sample outside resolved cluster"),
                    )?;
                    if occupancy[unit as usize] > 0 {
                        check(*resolved_cluster == unit, || {
                            format!("selection {i} pos {pos}: occupied cluster skipped")
                        })?;
                    } else {
                        fallback += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "{SELECTIONS} selections: {matched} matched and {sampled} sampled frames ({fallback} via fallback) all consistent"
    ))
}

fn coverage_law() -> Outcome {
    let mut r = rng(4);
    let cb = random_codebook(&mut r, 64, 2);
    for t in 2..=40usize {
        let target = utterance(&mut r, "self".into(), (0..t as u32).collect(), 64, 2);
        let pool = build_pool([Arc::clone(&target)], &cb, 2, 10).unwrap();
        let res = select_frames(target.units(), &pool, &cb, &SelectionConfig::default()).unwrap();
        let expect = if t % 10 == 1 { t - 1 } else { t };
        check(res.matched_frames == expect, || {
            format!("T={t}: coverage {} expected {expect}", res.matched_frames)
        })?;
        check(res.matched_frames + 1 >= t, || {
            format!("T={t}: coverage below T-1")
        })?;
    }
    Ok("T = 2..40 all follow the law".into())
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let w = dir.path();
    let p = |s: &str| w.join(s).to_string_lossy().into_owned();
    let runs: Vec<Vec<String>> = [
        vec![
            "synth-corpus",
            "--out-dir",
            &p("corpus"),
            "--speakers",
            "2",
            "--k",
            "64",
            "--dim",
            "8",
            "--ref-seconds",
            "20",
            "--targets",
            "2",
            "--seed",
            "5",
        ],
        vec![
            "train-codebook",
            "--manifest",
            &p("corpus/manifest.jsonl"),
            "--k",
            "16",
            "--iters",
            "10",
            "--out",
            &p("trained.uscb"),
            "--seed",
            "3",
        ],
        vec![
            "tokenize",
            "--manifest",
            &p("corpus/manifest.jsonl"),
            "--codebook",
            &p("trained.uscb"),
            "--out-dir",
            &p("units"),
        ],
        vec![
            "build-pool",
            "--manifest",
            &p("units/manifest.jsonl"),
            "--speaker",
            "spk000",
            "--codebook",
            &p("trained.uscb"),
            "--out",
            &p("spk000.uspl"),
        ],
        vec![
            "select",
            "--predicted-units",
            &p("units/spk001_tgt000.usuq"),
            "--pool",
            &p("spk000.uspl"),
            "--codebook",
            &p("trained.uscb"),
            "--out-features",
            &p("sel_avg.usfm"),
            "--out-trace",
            &p("sel_avg.json"),
        ],
        vec![
            "select",
            "--predicted-units",
            &p("units/spk001_tgt000.usuq"),
            "--ref-manifest",
            &p("units/manifest.jsonl"),
            "--speaker",
            "spk000",
            "--codebook",
            &p("trained.uscb"),
            "--mode",
            "rand",
            "--occurrence",
            "random",
            "--seed",
            "7",
            "--out-features",
            &p("sel_rand.usfm"),
            "--out-trace",
            &p("sel_rand.json"),
        ],
        vec![
            "prepare-vocoder-pairs",
            "--manifest",
            &p("units/manifest.jsonl"),
            "--codebook",
            &p("trained.uscb"),
            "--mode",
            "rand",
            "--seed",
            "9",
            "--out-dir",
            &p("pairs"),
        ],
        vec![
            "eval",
            "--manifest",
            &p("corpus/manifest.jsonl"),
            "--codebook",
            &p("corpus/codebook.uscb"),
            "--speaker",
            "spk001",
            "--durations",
            "5s,10s,20s",
            "--n-targets",
            "2",
            "--mode",
            "rand",
            "--seed",
            "11",
            "--out-report",
            &p("report.json"),
        ],
    ]
    .into_iter()
    .map(|a| a.into_iter().map(String::from).collect())
    .collect();

    let run_all = || -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        for args in &runs {
            let out = Command::new(env!("CARGO_BIN_EXE_unitsel"))
                .args(args)
                .args(["--log-level", "warn"])
                .output()
                .map_err(|e| e.to_string())?;
            check(out.status.success(), || {
                format!(
                    "`unitsel {}` failed: {}",
                    args[0],
                    String::from_utf8_lossy(&out.stderr)
                )
            })?;
        }
        Ok(snapshot(w))
    };
    let first = run_all()?;
    let second = run_all()?;
    check(first.keys().eq(second.keys()), || {
        "reruns produced different file sets".into()
    })?;
    let differing: Vec<_> = first
        .iter()
        .filter(|(k, v)| second[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    check(differing.is_empty(), || {
        format!("files differ on rerun: {differing:?}")
    })?;
    Ok(format!(
        "{} commands rerun, {} output files byte-identical",
        runs.len(),
        first.len()
    ))
}

fn duration_trend() -> Outcome {
    let start = Instant::now();
    let corpus = generate(&SynthConfig {
        speakers: SWEEP_SPEAKERS,
        k: SWEEP_K,
        ref_seconds: 180.0,
        seed: 6,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let budgets = ["30s", "1min", "3min"].map(|t| parse_duration(t, 20).unwrap());
    let rows = sweep_speakers(
        &corpus.speakers,
        &budgets,
        &corpus.codebook,
        &SelectionConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (short, long) = (&rows[0], &rows[2]);
    check(long.mean_coverage > short.mean_coverage, || {
        format!(
            "coverage {:.4} (3min) vs {:.4} (30s)",
            long.mean_coverage, short.mean_coverage
        )
    })?;
    check(long.mean_cosine > short.mean_cosine, || {
        format!(
            "cosine {:.4} (3min) vs {:.4} (30s)",
            long.mean_cosine, short.mean_cosine
        )
    })?;
    check(elapsed < SWEEP_LIMIT, || format!("sweep took {elapsed:?}"))?;
    Ok(format!(
        "{SWEEP_SPEAKERS} speakers, K={SWEEP_K}: coverage {:.4} -> {:.4}, cosine {:.4} -> {:.4} (30s -> 3min) in {elapsed:.1?}",
        short.mean_coverage, long.mean_coverage, short.mean_cosine, long.mean_cosine
    ))
}

fn leave_one_out() -> Outcome {
    let mut r = rng(7);
    let cb = random_codebook(&mut r, 40, 3);
    let mut total = 0;
    for n in 2..=8 {
        let utts = random_refs(&mut r, n, 80, 40, 3);
        for (mode, seed) in [(SamplingMode::Average, 0), (SamplingMode::Random, n as u64)] {
            let cfg = SelectionConfig {
                sampling_mode: mode,
                seed,
                ..Default::default()
            };
            let pairs = leave_one_out_pairs(&utts, &cb, &cfg).unwrap();
            check(pairs.len() == n, || format!("N={n}: {} pairs", pairs.len()))?;
            for (i, (id, res)) in pairs.iter().enumerate() {
                let others: Vec<_> = utts
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, u)| Arc::clone(u))
                    .collect();
                let pool = build_pool(others, &cb, 2, 10).unwrap();
                check(
                    id == utts[i].id() && !pool.utterance_ids().contains(id),
                    || format!("N={n}: pool holds target {id}"),
                )?;
                res.verify(utts[i].units(), &pool, &cb, &cfg)
                    .map_err(|e| format!("N={n} target {id}: {e}"))?;
                total += 1;
            }
        }
    }
    Ok(format!(
        "N = 2..8 give N pairs each; {total} selections pass the invariant suite"
    ))
}

fn main() {
    // libtest-style flags passed by cargo are ignored
    let criteria: [Criterion; 7] = [
        ("subsequence search oracle", subsequence_search),
        ("quantization oracle", quantization),
        ("unit consistency", unit_consistency),
        ("self-pool coverage law", coverage_law),
        ("determinism", cli_determinism),
        ("reference duration trend", duration_trend),
        ("leave-one-out", leave_one_out),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
