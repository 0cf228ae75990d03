#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitsel_core::{Codebook, FeatureMatrix, UnitSequence, Utterance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_codebook(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Codebook {
    Codebook::new(
        dim,
        (0..k * dim).map(|_| rng.random_range(-1f32..1.0)).collect(),
    )
    .unwrap()
}

/// Utterance with the given units and random features.
pub fn utterance(
    rng: &mut ChaCha8Rng,
    id: &str,
    units: Vec<u32>,
    k: usize,
    dim: usize,
) -> Arc<Utterance> {
    let data = (0..units.len() * dim)
        .map(|_| rng.random_range(-1f32..1.0))
        .collect();
    let features = FeatureMatrix::new(id, dim, data).unwrap();
    Arc::new(Utterance::new(UnitSequence::new(id, units, k as u32).unwrap(), features).unwrap())
}

pub fn random_units(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..k as u32)).collect()
}

/// A pool of `n` utterances over a `k`-unit alphabet, with lengths in `lens`.
pub fn random_refs(
    rng: &mut ChaCha8Rng,
    n: usize,
    lens: std::ops::Range<usize>,
    k: usize,
    dim: usize,
) -> Vec<Arc<Utterance>> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(lens.clone());
            let units = random_units(rng, len, k);
            utterance(rng, &format!("ref{i:03}"), units, k, dim)
        })
        .collect()
}

/// Independent squared distance, accumulated in f64.
pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum()
}

/// Nearest centroid by linear scan, lowest index on ties.
pub fn brute_nearest(row: &[f32], cb: &Codebook) -> u32 {
    let mut best = (0u32, f64::INFINITY);
    for c in 0..cb.k() {
        let d = sq_dist(row, cb.centroid(c));
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best.0
}
