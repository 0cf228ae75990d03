//! k-means codebook training and nearest-centroid unit assignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tracing::debug;

use crate::error::{Error, Result};
use crate::store::{Codebook, FeatureMatrix, UnitSequence};

/// Codebook size used for the speech-unit inventory.
pub const DEFAULT_K: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once `(prev - cur) / prev` drops below this.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            max_iters: 100,
            rel_tol: 1e-4,
            seed: 0,
        }
    }
}

/// Outcome of a k-means run.
#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Mean squared distance to the nearest centroid, one entry for the
    /// seeding and one per accepted Lloyd step. Non-increasing.
    pub objectives: Vec<f64>,
    pub converged: bool,
}

impl KMeansFit {
    pub fn final_objective(&self) -> f64 {
        *self
            .objectives
            .last()
            .expect("at least the seeding objective")
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of the closest centroid and its squared distance. Ties go to the
/// lower index.
fn nearest_in(row: &[f32], centroids: &[f32], dim: usize) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(row, centroid);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

/// Nearest centroid of `row` in `cb`, ties toward the lower index.
pub fn nearest_centroid(row: &[f32], cb: &Codebook) -> (u32, f64) {
    nearest_in(row, cb.as_slice(), cb.dim())
}

fn assign_all(data: &[f32], centroids: &[f32], dim: usize) -> (Vec<u32>, Vec<f64>) {
    data.par_chunks_exact(dim)
        .map(|row| nearest_in(row, centroids, dim))
        .unzip()
}

fn mean_objective(dists: &[f64]) -> f64 {
    dists.iter().sum::<f64>() / dists.len() as f64
}

fn kmeans_plus_plus(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);

    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut min_d2: Vec<f64> = data
        .par_chunks_exact(dim)
        .map(|r| squared_distance(r, row(first)))
        .collect();

    for _ in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in min_d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the final partial sum
            chosen.unwrap_or_else(|| min_d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let chosen = row(pick);
        centroids.extend_from_slice(chosen);
        min_d2
            .par_iter_mut()
            .zip(data.par_chunks_exact(dim))
            .for_each(|(best, r)| {
                let d = squared_distance(r, chosen);
                if d < *best {
                    *best = d;
                }
            });
    }
    centroids
}

/// One Lloyd update: centroids become the mean of their members. Clusters left
/// empty are moved onto the frames farthest from their current centroid.
fn update_centroids(
    data: &[f32],
    dim: usize,
    k: usize,
    assign: &[u32],
    dists: &[f64],
    previous: &[f32],
) -> Vec<f32> {
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (row, &c) in data.chunks_exact(dim).zip(assign) {
        let c = c as usize;
        counts[c] += 1;
        for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
            *s += v as f64;
        }
    }

    let mut next = previous.to_vec();
    for c in (0..k).filter(|&c| counts[c] > 0) {
        let n = counts[c] as f64;
        for (dst, &s) in next[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(&sums[c * dim..])
        {
            *dst = (s / n) as f32;
        }
    }

    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        let mut order: Vec<usize> = (0..dists.len()).collect();
        order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
        debug!(empty = empty.len(), "reseeding empty clusters");
        for (c, &i) in empty.iter().zip(&order) {
            next[c * dim..(c + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
        }
    }
    next
}

/// Full-batch Lloyd k-means with k-means++ seeding.
///
/// The run is a pure function of `(frames, cfg)`: assignment may run in
/// parallel but every reduction happens sequentially in frame order.
pub fn fit_kmeans(frames: &FeatureMatrix, cfg: &KMeansConfig) -> Result<KMeansFit> {
    let n = frames.rows();
    let dim = frames.dim();
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    if cfg.rel_tol.is_nan() || cfg.rel_tol < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "rel_tol must be non-negative, got {}",
            cfg.rel_tol
        )));
    }
    if n < cfg.k {
        return Err(Error::NotEnoughFrames {
            frames: n,
            k: cfg.k,
        });
    }
    let data = frames.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut centroids = kmeans_plus_plus(data, dim, cfg.k, &mut rng);
    let (mut assign, mut dists) = assign_all(data, &centroids, dim);
    let mut objectives = vec![mean_objective(&dists)];
    let mut converged = objectives[0] == 0.0;

    let mut iter = 0;
    while !converged && iter < cfg.max_iters {
        iter += 1;
        let candidate = update_centroids(data, dim, cfg.k, &assign, &dists, &centroids);
        let (a, d) = assign_all(data, &candidate, dim);
        let obj = mean_objective(&d);
        let prev = *objectives.last().unwrap();
        if obj > prev {
            // f32 narrowing of the means can nudge the objective up at a fixed point
            converged = true;
            break;
        }
        centroids = candidate;
        assign = a;
        dists = d;
        objectives.push(obj);
        debug!(iter, objective = obj, "lloyd step");
        converged = prev == 0.0 || (prev - obj) / prev < cfg.rel_tol;
    }

    Ok(KMeansFit {
        codebook: Codebook::new(dim, centroids)?,
        objectives,
        converged,
    })
}

/// Trains a `K×D` codebook over all rows of `frames`.
pub fn train_codebook(frames: &FeatureMatrix, cfg: &KMeansConfig) -> Result<Codebook> {
    fit_kmeans(frames, cfg).map(|fit| fit.codebook)
}

/// Maps every frame to its nearest centroid (squared Euclidean distance,
/// ties toward the lower cluster index).
pub fn assign_units(m: &FeatureMatrix, cb: &Codebook) -> Result<UnitSequence> {
    if m.dim() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            found: m.dim(),
        });
    }
    let (units, _) = assign_all(m.as_slice(), cb.as_slice(), cb.dim());
    UnitSequence::new(m.utterance_id(), units, cb.k() as u32)
}

/// Returns `unit` itself when its cluster is occupied, otherwise the occupied
/// cluster whose centroid is closest to `unit`'s centroid (ties toward the
/// lower index).
pub fn nearest_nonempty_cluster(unit: u32, occupancy: &[usize], cb: &Codebook) -> Result<u32> {
    let k = cb.k();
    if unit as usize >= k {
        return Err(Error::UnitOutOfRange {
            position: 0,
            unit,
            k: k as u32,
        });
    }
    if occupancy.len() != k {
        return Err(Error::Shape(format!(
            "occupancy has {} clusters, codebook has {k}",
            occupancy.len()
        )));
    }
    if occupancy[unit as usize] > 0 {
        return Ok(unit);
    }
    let origin = cb.centroid(unit as usize);
    let mut best: Option<(u32, f64)> = None;
    for c in (0..k).filter(|&c| occupancy[c] > 0) {
        let d = squared_distance(origin, cb.centroid(c));
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((c as u32, d));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::AllClustersEmpty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cb(rows: &[[f32; 2]]) -> Codebook {
        Codebook::from_rows(rows).unwrap()
    }

    #[test]
    fn k1_centroid_is_the_mean() {
        let frames =
            FeatureMatrix::from_rows("f", &[[1.0f32, 2.0], [3.0, -2.0], [5.0, 6.0]]).unwrap();
        let cfg = KMeansConfig {
            k: 1,
            ..Default::default()
        };
        let cb = train_codebook(&frames, &cfg).unwrap();
        assert_eq!(cb.centroid(0), &[3.0, 2.0]);
    }

    #[test]
    fn every_distinct_frame_becomes_a_centroid() {
        let rows: Vec<[f32; 2]> = (0..7).map(|i| [i as f32, (i * i) as f32]).collect();
        let frames = FeatureMatrix::from_rows("f", &rows).unwrap();
        let fit = fit_kmeans(
            &frames,
            &KMeansConfig {
                k: 7,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fit.final_objective(), 0.0);
        let mut centroids: Vec<Vec<f32>> =
            (0..7).map(|c| fit.codebook.centroid(c).to_vec()).collect();
        centroids.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let expected: Vec<Vec<f32>> = rows.iter().map(|r| r.to_vec()).collect();
        assert_eq!(centroids, expected);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let frames = FeatureMatrix::new("f", 1, vec![0.0, 1.0]).unwrap();
        let err = train_codebook(
            &frames,
            &KMeansConfig {
                k: 3,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotEnoughFrames { frames: 2, k: 3 }));
    }

    #[test]
    fn frame_on_a_centroid_gets_that_unit() {
        let cb = cb(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 3.0], [4.0, 0.0]]);
        let m = FeatureMatrix::from_rows("m", &[[3.0f32, 3.0]]).unwrap();
        assert_eq!(assign_units(&m, &cb).unwrap().units(), &[3]);
    }

    #[test]
    fn equidistant_frame_breaks_toward_lower_index() {
        let cb = cb(&[
            [9.0, 9.0],
            [9.0, 9.0],
            [-1.0, 0.0],
            [9.0, 9.0],
            [9.0, 9.0],
            [1.0, 0.0],
        ]);
        let m = FeatureMatrix::from_rows("m", &[[0.0f32, 0.0]]).unwrap();
        assert_eq!(assign_units(&m, &cb).unwrap().units(), &[2]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cb = cb(&[[0.0, 0.0]]);
        let m = FeatureMatrix::new("m", 3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            assign_units(&m, &cb),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn nonempty_unit_resolves_to_itself() {
        let cb = cb(&[[0.0, 0.0]; 10]);
        let mut occ = vec![0; 10];
        occ[4] = 2;
        assert_eq!(nearest_nonempty_cluster(4, &occ, &cb).unwrap(), 4);
    }

    #[test]
    fn empty_unit_falls_back_to_only_occupied_cluster() {
        let rows: Vec<[f32; 2]> = (0..10).map(|i| [i as f32, 0.0]).collect();
        let cb = cb(&rows);
        let mut occ = vec![0; 10];
        occ[9] = 1;
        assert_eq!(nearest_nonempty_cluster(4, &occ, &cb).unwrap(), 9);
    }

    #[test]
    fn fallback_ties_go_to_lower_index() {
        let cb = cb(&[[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(nearest_nonempty_cluster(1, &[1, 0, 1], &cb).unwrap(), 0);
    }

    #[test]
    fn all_empty_is_an_error() {
        let cb = cb(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            nearest_nonempty_cluster(0, &[0, 0], &cb),
            Err(Error::AllClustersEmpty)
        ));
        assert!(matches!(
            nearest_nonempty_cluster(2, &[1, 0], &cb),
            Err(Error::UnitOutOfRange { .. })
        ));
    }
}
