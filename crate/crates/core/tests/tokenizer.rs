mod common;

use common::{brute_nearest, random_codebook, rng, sq_dist};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use unitsel_core::{
    assign_units, fit_kmeans, nearest_nonempty_cluster, Codebook, Error, FeatureMatrix,
    KMeansConfig,
};

fn random_frames(seed: u64, t: usize, dim: usize) -> FeatureMatrix {
    let mut r = rng(seed);
    FeatureMatrix::new(
        "f",
        dim,
        (0..t * dim).map(|_| r.random_range(-2f32..2.0)).collect(),
    )
    .unwrap()
}

#[test]
fn assignment_matches_linear_scan() {
    for trial in 0..10u64 {
        let mut r = rng(100 + trial);
        let cb = random_codebook(&mut r, 64, 16);
        let frames = random_frames(trial, 500, 16);
        let units = assign_units(&frames, &cb).unwrap();
        for (t, &u) in units.units().iter().enumerate() {
            assert_eq!(
                u,
                brute_nearest(frames.row(t), &cb),
                "trial {trial} frame {t}"
            );
        }
    }
}

#[test]
fn frames_on_centroids_map_to_them() {
    let mut r = rng(5);
    let cb = random_codebook(&mut r, 40, 8);
    let m = FeatureMatrix::new("c", 8, cb.as_slice().to_vec()).unwrap();
    let units = assign_units(&m, &cb).unwrap();
    assert_eq!(units.units(), (0..40).collect::<Vec<u32>>());
}

#[test]
fn kmeans_objective_never_increases() {
    let frames = random_frames(42, 10_000, 8);
    for seed in 0..10 {
        let cfg = KMeansConfig {
            k: 16,
            max_iters: 50,
            rel_tol: 0.0,
            seed,
        };
        let fit = fit_kmeans(&frames, &cfg).unwrap();
        assert!(fit.objectives.len() >= 2);
        for w in fit.objectives.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn final_objective_is_recomputable() {
    let frames = random_frames(3, 2_000, 6);
    let fit = fit_kmeans(
        &frames,
        &KMeansConfig {
            k: 12,
            max_iters: 30,
            rel_tol: 1e-6,
            seed: 9,
        },
    )
    .unwrap();
    let cb = &fit.codebook;
    let oracle: f64 = frames
        .iter_rows()
        .map(|row| sq_dist(row, cb.centroid(brute_nearest(row, cb) as usize)))
        .sum();
    let oracle = oracle / frames.rows() as f64;
    let got = fit.final_objective();
    assert!(
        ((got - oracle) / oracle.max(1e-12)).abs() < 1e-9,
        "recorded {got}, recomputed {oracle}"
    );
}

#[test]
fn training_is_seed_deterministic() {
    let frames = random_frames(8, 1_500, 4);
    let cfg = KMeansConfig {
        k: 20,
        max_iters: 20,
        rel_tol: 1e-4,
        seed: 77,
    };
    let a = fit_kmeans(&frames, &cfg).unwrap();
    let b = fit_kmeans(&frames, &cfg).unwrap();
    assert_eq!(a.codebook.fingerprint(), b.codebook.fingerprint());
    assert_eq!(a.objectives, b.objectives);
}

#[test]
fn too_few_frames_names_both_counts() {
    let frames = random_frames(1, 5, 3);
    let err = fit_kmeans(
        &frames,
        &KMeansConfig {
            k: 6,
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::NotEnoughFrames { frames: 5, k: 6 }));
    let msg = err.to_string();
    assert!(msg.contains('5') && msg.contains('6'), "{msg}");
}

fn nonempty_oracle(unit: u32, occ: &[usize], cb: &Codebook) -> Option<u32> {
    if occ[unit as usize] > 0 {
        return Some(unit);
    }
    (0..cb.k())
        .filter(|&c| occ[c] > 0)
        .map(|c| {
            (
                c as u32,
                sq_dist(cb.centroid(unit as usize), cb.centroid(c)),
            )
        })
        .fold(None, |best: Option<(u32, f64)>, (c, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((c, d)),
        })
        .map(|(c, _)| c)
}

#[test]
fn nearest_nonempty_matches_oracle() {
    let mut r = rng(11);
    for trial in 0..200 {
        let k = r.random_range(1..60);
        let cb = random_codebook(&mut r, k, 5);
        let occ: Vec<usize> = (0..k)
            .map(|_| {
                if r.random_bool(0.3) {
                    r.random_range(1..5)
                } else {
                    0
                }
            })
            .collect();
        for unit in 0..k as u32 {
            let got = nearest_nonempty_cluster(unit, &occ, &cb);
            match nonempty_oracle(unit, &occ, &cb) {
                Some(c) => assert_eq!(got.unwrap(), c, "trial {trial} unit {unit}"),
                None => assert!(matches!(got, Err(Error::AllClustersEmpty))),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Shuffling the frame order permutes the assignments the same way.
    #[test]
    fn assignment_is_permutation_equivariant(seed: u64, t in 1usize..80) {
        let mut r = rng(seed);
        let cb = random_codebook(&mut r, 10, 4);
        let frames = random_frames(seed ^ 1, t, 4);
        let mut order: Vec<usize> = (0..t).collect();
        order.shuffle(&mut r);
        let shuffled = FeatureMatrix::from_rows("s", &order.iter().map(|&i| frames.row(i)).collect::<Vec<_>>()).unwrap();
        let a = assign_units(&frames, &cb).unwrap();
        let b = assign_units(&shuffled, &cb).unwrap();
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(b.units()[j], a.units()[i]);
        }
    }
}
