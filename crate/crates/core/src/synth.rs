//! Seeded synthetic speaker corpora for exercising selection without a
//! speech encoder.
//!
//! Every speaker talks in words drawn (Zipf-weighted) from one shared
//! lexicon, where a word is a fixed run of units. A frame is its unit's
//! centroid plus a per-speaker offset plus uniform noise; units are then
//! re-derived from the features with the codebook, as a real tokenizer would.
//! Recurring words give larger reference pools more to match.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::SpeakerSplit;
use crate::store::{Codebook, FeatureMatrix, Utterance, DEFAULT_FRAME_HOP_MS};
use crate::tokenizer::{assign_units, DEFAULT_K};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub speakers: usize,
    pub k: usize,
    pub dim: usize,
    pub lexicon_size: usize,
    /// Inclusive range of units per word.
    pub word_units: (usize, usize),
    /// Inclusive range of frames each unit of a word lasts.
    pub unit_frames: (usize, usize),
    /// Inclusive range of words per utterance.
    pub utterance_words: (usize, usize),
    /// Reference material generated per speaker, in seconds.
    pub ref_seconds: f64,
    pub targets_per_speaker: usize,
    pub speaker_offset: f32,
    pub noise: f32,
    pub frame_hop_ms: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            speakers: 10,
            k: DEFAULT_K,
            dim: 32,
            lexicon_size: 400,
            word_units: (3, 8),
            unit_frames: (1, 2),
            utterance_words: (8, 20),
            ref_seconds: 300.0,
            targets_per_speaker: 5,
            speaker_offset: 0.15,
            noise: 0.05,
            frame_hop_ms: DEFAULT_FRAME_HOP_MS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub codebook: Codebook,
    pub speakers: Vec<SpeakerSplit>,
}

struct Lexicon {
    words: Vec<Vec<u32>>,
    weights: WeightedIndex<f64>,
}

impl Lexicon {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let words = (0..cfg.lexicon_size)
            .map(|_| {
                let n = rng.random_range(cfg.word_units.0..=cfg.word_units.1);
                let mut frames = Vec::new();
                for _ in 0..n {
                    let unit = rng.random_range(0..cfg.k as u32);
                    let dur = rng.random_range(cfg.unit_frames.0..=cfg.unit_frames.1);
                    frames.extend(std::iter::repeat(unit).take(dur));
                }
                frames
            })
            .collect();
        let weights = WeightedIndex::new((0..cfg.lexicon_size).map(|r| 1.0 / (r as f64 + 1.0)))
            .expect("non-empty positive weights");
        Self { words, weights }
    }

    fn utterance(&self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let n = rng.random_range(cfg.utterance_words.0..=cfg.utterance_words.1);
        (0..n)
            .flat_map(|_| self.words[self.weights.sample(rng)].iter().copied())
            .collect()
    }
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let ranges = [cfg.word_units, cfg.unit_frames, cfg.utterance_words];
    if cfg.speakers == 0 || cfg.k == 0 || cfg.dim == 0 || cfg.lexicon_size == 0 {
        return Err(Error::InvalidConfig(
            "speakers, k, dim and lexicon_size must be positive".into(),
        ));
    }
    if ranges.iter().any(|&(lo, hi)| lo == 0 || lo > hi) {
        return Err(Error::InvalidConfig(
            "length ranges must satisfy 1 <= lo <= hi".into(),
        ));
    }
    if cfg.ref_seconds.is_nan() || cfg.ref_seconds <= 0.0 || cfg.frame_hop_ms == 0 {
        return Err(Error::InvalidConfig(
            "ref_seconds and frame_hop_ms must be positive".into(),
        ));
    }
    Ok(())
}

/// Generates a corpus that is a pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centroids: Vec<f32> = (0..cfg.k * cfg.dim)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let codebook = Codebook::new(cfg.dim, centroids)?;
    let lexicon = Lexicon::new(cfg, &mut rng);
    let ref_frames = (cfg.ref_seconds * 1000.0 / cfg.frame_hop_ms as f64).ceil() as usize;

    let mut speakers = Vec::with_capacity(cfg.speakers);
    for s in 0..cfg.speakers {
        let speaker_id = format!("spk{s:03}");
        let offset: Vec<f32> = (0..cfg.dim)
            .map(|_| rng.random_range(-cfg.speaker_offset..=cfg.speaker_offset))
            .collect();
        let render = |id: String, rng: &mut ChaCha8Rng| -> Result<Arc<Utterance>> {
            let planted = lexicon.utterance(cfg, rng);
            let mut data = Vec::with_capacity(planted.len() * cfg.dim);
            for &u in &planted {
                for (c, o) in codebook.centroid(u as usize).iter().zip(&offset) {
                    data.push(c + o + rng.random_range(-cfg.noise..=cfg.noise));
                }
            }
            let features =
                FeatureMatrix::new(id, cfg.dim, data)?.with_frame_hop_ms(cfg.frame_hop_ms);
            let units = assign_units(&features, &codebook)?;
            Ok(Arc::new(Utterance::new(units, features)?))
        };

        let mut refs = Vec::new();
        let mut total = 0;
        while total < ref_frames {
            let u = render(format!("{speaker_id}_ref{:04}", refs.len()), &mut rng)?;
            total += u.len();
            refs.push(u);
        }
        let targets = (0..cfg.targets_per_speaker)
            .map(|i| render(format!("{speaker_id}_tgt{i:03}"), &mut rng))
            .collect::<Result<_>>()?;
        speakers.push(SpeakerSplit {
            speaker_id,
            targets,
            refs,
        });
    }
    Ok(SynthCorpus { codebook, speakers })
}
