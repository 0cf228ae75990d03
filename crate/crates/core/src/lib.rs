//! Discrete speech units and unit-based frame selection.
//!
//! Frame-level speech features are quantized against a k-means [`Codebook`]
//! into [`UnitSequence`]s. Given a predicted unit sequence and a target
//! speaker's [`ReferencePool`], [`select_frames`] assembles a new feature
//! sequence from that speaker's real frames: first by copying whole
//! reference segments whose units match runs of the prediction (longest
//! first), then by sampling or averaging reference frames of the predicted
//! unit's cluster for whatever is left.

pub mod error;
pub mod eval;
pub mod pool;
pub mod select;
pub mod store;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};
pub use eval::{
    parse_duration, reconstruction_eval, reference_duration_sweep, DurationBudget, ReconReport,
    SweepRow,
};
pub use pool::{brute_force_find, build_pool, FrameRef, Occurrence, ReferencePool};
pub use select::{
    inverse_kmeans_sample, leave_one_out_pairs, select_frames, subsequence_match, OccurrencePolicy,
    Provenance, SamplingMode, SelectionConfig, SelectionResult,
};
pub use store::{Codebook, FeatureMatrix, Manifest, ManifestEntry, UnitSequence, Utterance};
pub use tokenizer::{
    assign_units, fit_kmeans, nearest_nonempty_cluster, train_codebook, KMeansConfig, KMeansFit,
};
