use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use unitsel_core::store::{read_features, read_units};
use unitsel_core::{assign_units, Codebook, Manifest, ManifestEntry, Utterance};

/// Reads one utterance's features and its units, either from `units_path`
/// or by tokenizing the features with `cb`.
pub fn load_utterance(entry: &ManifestEntry, cb: &Codebook) -> Result<Utterance> {
    let features = read_features(&entry.feature_path)
        .with_context(|| format!("reading features of `{}`", entry.utterance_id))?
        .with_utterance_id(entry.utterance_id.clone());
    let units = match &entry.units_path {
        Some(p) => {
            let u = read_units(p)
                .with_context(|| format!("reading units of `{}`", entry.utterance_id))?;
            if u.k() as usize != cb.k() {
                bail!(
                    "units of `{}` were made with K = {}, codebook has K = {}",
                    entry.utterance_id,
                    u.k(),
                    cb.k()
                );
            }
            u
        }
        None => assign_units(&features, cb)
            .with_context(|| format!("tokenizing `{}`", entry.utterance_id))?,
    };
    Ok(Utterance::new(units, features)?)
}

pub fn load_all<'a>(
    entries: impl IntoIterator<Item = &'a ManifestEntry>,
    cb: &Codebook,
) -> Result<Vec<Arc<Utterance>>> {
    let entries: Vec<&ManifestEntry> = entries.into_iter().collect();
    entries
        .par_iter()
        .map(|e| load_utterance(e, cb).map(Arc::new))
        .collect()
}

/// The speaker to operate on: the one named, or the only one present.
pub fn choose_speaker(manifest: &Manifest, requested: Option<&str>) -> Result<String> {
    let speakers = manifest.speakers();
    match requested {
        Some(s) if speakers.contains(&s) => Ok(s.to_string()),
        Some(s) => bail!("speaker `{s}` does not appear in the manifest"),
        None => match speakers.as_slice() {
            [] => bail!("manifest has no utterances"),
            [only] => Ok(only.to_string()),
            many => bail!(
                "manifest holds {} speakers; pass --speaker to choose one",
                many.len()
            ),
        },
    }
}
