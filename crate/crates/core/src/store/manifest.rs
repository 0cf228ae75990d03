use std::collections::HashSet;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One utterance record. Relative paths are resolved against the manifest's
/// directory when loaded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Builds a manifest from in-memory entries, rejecting duplicate ids.
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::DuplicateUtterance(e.utterance_id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Speaker ids in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .map(|e| e.speaker_id.as_str())
            .filter(|s| seen.insert(*s))
            .collect()
    }

    /// Entries of one speaker, in manifest order.
    pub fn speaker_entries<'a>(
        &'a self,
        speaker: &'a str,
    ) -> impl Iterator<Item = &'a ManifestEntry> {
        self.entries.iter().filter(move |e| e.speaker_id == speaker)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads a JSON-lines manifest. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| Error::ManifestRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        if entry.utterance_id.is_empty() {
            return Err(Error::ManifestRecord {
                line: line_no,
                message: "empty utterance_id".into(),
            });
        }
        if !seen.insert(entry.utterance_id.clone()) {
            return Err(Error::DuplicateUtterance(entry.utterance_id));
        }
        entry.feature_path = resolve(base, &entry.feature_path);
        if File::open(&entry.feature_path).is_err() {
            return Err(Error::UnresolvableFeaturePath {
                line: line_no,
                path: entry.feature_path,
            });
        }
        entry.units_path = entry.units_path.map(|p| resolve(base, &p));
        entries.push(entry);
    }
    Ok(Manifest { entries })
}

/// Writes one JSON object per line, paths as stored in the entries.
pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in &manifest.entries {
        serde_json::to_writer(&mut out, e).expect("manifest entries serialize");
        out.push(b'\n');
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
