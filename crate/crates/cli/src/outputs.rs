use std::fs;
use std::path::{Path, PathBuf};

/// Files written by a command. Unless [`Outputs::commit`] is called, every
/// tracked file is deleted on drop so a failed run leaves nothing behind.
#[derive(Debug, Default)]
pub struct Outputs {
    paths: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `path` before it is written and hands it back.
    pub fn track(&mut self, path: impl Into<PathBuf>) -> PathBuf {
        let path = path.into();
        self.paths.push(path.clone());
        path
    }

    /// Creates `dir` if needed; directories this run created are removed on failure.
    pub fn ensure_dir(&mut self, dir: &Path) -> std::io::Result<()> {
        if !dir.exists() {
            fs::create_dir_all(dir)?;
            self.dirs.push(dir.to_path_buf());
        }
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in self.paths.iter().rev() {
            let _ = fs::remove_file(p);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

/// Turns an utterance id into a safe file stem.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}
