use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{io_err, Error, Result};

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = sibling(path, ".tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// A directory that is populated under a temporary name and only appears at
/// its final path once [`StagedDir::commit`] succeeds.
#[derive(Debug)]
pub struct StagedDir {
    staging: PathBuf,
    target: PathBuf,
}

impl StagedDir {
    /// Fails if `target` exists and is not an empty directory. Leftover
    /// staging directories from interrupted runs are discarded.
    pub fn new(target: &Path) -> Result<StagedDir> {
        if target.exists() {
            let empty = fs::read_dir(target).map_err(io_err(target))?.next().is_none();
            if !empty {
                return Err(Error::Invalid(format!("output directory {} already exists and is not empty", target.display())));
            }
        }
        let staging = sibling(target, ".partial");
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        Ok(StagedDir { staging, target: target.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    pub fn commit(self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir(&self.target).map_err(io_err(&self.target))?;
        }
        fs::rename(&self.staging, &self.target).map_err(io_err(&self.target))?;
        Ok(self.target)
    }
}
