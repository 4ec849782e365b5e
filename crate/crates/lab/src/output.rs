//! Run directories: files are written to a staging directory next to the
//! target, the manifest goes in last, and the whole directory is renamed
//! into place.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub jobs: usize,
    pub config_path: String,
    /// The config document exactly as read.
    pub config: String,
    /// Unix time in milliseconds.
    pub started_at_ms: u128,
    pub finished_at_ms: u128,
    pub files: Vec<FileEntry>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files of a run being assembled.
pub struct Staging {
    dir: PathBuf,
    target: PathBuf,
    files: Vec<String>,
}

impl Staging {
    pub fn create(target: &Path) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| LabError::validation("out", format!("{} has no final component", target.display())))?;
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
        if target.exists() && !is_replaceable(target)? {
            return Err(LabError::validation(
                "out",
                format!("{} exists and is not a run directory; refusing to replace it", target.display()),
            ));
        }
        let mut staged = name.to_os_string();
        staged.push(format!(".staging-{}", std::process::id()));
        let dir = parent.join(staged);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        }
        fs::create_dir(&dir).map_err(|e| LabError::io(&dir, e))?;
        Ok(Self { dir, target: target.to_path_buf(), files: Vec::new() })
    }

    fn path_for(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let path = self.path_for(name);
        let mut w = csv::Writer::from_path(&path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| LabError::io(&path, e))?;
        Ok(())
    }

    /// CSV with an explicit header, for rows that are not flat records.
    pub fn write_csv_records(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path_for(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| LabError::io(&path, e))?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path_for(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| LabError::io(&path, e))
    }

    /// Digest every file, write the manifest and move the directory into
    /// place. `manifest.files` is filled in here.
    pub fn commit(self, mut manifest: RunManifest) -> Result<RunManifest> {
        let mut entries = Vec::new();
        for name in &self.files {
            let path = self.dir.join(name);
            let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
            entries.push(FileEntry { path: name.clone(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        }
        manifest.files = entries;
        manifest.finished_at_ms = now_ms();
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let mpath = self.dir.join(MANIFEST);
        fs::write(&mpath, text).map_err(|e| LabError::io(&mpath, e))?;

        if self.target.exists() {
            let mut old = self.target.clone().into_os_string();
            old.push(format!(".old-{}", std::process::id()));
            let old = PathBuf::from(old);
            fs::rename(&self.target, &old).map_err(|e| LabError::io(&self.target, e))?;
            fs::rename(&self.dir, &self.target).map_err(|e| LabError::io(&self.dir, e))?;
            fs::remove_dir_all(&old).map_err(|e| LabError::io(&old, e))?;
        } else {
            fs::rename(&self.dir, &self.target).map_err(|e| LabError::io(&self.dir, e))?;
        }
        Ok(manifest)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        // no-op after a successful commit, which moved the directory away
        let _ = fs::remove_dir_all(&self.dir);
    }
}

/// Empty directories and earlier run directories may be replaced.
fn is_replaceable(dir: &Path) -> Result<bool> {
    if !dir.is_dir() {
        return Ok(false);
    }
    if dir.join(MANIFEST).is_file() {
        return Ok(true);
    }
    let mut entries = fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?;
    Ok(entries.next().is_none())
}

/// Read a run's manifest and check every listed file against its digest.
pub fn verify_run(dir: &Path) -> Result<RunManifest> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath)
        .map_err(|e| LabError::Integrity(format!("cannot read {}: {e}", mpath.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| LabError::Integrity(format!("corrupt manifest {}: {e}", mpath.display())))?;
    for f in &manifest.files {
        let path = dir.join(&f.path);
        let bytes =
            fs::read(&path).map_err(|e| LabError::Integrity(format!("listed file {} unreadable: {e}", f.path)))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(LabError::Integrity(format!("{} does not match its recorded digest", f.path)));
        }
    }
    Ok(manifest)
}
