//! Run directory layout, single-writer lock and the stage manifest.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use gaitdiff_core::gaitsim::Gait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const LOCKFILE: &str = ".lock";
pub const RUN_ROOT_ENV: &str = "GAITDIFF_RUN_ROOT";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_fingerprint: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

/// What every stage has produced so far, keyed by stage name. Holds no
/// timestamps so that identical runs write identical manifests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn gait_file(gait: Gait, name: &str) -> String {
        format!("{}/{name}", gait.name())
    }

    /// Takes the writer lock, creating the directory if needed.
    pub fn lock(&self) -> CliResult<RunLock> {
        fs::create_dir_all(&self.root).map_err(|e| {
            CliError::Usage(format!(
                "cannot create run directory {}: {e}",
                self.root.display()
            ))
        })?;
        let path = self.root.join(LOCKFILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Usage(format!(
                "run directory {} is locked by another writer; remove {} if no other command is running",
                self.root.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn manifest(&self) -> CliResult<Manifest> {
        let path = self.path(MANIFEST);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn write_manifest(&self, m: &Manifest) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(m)?;
        bytes.push(b'\n');
        fs::write(self.path(MANIFEST), bytes)?;
        Ok(())
    }

    pub fn record(&self, rel: &str) -> CliResult<FileRecord> {
        let bytes = fs::read(self.path(rel))
            .map_err(|e| CliError::Prerequisite(format!("cannot read {rel}: {e}")))?;
        Ok(FileRecord {
            path: rel.to_string(),
            sha256: sha256_hex(&bytes),
        })
    }

    /// True when every file listed in `rec` still hashes to its recorded
    /// value.
    pub fn is_current(&self, rec: &StageRecord, fingerprint: &str, inputs: &[FileRecord]) -> bool {
        rec.config_fingerprint == fingerprint
            && rec.inputs == inputs
            && rec
                .outputs
                .iter()
                .all(|f| self.record(&f.path).is_ok_and(|now| now == *f))
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn ensure_parent(&self, rel: &str) -> CliResult<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(path)
    }
}

/// Held while a command writes into a run directory.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
