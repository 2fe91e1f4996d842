//! Atomic result directories and manifests.
//!
//! Files are written into a hidden staging directory next to the final
//! location. Only after the experiment succeeds are checksums taken, the
//! manifest written, and each file renamed into place; a failed run removes
//! the staging directory and leaves the output directory untouched.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    /// Absent in dry-run manifests.
    pub sha256: Option<String>,
    pub bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub dry_run: bool,
    /// Seconds; the only field that differs between identical runs.
    pub wall_time_s: f64,
    /// External inputs with their checksums.
    pub inputs: Vec<FileEntry>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    /// Manifest with the timing field cleared, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Staging area for one run's output files.
pub struct OutputWriter {
    out: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl OutputWriter {
    pub fn create(out: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::io(format!("cannot create {}", out.display()), e))?;
        let staging = out.join(format!(".pcsim-staging-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging)
                .map_err(|e| CliError::io("cannot clear staging directory", e))?;
        }
        std::fs::create_dir(&staging)
            .map_err(|e| CliError::io(format!("cannot create {}", staging.display()), e))?;
        Ok(Self {
            out: out.to_path_buf(),
            staging,
            committed: false,
        })
    }

    /// Staging path for an output file name.
    pub fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, text)
            .map_err(|e| CliError::io(format!("cannot write {}", p.display()), e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(pcsim_core::Error::from)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Writes a CSV file from a header and rows of formatted fields.
    pub fn write_csv<R, F>(&self, name: &str, header: &[&str], rows: R) -> Result<(), CliError>
    where
        R: IntoIterator<Item = F>,
        F: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()
            .map_err(|e| CliError::io(format!("cannot write {name}"), e))?;
        Ok(())
    }

    /// Checksums every staged file, writes the manifest and moves the files
    /// into the output directory.
    pub fn commit(mut self, mut manifest: Manifest) -> Result<Manifest, CliError> {
        let mut names = Vec::new();
        for entry in std::fs::read_dir(&self.staging)
            .map_err(|e| CliError::io("cannot list staging directory", e))?
        {
            let entry = entry.map_err(|e| CliError::io("cannot list staging directory", e))?;
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
        names.sort();
        manifest.files = names
            .iter()
            .map(|n| {
                let (sha, bytes) = sha256_file(&self.path(n))?;
                Ok(FileEntry {
                    path: n.clone(),
                    sha256: Some(sha),
                    bytes: Some(bytes),
                })
            })
            .collect::<Result<_, CliError>>()?;
        self.write_json(MANIFEST, &manifest)?;
        names.push(MANIFEST.to_string());
        for n in &names {
            let target = self.out.join(n);
            std::fs::rename(self.path(n), &target)
                .map_err(|e| CliError::io(format!("cannot move {n} into place"), e))?;
        }
        std::fs::remove_dir(&self.staging)
            .map_err(|e| CliError::io("cannot remove staging directory", e))?;
        self.committed = true;
        Ok(manifest)
    }
}

impl Drop for OutputWriter {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}
