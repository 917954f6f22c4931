//! Staged artifact writing and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use atrisk::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl Artifact {
    pub fn of_file(path: &Path) -> Result<Artifact> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Artifact {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        })
    }
}

/// Everything needed to replay a run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub summary: serde_json::Value,
}

/// Output files held in memory until the whole run has succeeded.
pub struct Staged {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Staged {
            dir: dir.into(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("value serializes");
        text.push('\n');
        self.add(name, text.into_bytes());
    }

    /// Writes every staged file plus `manifest.json`. Each file goes to a
    /// temporary name first and is renamed into place.
    pub fn commit(mut self, mut manifest: RunManifest) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        manifest.outputs = self
            .files
            .iter()
            .map(|(name, bytes)| Artifact {
                path: self.dir.join(name).display().to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len(),
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        self.files.push(("manifest.json".to_string(), text.into_bytes()));

        let tmp: Vec<PathBuf> = self
            .files
            .iter()
            .map(|(name, _)| self.dir.join(format!(".{name}.partial")))
            .collect();
        for ((_, bytes), path) in self.files.iter().zip(&tmp) {
            if let Err(e) = fs::write(path, bytes) {
                for p in &tmp {
                    let _ = fs::remove_file(p);
                }
                return Err(Error::io(path, e));
            }
        }
        let mut written = Vec::new();
        for ((name, _), from) in self.files.iter().zip(&tmp) {
            let to = self.dir.join(name);
            fs::rename(from, &to).map_err(|e| Error::io(&to, e))?;
            written.push(to);
        }
        Ok(written)
    }
}

/// Minimal CSV field quoting.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
