//! Per-stage manifests: which config and inputs produced which outputs.
//!
//! A stage writes `<out>/<stage>.manifest.json` with status `incomplete`
//! before it computes anything and rewrites it as `complete` at the end, so an
//! interrupted run is recognizable. Manifests carry no timestamps or thread
//! counts; rerunning a stage reproduces its manifest byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ValidationError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Path relative to the manifest's directory when it lies inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub stage: String,
    pub status: Status,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub seed_override: Option<u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join(format!("{stage}.manifest.json"))
}

fn display_path(out: &Path, path: &Path) -> String {
    path.strip_prefix(out)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

impl Manifest {
    pub fn new(stage: &str, config: serde_json::Value, seed_override: Option<u64>) -> Self {
        let canonical = serde_json::to_vec(&config).expect("config serializes");
        Manifest {
            format_version: FORMAT_VERSION,
            stage: stage.to_string(),
            status: Status::Incomplete,
            config_sha256: sha256_hex(&canonical),
            config,
            seed_override,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Hashes each input after checking it against any manifest in its own
    /// directory that lists it as an output.
    pub fn add_inputs(&mut self, out: &Path, inputs: &[PathBuf]) -> Result<()> {
        for path in inputs {
            if !path.is_file() {
                return Err(ValidationError(format!("missing input {}", path.display())).into());
            }
            let sha256 = hash_file(path)?;
            verify_against_producer(path, &sha256)?;
            self.inputs.push(FileHash {
                path: display_path(out, path),
                sha256,
            });
        }
        Ok(())
    }

    pub fn add_outputs(&mut self, out: &Path, outputs: &[PathBuf]) -> Result<()> {
        for path in outputs {
            self.outputs.push(FileHash {
                path: display_path(out, path),
                sha256: hash_file(path)?,
            });
        }
        Ok(())
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        let path = manifest_path(out, &self.stage);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Fails when a completed manifest next to `path` recorded a different hash
/// for it, i.e. the artifact changed after its stage finished.
fn verify_against_producer(path: &Path, sha256: &str) -> Result<()> {
    let Some(dir) = path.parent() else {
        return Ok(());
    };
    let dir = if dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        dir
    };
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
    let mut manifests: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    manifests.sort();
    for m in manifests {
        let Ok(text) = fs::read_to_string(&m) else {
            continue;
        };
        let Ok(manifest) = serde_json::from_str::<Manifest>(&text) else {
            continue;
        };
        if manifest.status != Status::Complete {
            continue;
        }
        for o in &manifest.outputs {
            if Some(&o.path) == name.as_ref() && o.sha256 != sha256 {
                return Err(ValidationError(format!(
                    "{} does not match the hash recorded in {}",
                    path.display(),
                    m.display()
                ))
                .into());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn tampered_input_is_caught() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("S0.csv");
        fs::write(&data, "a").unwrap();
        let mut m = Manifest::new("gen-data", serde_json::json!({}), None);
        m.add_outputs(dir.path(), std::slice::from_ref(&data)).unwrap();
        m.status = Status::Complete;
        m.write(dir.path()).unwrap();

        let mut next = Manifest::new("train", serde_json::json!({}), None);
        next.add_inputs(dir.path(), std::slice::from_ref(&data)).unwrap();
        assert_eq!(next.inputs[0].path, "S0.csv");

        fs::write(&data, "b").unwrap();
        let err = next.add_inputs(dir.path(), &[data]).unwrap_err();
        assert!(err.is::<ValidationError>());
    }
}
