//! Reproducibility manifests: what a command read, with which settings,
//! and what it wrote. No timestamps, so identical runs give identical
//! manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    /// Directories hash the sorted list of their files' names and digests.
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: digest_path(path)?,
        })
    }
}

fn digest_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        let mut listing = String::new();
        for e in entries {
            let name = e.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            listing.push_str(&format!("{name} {}\n", digest_path(&e)?));
        }
        Ok(sha256_hex(listing.as_bytes()))
    } else {
        let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(sha256_hex(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Manifest location for an output file or directory.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Hashes `inputs` and `outputs` and writes the manifest next to the
/// first output.
pub fn write_manifest(command: &str, config: &RunConfig, inputs: &[&Path], outputs: &[&Path]) -> Result<PathBuf> {
    let m = Manifest {
        command: command.to_string(),
        seed: config.seed,
        config_digest: config.digest(),
        config: config.clone(),
        inputs: inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
    };
    let path = manifest_path(outputs.first().copied().unwrap_or(Path::new(command)));
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
