//! Run manifests: the resolved configuration plus hashes of every output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputFile>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    /// Hashes `outputs` (absolute or relative to `out_dir`).
    pub fn new(
        command: &str,
        config: &RunConfig,
        seeds: Vec<u64>,
        out_dir: &Path,
        outputs: &[PathBuf],
        wall_clock_seconds: f64,
    ) -> Result<Self> {
        let mut files = Vec::with_capacity(outputs.len());
        for p in outputs {
            let full = if p.is_absolute() { p.clone() } else { out_dir.join(p) };
            let bytes = fs::read(&full).with_context(|| format!("hashing {}", full.display()))?;
            let rel = full.strip_prefix(out_dir).unwrap_or(&full);
            files.push(OutputFile {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(&bytes),
            });
        }
        let inputs = [
            &config.inputs.data,
            &config.inputs.checkpoint,
            &config.inputs.samples,
            &config.inputs.reference,
        ]
        .into_iter()
        .flatten()
        .cloned()
        .collect();
        Ok(Self {
            command: command.to_string(),
            config: config.clone(),
            seeds,
            inputs,
            outputs: files,
            wall_clock_seconds,
        })
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let m: RunManifest = serde_json::from_slice(bytes)?;
        for f in &m.outputs {
            let p = Path::new(&f.path);
            if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                bail!("manifest output {:?} escapes the output directory", f.path);
            }
            if f.sha256.len() != 64 || !f.sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
                bail!("manifest output {:?} has a malformed hash", f.path);
            }
        }
        m.config.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(RUN_MANIFEST);
        fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }

    /// Output paths whose current content does not match the recorded hash.
    pub fn mismatches(&self, out_dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|f| {
                fs::read(out_dir.join(&f.path))
                    .map(|b| sha256_hex(&b) != f.sha256)
                    .unwrap_or(true)
            })
            .map(|f| f.path.clone())
            .collect()
    }

    /// Same manifest with the wall-clock field zeroed, for comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}
