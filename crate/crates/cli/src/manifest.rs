use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::RunConfig;

pub const MANIFEST_PREFIX: &str = "manifest-";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// What produced a set of outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            argv: argv.to_vec(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn digest(path: &Path) -> Result<FileDigest> {
        Ok(FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(Self::digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(Self::digest(path)?);
        Ok(())
    }

    /// Writes `manifest-<command>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{MANIFEST_PREFIX}{}.json", self.command));
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
