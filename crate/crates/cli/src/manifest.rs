//! Reproducibility records written next to every command's primary output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Everything needed to reproduce one command invocation.
///
/// The flag map holds resolved values, defaults included, so the record is
/// complete even when the caller relied on implicit settings. Field order
/// and the sorted map keep the serialized form stable across reruns.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub flags: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            flags: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn flag(&mut self, name: &str, value: impl ToString) -> &mut Self {
        self.flags.insert(name.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Writes the manifest as pretty JSON beside `primary_output`.
    pub fn write_beside(&self, primary_output: &Path) -> Result<PathBuf> {
        let path = manifest_path(primary_output);
        self.write_to(&path)?;
        Ok(path)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        std::fs::write(path, body)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}

pub fn manifest_path(primary_output: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", primary_output.display()))
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
