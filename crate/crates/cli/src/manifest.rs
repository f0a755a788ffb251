//! Run manifests: content hashes of inputs and outputs plus the resolved
//! parameters, written next to each output as `<out>.manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub parameters: BTreeMap<String, Value>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Value>,
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hashes(paths: &[PathBuf]) -> anyhow::Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: p.display().to_string(),
                sha256: file_sha256(p)?,
            })
        })
        .collect()
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    parameters: BTreeMap<String, Value>,
    inputs: Vec<PathBuf>,
    summary: Option<Value>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_owned(),
            seed: None,
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            summary: None,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.parameters.insert(key.to_owned(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn input_opt(self, path: Option<&PathBuf>) -> Self {
        match path {
            Some(p) => self.input(p),
            None => self,
        }
    }

    /// Run tallies recorded alongside the hashes.
    pub fn summary(mut self, value: impl Serialize) -> Self {
        self.summary = serde_json::to_value(value).ok();
        self
    }

    /// Hashes inputs and outputs and writes the manifest beside the first output.
    pub fn write(self, outputs: &[PathBuf]) -> anyhow::Result<Manifest> {
        let manifest = Manifest {
            tool: "trajkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            seed: self.seed,
            parameters: self.parameters,
            inputs: hashes(&self.inputs)?,
            outputs: hashes(outputs)?,
            summary: self.summary,
        };
        let first = outputs.first().context("a manifest needs at least one output")?;
        std::fs::write(manifest_path(first), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}
