//! Stage manifests. Each stage records the SHA-256 of every file it read and
//! wrote; a consumer checks that the files it is about to read are the ones
//! their producer wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    /// Hash of the resolved configuration.
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn manifest_name(stage: &str) -> String {
    format!("{stage}.manifest.json")
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_bytes(&bytes))
}

impl Manifest {
    pub fn new(stage: &str, seed: u64, config_toml: &str) -> Self {
        Manifest {
            stage: stage.to_string(),
            seed,
            config_sha256: sha256_bytes(config_toml.as_bytes()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, label: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(label.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        self.outputs.insert(name.to_string(), sha256_file(&dir.join(name))?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join(manifest_name(&self.stage)), text + "\n").map_err(CliError::data)
    }

    pub fn read(dir: &Path, stage: &str) -> Result<Self, CliError> {
        let path = dir.join(manifest_name(stage));
        let text = fs::read_to_string(&path).map_err(|_| {
            CliError::Data(format!(
                "missing `{stage}` stage output in {}: run `{stage}` first",
                dir.display()
            ))
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("corrupt {}: {e}", path.display())))
    }
}

/// Checks that `dir/name` is still the file `stage` wrote and returns its hash.
pub fn verify_output(dir: &Path, stage: &str, name: &str) -> Result<String, CliError> {
    let manifest = Manifest::read(dir, stage)?;
    let recorded = manifest
        .outputs
        .get(name)
        .ok_or_else(|| CliError::Data(format!("`{stage}` manifest does not list {name}")))?;
    let path = dir.join(name);
    if !path.exists() {
        return Err(CliError::Data(format!(
            "missing {}: run `{stage}` first",
            path.display()
        )));
    }
    let actual = sha256_file(&path)?;
    if &actual != recorded {
        return Err(CliError::Data(format!(
            "{name} changed since `{stage}` wrote it; rerun `{stage}`"
        )));
    }
    Ok(actual)
}
