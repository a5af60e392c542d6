//! Run manifests: everything needed to replay a command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use alpha_miner::factor_dsl::Digest;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const TOOL: &str = "alpha-miner";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

impl FileEntry {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: Digest::of(&bytes).to_hex(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: Option<String>,
    /// Effective flags with defaults filled in. Passing this manifest back
    /// through `--config` replays the run.
    pub settings: Value,
    pub rng_seeds: BTreeMap<String, u64>,
    /// Module parameters in force (scenario, campaign, fusion, ...).
    pub parameters: Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: Option<&PathBuf>, settings: &impl Serialize) -> Result<Self, CliError> {
        Ok(Self {
            manifest: RunManifest {
                tool: TOOL.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                config_path: config.map(|p| p.display().to_string()),
                settings: serde_json::to_value(settings)?,
                rng_seeds: BTreeMap::new(),
                parameters: Value::Object(Default::default()),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.manifest.rng_seeds.insert(name.into(), value);
        self
    }

    pub fn param(mut self, name: &str, value: &impl Serialize) -> Result<Self, CliError> {
        if let Value::Object(m) = &mut self.manifest.parameters {
            m.insert(name.into(), serde_json::to_value(value)?);
        }
        Ok(self)
    }

    pub fn input(mut self, path: Option<&PathBuf>) -> Result<Self, CliError> {
        if let Some(p) = path {
            self.manifest.inputs.push(FileEntry::of(p)?);
        }
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Result<Self, CliError> {
        self.manifest.outputs.push(FileEntry::of(path)?);
        Ok(self)
    }

    /// Writes `<out>/<command>.manifest.json`.
    pub fn write(self, out: &Path) -> Result<PathBuf, CliError> {
        let path = out.join(format!("{}.manifest.json", self.manifest.command));
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Accepts a manifest where a config is expected: its `settings` become
/// the config values.
pub fn unwrap_manifest(v: Value) -> Value {
    match v {
        Value::Object(mut m) if m.get("tool").and_then(Value::as_str) == Some(TOOL) && m.contains_key("settings") => {
            m.remove("settings").unwrap_or_default()
        }
        other => other,
    }
}
