use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use upliftforge::pipeline::PipelineConfig;
use upliftforge::util::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub cli: String,
    pub core: String,
    pub model_format: u32,
    pub report_schema: u32,
    pub service_schema: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            cli: env!("CARGO_PKG_VERSION").to_string(),
            core: upliftforge::VERSION.to_string(),
            model_format: upliftforge::model::FORMAT_VERSION,
            report_schema: upliftforge::eval::REPORT_SCHEMA_VERSION,
            service_schema: upliftforge_service::api::SCHEMA_VERSION,
        }
    }
}

/// What a command read, wrote and was configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    /// SHA-256 over the resolved configuration and the command settings.
    pub config_digest: String,
    pub seed: u64,
    /// The full configuration with every default filled in.
    pub config: PipelineConfig,
    /// Command-specific settings outside the configuration file.
    pub settings: BTreeMap<String, Value>,
    pub versions: Versions,
    pub inputs: Vec<FileDigest>,
    /// Outputs, relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn settings_digest(config: &PipelineConfig, settings: &BTreeMap<String, Value>) -> String {
    let canonical = serde_json::to_string(&(config, settings)).expect("config serialises");
    sha256_hex(canonical.as_bytes())
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {} for its digest", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Builder that records inputs, outputs and timing of one command.
pub struct ManifestBuilder {
    command: String,
    config: PipelineConfig,
    seed: u64,
    settings: BTreeMap<String, Value>,
    inputs: Vec<PathBuf>,
    started: DateTime<Utc>,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: &PipelineConfig, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            seed,
            settings: BTreeMap::new(),
            inputs: Vec::new(),
            started: Utc::now(),
        }
    }

    pub fn setting(mut self, key: &str, value: impl Serialize) -> Self {
        self.settings
            .insert(key.to_string(), serde_json::to_value(value).expect("setting serialises"));
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn digest(&self) -> String {
        settings_digest(&self.config, &self.settings)
    }

    /// Hashes inputs and `outputs` (paths inside `out_dir`) and writes `manifest.json` there.
    pub fn finish(self, out_dir: &Path, outputs: &[PathBuf]) -> Result<RunManifest> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: file_digest(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut outputs = outputs
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(out_dir).unwrap_or(p);
                Ok(FileDigest {
                    path: rel.display().to_string(),
                    sha256: file_digest(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            manifest_version: MANIFEST_VERSION,
            config_digest: self.digest(),
            command: self.command,
            seed: self.seed,
            config: self.config,
            settings: self.settings,
            versions: Versions::current(),
            inputs,
            outputs,
            started_at: timestamp(self.started),
            finished_at: timestamp(Utc::now()),
        };
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
