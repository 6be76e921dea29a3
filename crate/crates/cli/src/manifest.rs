use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use beamlab::config::RunConfig;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

/// Coordinates of the instance that aborted a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedInstance {
    pub message: String,
    pub method: Option<String>,
    pub point: Option<usize>,
    pub repeat: Option<usize>,
    pub problem_id: Option<u64>,
}

/// Everything needed to rerun a command: the full config with its seed,
/// content hashes of the presets and the files produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    pub workers: usize,
    pub preset_hashes: BTreeMap<String, String>,
    pub presets_digest: String,
    pub started_unix: u64,
    #[serde(default)]
    pub finished_unix: Option<u64>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub failure: Option<FailedInstance>,
    pub config: RunConfig,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, workers: usize) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            master_seed: config.master_seed,
            workers,
            preset_hashes: config.preset_hashes(),
            presets_digest: config.presets_digest(),
            started_unix: now_unix(),
            finished_unix: None,
            outputs: Vec::new(),
            notes: Vec::new(),
            failure: None,
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn add_output(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
    }

    /// Comment embedded in every figure.
    pub fn provenance(&self, source: &str) -> String {
        format!("beamlab {} | data {} | presets sha256 {} | seed {}", self.tool_version, source, self.presets_digest, self.master_seed)
    }
}
