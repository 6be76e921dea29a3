//! Run configuration: one TOML document with named world presets and a
//! section per experiment.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{Preset, Stratum, SweepConfig, SweepPlan, VerifierSpec};
use crate::generators::GenerationPolicy;
use crate::search::SelectionPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    #[serde(default)]
    pub generation: GenerationPolicy,
    pub presets: BTreeMap<String, Preset>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub first_stage: Option<FirstStageConfig>,
    #[serde(default)]
    pub mitigate: Option<MitigateConfig>,
    #[serde(default)]
    pub ood: Option<OodConfig>,
}

fn top_b() -> SelectionPolicy {
    SelectionPolicy::top_b()
}

fn three() -> usize {
    3
}

fn k_cap() -> usize {
    256
}

/// First-stage selection scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstStageConfig {
    pub preset: String,
    pub problems: usize,
    pub b_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
    #[serde(default = "k_cap")]
    pub k_cap: usize,
    pub verifier: VerifierSpec,
    #[serde(default = "top_b")]
    pub policy: SelectionPolicy,
    #[serde(default = "three")]
    pub repeats: usize,
}

fn temperatures() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}

fn lambdas() -> Vec<f64> {
    vec![0.5, 0.75, 1.0]
}

/// Selection-stage accuracy of softmax and blended selection against
/// `top_b`, replayed on the stages of `top_b` searches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigateConfig {
    pub preset: String,
    pub problems: usize,
    pub b: usize,
    pub k: usize,
    pub verifier: VerifierSpec,
    #[serde(default = "temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "three")]
    pub repeats: usize,
}

/// Held-out ranking accuracy of the fitted OVM over a grid of `ood_shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    pub preset: String,
    pub shifts: Vec<f64>,
    pub train_problems: usize,
    pub train_rollouts: usize,
    pub test_problems: usize,
    pub test_rollouts: usize,
    #[serde(default = "three")]
    pub repeats: usize,
}

fn field(path: &str, e: Error) -> Error {
    Error::Config(format!("{path}: {e}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn preset(&self, name: &str, at: &str) -> Result<&Preset> {
        self.presets.get(name).ok_or_else(|| Error::Config(format!("{at}: unknown preset {name:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.validate().map_err(|e| field("generation", e))?;
        if self.presets.is_empty() {
            return Err(Error::Config("presets: at least one preset is required".into()));
        }
        for (name, p) in &self.presets {
            p.validate().map_err(|e| field(&format!("presets.{name}"), e))?;
        }
        if let Some(s) = &self.sweep {
            s.validate().map_err(|e| field("sweep", e))?;
            for name in &s.strata {
                self.preset(name, "sweep.strata")?;
            }
        }
        if let Some(f) = &self.first_stage {
            self.preset(&f.preset, "first_stage.preset")?;
            let bad = |m: &str| Err(Error::Config(format!("first_stage: {m}")));
            if f.problems == 0 || f.repeats == 0 {
                return bad("problems and repeats must be >= 1");
            }
            if f.b_grid.is_empty() || f.k_grid.is_empty() || f.b_grid.contains(&0) || f.k_grid.contains(&0) {
                return bad("b_grid and k_grid must be nonempty and positive");
            }
            if f.k_grid.iter().any(|&k| k > f.k_cap) {
                return bad("k_grid exceeds k_cap");
            }
            f.verifier.validate().map_err(|e| field("first_stage.verifier", e))?;
            f.policy.validate().map_err(|e| field("first_stage.policy", e))?;
        }
        if let Some(m) = &self.mitigate {
            self.preset(&m.preset, "mitigate.preset")?;
            crate::domain::BeamConfig::new(m.b, m.k, 1).map_err(|e| field("mitigate", e))?;
            if m.problems == 0 || m.repeats == 0 {
                return Err(Error::Config("mitigate: problems and repeats must be >= 1".into()));
            }
            for &t in &m.temperatures {
                SelectionPolicy::softmax(t).validate().map_err(|e| field("mitigate.temperatures", e))?;
            }
            for &l in &m.lambdas {
                SelectionPolicy::blended(l).validate().map_err(|e| field("mitigate.lambdas", e))?;
            }
            m.verifier.validate().map_err(|e| field("mitigate.verifier", e))?;
        }
        if let Some(o) = &self.ood {
            self.preset(&o.preset, "ood.preset")?;
            if o.shifts.is_empty() || o.shifts.iter().any(|s| s.is_nan() || *s < 0.0) {
                return Err(Error::Config("ood.shifts: must be nonempty and >= 0".into()));
            }
            if o.train_problems == 0 || o.train_rollouts == 0 || o.test_problems == 0 || o.test_rollouts == 0 || o.repeats == 0
            {
                return Err(Error::Config("ood: problem and rollout counts must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// The sweep section resolved against the presets.
    pub fn sweep_plan(&self) -> Result<SweepPlan> {
        let config = self.sweep.clone().ok_or_else(|| Error::Config("sweep: section missing".into()))?;
        let strata = config
            .strata
            .iter()
            .map(|n| Ok(Stratum { name: n.clone(), preset: self.preset(n, "sweep.strata")?.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepPlan { config, strata, generation: self.generation.clone(), master_seed: self.master_seed })
    }

    /// SHA-256 over the canonical JSON of each preset, by name.
    pub fn preset_hashes(&self) -> BTreeMap<String, String> {
        self.presets
            .iter()
            .map(|(n, p)| {
                let json = serde_json::to_vec(p).expect("presets serialize");
                (n.clone(), hex(&Sha256::digest(&json)))
            })
            .collect()
    }

    /// One hash over all presets, for provenance comments.
    pub fn presets_digest(&self) -> String {
        let json = serde_json::to_vec(&self.preset_hashes()).expect("hashes serialize");
        hex(&Sha256::digest(&json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
