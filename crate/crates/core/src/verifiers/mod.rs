//! Scoring functions for partial paths.
//!
//! - [`OracleOvm`]: the exact success probability of a prefix.
//! - [`FittedOvm`]: least-squares value model trained on outcome labels.
//! - [`Prm`]: oracle step-correctness, optionally noise-perturbed per step,
//!   aggregated over the path.
//! - [`Noisy`]: wraps any verifier with keyed logit-space noise.
//! - [`UniformVerifier`]: keyed uniform scores carrying no information.

mod ovm;

pub use ovm::{
    build_ovm_dataset, fit_ovm, ranking_accuracy, Featurizer, FittedOvm, OvmDataset, OvmRow,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{PartialPath, Problem, Score};
use crate::error::{Error, Result};
use crate::generators::GenerationPolicy;
use crate::rng::{derive, stream, tag, unit_f64};
use crate::synthworld::true_value;

/// Clamp applied before every logit transform.
pub const LOGIT_EPS: f64 = 1e-6;

pub trait Verifier: Send + Sync {
    fn score(&self, problem: &Problem, prefix: &PartialPath) -> Result<Score>;
}

impl<V: Verifier + ?Sized> Verifier for std::sync::Arc<V> {
    fn score(&self, problem: &Problem, prefix: &PartialPath) -> Result<Score> {
        (**self).score(problem, prefix)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logit-space noise. `sigma` is the standard deviation, `bias` a constant
/// offset; `seed` selects the noise realization.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma: f64,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, bias: f64, seed: u64) -> Result<Self> {
        let n = NoiseSpec { sigma, bias, seed };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_nan() || self.sigma < 0.0 || self.bias.is_nan() {
            return Err(Error::InvalidParams(format!("noise sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma == 0.0 && self.bias == 0.0
    }
}

/// `sigmoid(logit(clamp(s, ε, 1-ε)) + bias + σ·z)` with `z` a standard
/// normal fixed by `(noise.seed, problem_id, key)`: the same prefix always
/// gets the same perturbed score.
pub fn perturb(s: Score, noise: &NoiseSpec, problem_id: u64, key: u64) -> Score {
    if noise.is_zero() {
        return Score::clamped(s.value().clamp(LOGIT_EPS, 1.0 - LOGIT_EPS));
    }
    let z: f64 = if noise.sigma > 0.0 {
        stream(noise.seed, &[tag("noise"), problem_id, key]).sample(StandardNormal)
    } else {
        0.0
    };
    Score::clamped(sigmoid(logit(s.value()) + noise.bias + noise.sigma * z))
}

/// Exact value of the prefix under the generation policy.
#[derive(Clone, Debug, Default)]
pub struct OracleOvm {
    pub policy: GenerationPolicy,
}

impl OracleOvm {
    pub fn new(policy: GenerationPolicy) -> Self {
        OracleOvm { policy }
    }
}

pub fn score_ovm_oracle(problem: &Problem, prefix: &PartialPath, policy: &GenerationPolicy) -> Result<Score> {
    Ok(Score::clamped(true_value(problem, prefix, policy)?))
}

impl Verifier for OracleOvm {
    fn score(&self, problem: &Problem, prefix: &PartialPath) -> Result<Score> {
        score_ovm_oracle(problem, prefix, &self.policy)
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Weakest step decides.
    #[default]
    Min,
    Product,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrmMode {
    Oracle,
    Noisy,
}

/// Process scorer: per-step oracle correctness, perturbed per step in noisy
/// mode, then aggregated.
#[derive(Clone, Debug)]
pub struct Prm {
    pub mode: PrmMode,
    pub noise: NoiseSpec,
    pub aggregation: Aggregation,
}

impl Prm {
    pub fn oracle() -> Self {
        Prm { mode: PrmMode::Oracle, noise: NoiseSpec { sigma: 0.0, bias: 0.0, seed: 0 }, aggregation: Aggregation::Min }
    }

    pub fn noisy(noise: NoiseSpec) -> Self {
        Prm { mode: PrmMode::Noisy, noise, aggregation: Aggregation::Min }
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    /// Per-step scores along `prefix`, root excluded.
    pub fn step_scores(&self, problem: &Problem, prefix: &PartialPath) -> Result<Vec<f64>> {
        let world = &problem.world;
        let mut node = world.root();
        let mut out = Vec::with_capacity(prefix.len());
        for step in prefix.steps() {
            node = world.child(node, step.token)?;
            let label = if node.valid { Score::ONE } else { Score::ZERO };
            let s = match self.mode {
                PrmMode::Oracle => label,
                PrmMode::Noisy => perturb(label, &self.noise, problem.id, node.key),
            };
            out.push(s.value());
        }
        Ok(out)
    }
}

pub fn score_prm(problem: &Problem, prefix: &PartialPath, prm: &Prm) -> Result<Score> {
    if prefix.is_empty() {
        return Err(Error::contract("PRM scoring needs a nonempty prefix"));
    }
    let steps = prm.step_scores(problem, prefix)?;
    let agg = match prm.aggregation {
        Aggregation::Min => steps.iter().cloned().fold(1.0, f64::min),
        Aggregation::Product => steps.iter().product(),
    };
    let agg = if prefix.is_truncated() { 0.0 } else { agg };
    Ok(Score::clamped(agg))
}

impl Verifier for Prm {
    fn score(&self, problem: &Problem, prefix: &PartialPath) -> Result<Score> {
        score_prm(problem, prefix, self)
    }
}

/// Adds keyed logit noise on top of another verifier.
pub struct Noisy<V> {
    pub base: V,
    pub noise: NoiseSpec,
}

impl<V: Verifier> Verifier for Noisy<V> {
    fn score(&self, problem: &Problem, prefix: &PartialPath) -> Result<Score> {
        let s = self.base.score(problem, prefix)?;
        Ok(perturb(s, &self.noise, problem.id, prefix.key()))
    }
}

/// Scores that carry no information about validity.
#[derive(Copy, Clone, Debug, Default)]
pub struct UniformVerifier {
    pub seed: u64,
}

impl Verifier for UniformVerifier {
    fn score(&self, problem: &Problem, prefix: &PartialPath) -> Result<Score> {
        Ok(Score::clamped(unit_f64(derive(self.seed, &[tag("uniform"), problem.id, prefix.key()]))))
    }
}
