//! Step proposal and rollout.

pub mod remote;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::domain::{PartialPath, Problem, Step, StepToken};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationPolicy {
    /// Temperature over the world's per-node step weights.
    #[serde(default = "one")]
    pub temperature: f64,
    /// Prefer distinct steps when selecting among candidates.
    #[serde(default = "yes")]
    pub dedup_priority: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl Default for GenerationPolicy {
    fn default() -> Self {
        GenerationPolicy { temperature: 1.0, dedup_priority: true }
    }
}

impl GenerationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParams(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Step cap per difficulty tier: 10 for tiers 1-2, 30 above.
pub fn default_t_max(difficulty: u8) -> usize {
    if difficulty <= 2 {
        10
    } else {
        30
    }
}

/// The generation contract. Implementations must tolerate concurrent calls
/// that use distinct rng streams.
pub trait Generator: Send + Sync {
    fn policy(&self) -> &GenerationPolicy;

    /// `n` next steps drawn independently, with replacement, in sampling order.
    fn propose(&self, problem: &Problem, prefix: &PartialPath, n: usize, rng: &mut Stream) -> Result<Vec<Step>>;

    /// Samples steps until an answer step or `t_max`. A path that hits the
    /// cap comes back flagged as truncated.
    fn rollout(&self, problem: &Problem, prefix: &PartialPath, t_max: usize, rng: &mut Stream) -> Result<PartialPath>;
}

/// Samples directly from the synthetic world's step weights.
#[derive(Clone, Debug, Default)]
pub struct SyntheticGenerator {
    policy: GenerationPolicy,
}

impl SyntheticGenerator {
    pub fn new(policy: GenerationPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(SyntheticGenerator { policy })
    }

    fn sampler(&self, problem: &Problem, node: crate::synthworld::NodeRef) -> Result<WeightedIndex<f64>> {
        let probs = problem.world.child_policy(node, self.policy.temperature);
        WeightedIndex::new(&probs).map_err(|e| Error::Generation(format!("degenerate step weights: {e}")))
    }
}

impl Generator for SyntheticGenerator {
    fn policy(&self) -> &GenerationPolicy {
        &self.policy
    }

    fn propose(&self, problem: &Problem, prefix: &PartialPath, n: usize, rng: &mut Stream) -> Result<Vec<Step>> {
        if prefix.is_finished() {
            return Err(Error::contract("cannot propose steps after a finished path"));
        }
        if n == 0 {
            return Err(Error::contract("propose needs n >= 1"));
        }
        let world = &problem.world;
        let node = world.locate(prefix)?;
        let sampler = self.sampler(problem, node)?;
        (0..n)
            .map(|_| world.make_step(node, StepToken(sampler.sample(rng) as u32)))
            .collect()
    }

    fn rollout(&self, problem: &Problem, prefix: &PartialPath, t_max: usize, rng: &mut Stream) -> Result<PartialPath> {
        if prefix.is_finished() {
            return Err(Error::contract("cannot roll out a finished path"));
        }
        let world = &problem.world;
        let mut node = world.locate(prefix)?;
        let mut path = prefix.clone();
        while !path.is_terminal() {
            if path.len() >= t_max {
                return Ok(path.into_truncated());
            }
            let token = StepToken(self.sampler(problem, node)?.sample(rng) as u32);
            let step = world.make_step(node, token)?;
            node = world.child(node, token)?;
            path = path.extend(step, t_max)?;
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Split;
    use crate::rng::stream;
    use crate::synthworld::{sample_problem, true_value, WorldParams};

    fn problem(depth: usize, branching: usize, p: f64, id: u64) -> Problem {
        let params = WorldParams { depth, branching, p_valid_child: p, seed: 3, ..Default::default() };
        sample_problem(&params, 1, Split::Train, id).unwrap()
    }

    #[test]
    fn proposals_are_reproducible() {
        let q = problem(4, 5, 0.3, 1);
        let g = SyntheticGenerator::default();
        let a = g.propose(&q, &PartialPath::root(), 16, &mut stream(1, &[2])).unwrap();
        let b = g.propose(&q, &PartialPath::root(), 16, &mut stream(1, &[2])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn finished_prefixes_are_rejected() {
        let q = problem(1, 2, 0.5, 0);
        let g = SyntheticGenerator::default();
        let mut rng = stream(0, &[]);
        let done = g.rollout(&q, &PartialPath::root(), 5, &mut rng).unwrap();
        assert!(done.is_terminal());
        assert!(g.propose(&q, &done, 1, &mut rng).is_err());
        assert!(g.rollout(&q, &done, 5, &mut rng).is_err());
        assert!(g.propose(&q, &PartialPath::root(), 0, &mut rng).is_err());
    }

    #[test]
    fn rollout_one_step_from_answer() {
        let q = problem(2, 3, 0.5, 4);
        let g = SyntheticGenerator::default();
        let mut rng = stream(5, &[]);
        let first = g.propose(&q, &PartialPath::root(), 1, &mut rng).unwrap().remove(0);
        let prefix = PartialPath::root().extend(first, 10).unwrap();
        let done = g.rollout(&q, &prefix, 10, &mut rng).unwrap();
        assert!(done.is_terminal());
        assert_eq!(done.len(), 2);
        assert_eq!(done.prefix(1), prefix);
    }

    #[test]
    fn truncation_counts_as_incorrect() {
        let q = problem(6, 2, 1.0, 0);
        let g = SyntheticGenerator::default();
        let cut = g.rollout(&q, &PartialPath::root(), 3, &mut stream(0, &[])).unwrap();
        assert!(cut.is_truncated());
        assert_eq!(cut.len(), 3);
        assert!(!q.is_correct(&cut));
        assert_eq!(true_value(&q, &cut, g.policy()).unwrap(), 0.0);
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(SyntheticGenerator::new(GenerationPolicy { temperature: 0.0, dedup_priority: true }).is_err());
    }
}
