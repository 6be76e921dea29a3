//! Procedural reasoning problems with exact ground truth.
//!
//! A problem is a complete `branching`-ary tree of height `depth`. Steps at
//! depth `depth` are answer steps; a leaf carries the correct answer iff it
//! is valid. Nothing is stored: every node's truth, generation weights and
//! features are recomputed from a hash of `(problem seed, node key)`, so the
//! tree is materialized lazily and two processes agree bit for bit.
//!
//! Validity is assigned top-down. Children of an invalid node are invalid.
//! Each child of a valid node is valid with probability `p_valid_child`,
//! and when none is, one child chosen by hash is forced valid. Every valid
//! node therefore has a valid leaf below it and the root is always valid.
//!
//! Step features are `±separation/2 · u + N(0, I) + offset`, with the sign
//! given by the child's validity. The validity direction `u` is the first
//! basis vector rotated towards the second by a per-problem angle drawn
//! from `N(0, problem_drift²)`, plus `ood_shift` radians on the test split;
//! the test split is also translated by `ood_shift` along the last axis.
//! Validity, answers and generation weights never depend on the split.

use std::sync::Arc;

use dashmap::DashMap;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{child_key, AnswerToken, PartialPath, Problem, Split, Step, StepToken};
use crate::error::{Error, Result};
use crate::generators::GenerationPolicy;
use crate::rng::{derive, mix64, stream, tag, unit_f64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldParams {
    pub depth: usize,
    pub branching: usize,
    pub p_valid_child: f64,
    /// When set, overrides `p_valid_child` with the value whose expected
    /// fraction of valid leaves equals this target.
    #[serde(default)]
    pub sparsity_target: Option<f64>,
    pub feature_dim: usize,
    pub feature_separation: f64,
    #[serde(default)]
    pub ood_shift: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the per-child generation logits.
    #[serde(default = "default_spread")]
    pub policy_spread: f64,
    /// Logit bonus the generator gives to valid children.
    #[serde(default)]
    pub policy_skill: f64,
    /// Standard deviation (radians) of the per-problem rotation of the
    /// validity direction in feature space.
    #[serde(default)]
    pub problem_drift: f64,
}

fn default_spread() -> f64 {
    1.0
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            depth: 4,
            branching: 4,
            p_valid_child: 0.3,
            sparsity_target: None,
            feature_dim: 4,
            feature_separation: 2.0,
            ood_shift: 0.0,
            seed: 0,
            policy_spread: 1.0,
            policy_skill: 0.0,
            problem_drift: 0.0,
        }
    }
}

/// Expected fraction of valid leaves for validity rate `p`.
pub fn expected_sparsity(p: f64, branching: usize, depth: usize) -> f64 {
    let b = branching as f64;
    let per_level = (b * p + (1.0 - p).powi(branching as i32)) / b;
    per_level.powi(depth as i32)
}

const MAX_SOLVE_ATTEMPTS: u32 = 200;

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.depth < 1 {
            return bad("depth must be >= 1");
        }
        if self.branching < 2 {
            return bad("branching must be >= 2");
        }
        if !(self.p_valid_child > 0.0 && self.p_valid_child <= 1.0) {
            return bad("p_valid_child must lie in (0, 1]");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be >= 2");
        }
        if self.feature_separation.is_nan() || self.feature_separation < 0.0 {
            return bad("feature_separation must be >= 0");
        }
        if self.ood_shift.is_nan() || self.ood_shift < 0.0 {
            return bad("ood_shift must be >= 0");
        }
        let negative = |x: f64| x.is_nan() || x < 0.0;
        if negative(self.policy_spread) || negative(self.problem_drift) || !self.policy_skill.is_finite() {
            return bad("policy_spread and problem_drift must be >= 0, policy_skill finite");
        }
        if let Some(t) = self.sparsity_target {
            if !(t > 0.0 && t <= 1.0) {
                return bad("sparsity_target must lie in (0, 1]");
            }
        }
        Ok(())
    }

    /// Validity rate after applying `sparsity_target`, found by bisection.
    /// Targets below `branching^-depth` cannot be met and are rejected after
    /// a bounded search.
    pub fn resolved_p_valid(&self) -> Result<f64> {
        self.validate()?;
        let Some(target) = self.sparsity_target else {
            return Ok(self.p_valid_child);
        };
        let f = |p: f64| expected_sparsity(p, self.branching, self.depth);
        if target < f(0.0) * (1.0 - 1e-12) {
            return Err(Error::Degenerate {
                attempts: 0,
                reason: format!(
                    "sparsity target {target} is below the floor {} of a {}-ary depth-{} tree",
                    f(0.0),
                    self.branching,
                    self.depth
                ),
            });
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..MAX_SOLVE_ATTEMPTS {
            let mid = 0.5 * (lo + hi);
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(hi.max(f64::MIN_POSITIVE))
    }
}

/// Ground truth of one node.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTruth {
    pub valid: bool,
    pub step_correct: bool,
}

/// Position of a node, as resolved by walking a path from the root.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeRef {
    pub key: u64,
    pub depth: usize,
    pub valid: bool,
}

/// One problem's tree. Immutable apart from the memo of exact values, which
/// is idempotent: concurrent first-touches compute the same number.
pub struct World {
    params: WorldParams,
    p_valid: f64,
    seed: u64,
    split: Split,
    correct: AnswerToken,
    direction: Vec<f64>,
    offset: Vec<f64>,
    values: DashMap<(u64, u64), f64>,
}

const ROOT: NodeRef = NodeRef { key: 0, depth: 0, valid: true };

impl World {
    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn depth(&self) -> usize {
        self.params.depth
    }

    pub fn branching(&self) -> usize {
        self.params.branching
    }

    pub fn feature_dim(&self) -> usize {
        self.params.feature_dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// The validity direction this problem's features use.
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn root(&self) -> NodeRef {
        NodeRef { key: PartialPath::root().key(), ..ROOT }
    }

    /// Validity of each child of `node`.
    pub fn child_validity(&self, node: NodeRef) -> Vec<bool> {
        let b = self.params.branching;
        if !node.valid {
            return vec![false; b];
        }
        let threshold = self.p_valid;
        let mut mask: Vec<bool> = (0..b)
            .map(|i| unit_f64(derive(self.seed, &[tag("valid"), node.key, i as u64])) < threshold)
            .collect();
        if !mask.iter().any(|&v| v) {
            let forced = (derive(self.seed, &[tag("forced"), node.key]) % b as u64) as usize;
            mask[forced] = true;
        }
        mask
    }

    /// Generation probabilities over the children of `node` at `temperature`.
    pub fn child_policy(&self, node: NodeRef, temperature: f64) -> Vec<f64> {
        let valid = self.child_validity(node);
        let mut rng = stream(self.seed, &[tag("logits"), node.key]);
        let logits: Vec<f64> = valid
            .iter()
            .map(|&v| {
                let z: f64 = rng.sample(StandardNormal);
                self.params.policy_spread * z + if v { self.params.policy_skill } else { 0.0 }
            })
            .collect();
        softmax(&logits, temperature)
    }

    pub fn child(&self, node: NodeRef, token: StepToken) -> Result<NodeRef> {
        if node.depth >= self.params.depth {
            return Err(Error::contract("a leaf has no children"));
        }
        let i = token.0 as usize;
        if i >= self.params.branching {
            return Err(Error::contract(format!("token {token} is not a child (branching {})", self.params.branching)));
        }
        let valid = node.valid && self.child_validity(node)[i];
        Ok(NodeRef { key: child_key(node.key, token), depth: node.depth + 1, valid })
    }

    /// Resolves the node a path ends at, checking it belongs to this tree.
    pub fn locate(&self, path: &PartialPath) -> Result<NodeRef> {
        let mut node = self.root();
        for (i, step) in path.steps().iter().enumerate() {
            node = self.child(node, step.token)?;
            let leaf = node.depth == self.params.depth;
            if step.is_answer_step != leaf {
                return Err(Error::contract(format!("step {i} answer flag disagrees with the tree")));
            }
        }
        Ok(node)
    }

    /// The step that moves from `parent` to its child `token`.
    pub fn make_step(&self, parent: NodeRef, token: StepToken) -> Result<Step> {
        let node = self.child(parent, token)?;
        let features = self.features(node);
        if node.depth == self.params.depth {
            Ok(Step::answer(token, features, self.answer_at(node)))
        } else {
            Ok(Step::intermediate(token, features))
        }
    }

    fn answer_at(&self, leaf: NodeRef) -> AnswerToken {
        if leaf.valid {
            self.correct
        } else {
            let wrong = derive(self.seed, &[tag("answer"), leaf.key]);
            AnswerToken(if wrong == self.correct.0 { wrong ^ 1 } else { wrong })
        }
    }

    fn features(&self, node: NodeRef) -> Arc<[f64]> {
        let d = self.params.feature_dim;
        let mut rng = stream(self.seed, &[tag("features"), node.key]);
        let half = 0.5 * self.params.feature_separation * if node.valid { 1.0 } else { -1.0 };
        (0..d)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                half * self.direction[j] + z + self.offset[j]
            })
            .collect()
    }

    /// Exact success probability of one rollout from `path` under a policy
    /// at `temperature`, by recursion over the valid subtree.
    pub fn value(&self, path: &PartialPath, temperature: f64) -> Result<f64> {
        if path.is_truncated() {
            return Ok(0.0);
        }
        let node = self.locate(path)?;
        Ok(self.node_value(node, temperature))
    }

    fn node_value(&self, node: NodeRef, temperature: f64) -> f64 {
        if !node.valid {
            return 0.0;
        }
        if node.depth == self.params.depth {
            return 1.0;
        }
        let memo_key = (node.key, temperature.to_bits());
        if let Some(v) = self.values.get(&memo_key) {
            return *v;
        }
        let valid = self.child_validity(node);
        let policy = self.child_policy(node, temperature);
        let mut v = 0.0;
        for (i, (&ok, &pi)) in valid.iter().zip(&policy).enumerate() {
            if ok && pi > 0.0 {
                let child = NodeRef { key: child_key(node.key, StepToken(i as u32)), depth: node.depth + 1, valid: true };
                v += pi * self.node_value(child, temperature);
            }
        }
        // Policy mass can sum to one ulp above 1.
        let v = v.min(1.0);
        self.values.insert(memo_key, v);
        v
    }
}

pub(crate) fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}

/// Builds problem `id` of the given tier and split.
///
/// The tree depends only on `(params, id)`; the split only changes the
/// features.
pub fn sample_problem(params: &WorldParams, difficulty: u8, split: Split, id: u64) -> Result<Problem> {
    if !(1..=5).contains(&difficulty) {
        return Err(Error::InvalidParams(format!("difficulty tier {difficulty} outside 1..=5")));
    }
    let p_valid = params.resolved_p_valid()?;
    let seed = derive(params.seed, &[tag("problem"), id]);
    let d = params.feature_dim;

    let mut rng = stream(seed, &[tag("drift")]);
    let drift: f64 = rng.sample::<f64, _>(StandardNormal) * params.problem_drift;
    let angle = drift + if split == Split::Test { params.ood_shift } else { 0.0 };
    let mut direction = vec![0.0; d];
    direction[0] = angle.cos();
    direction[1] = angle.sin();
    let mut offset = vec![0.0; d];
    if split == Split::Test {
        offset[d - 1] += params.ood_shift;
    }

    let correct = AnswerToken(mix64(derive(seed, &[tag("correct")])));
    let world = World {
        params: params.clone(),
        p_valid,
        seed,
        split,
        correct,
        direction,
        offset,
        values: DashMap::new(),
    };
    Ok(Problem { id, difficulty, split, correct_answer: correct, world: Arc::new(world) })
}

pub fn sample_problems(
    params: &WorldParams,
    difficulty: u8,
    split: Split,
    ids: impl IntoIterator<Item = u64>,
) -> Result<Vec<Problem>> {
    ids.into_iter().map(|id| sample_problem(params, difficulty, split, id)).collect()
}

/// True iff some completion of `prefix` ends in the correct answer.
pub fn is_valid_prefix(problem: &Problem, prefix: &PartialPath) -> Result<bool> {
    if prefix.is_truncated() {
        return Ok(false);
    }
    Ok(problem.world.locate(prefix)?.valid)
}

pub fn node_truth(problem: &Problem, prefix: &PartialPath) -> Result<NodeTruth> {
    let valid = is_valid_prefix(problem, prefix)?;
    Ok(NodeTruth { valid, step_correct: valid })
}

/// Exact probability that one rollout under `policy` from `prefix` reaches
/// the correct answer.
pub fn true_value(problem: &Problem, prefix: &PartialPath, policy: &GenerationPolicy) -> Result<f64> {
    if prefix.is_terminal() {
        return Ok(if problem.is_correct(prefix) { 1.0 } else { 0.0 });
    }
    problem.world.value(prefix, policy.temperature)
}

/// Correctness of appending `step` to `prefix`; equals validity of the
/// resulting prefix.
pub fn step_correct(problem: &Problem, prefix: &PartialPath, step: &Step) -> Result<bool> {
    let parent = problem.world.locate(prefix)?;
    Ok(problem.world.child(parent, step.token)?.valid)
}

/// Every full path of the tree with its correctness. Refuses trees with
/// more than `cap` leaves.
pub fn enumerate_solutions(problem: &Problem, cap: u64) -> Result<Vec<(PartialPath, bool)>> {
    let w = &problem.world;
    let leaves = (w.branching() as u128).checked_pow(w.depth() as u32).unwrap_or(u128::MAX);
    if leaves > cap as u128 {
        return Err(Error::TooLarge { leaves, cap });
    }
    let mut out = Vec::with_capacity(leaves as usize);
    let mut stack = vec![(PartialPath::root(), w.root())];
    while let Some((path, node)) = stack.pop() {
        if node.depth == w.depth() {
            let correct = problem.is_correct(&path);
            out.push((path, correct));
            continue;
        }
        for i in (0..w.branching() as u32).rev() {
            let token = StepToken(i);
            let step = w.make_step(node, token)?;
            let child = w.child(node, token)?;
            stack.push((path.extend(step, w.depth())?, child));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(depth: usize, branching: usize, p: f64) -> WorldParams {
        WorldParams { depth, branching, p_valid_child: p, seed: 11, ..Default::default() }
    }

    fn uniform() -> GenerationPolicy {
        GenerationPolicy::default()
    }

    #[test]
    fn saturated_validity() {
        let q = sample_problem(&params(3, 3, 1.0), 1, Split::Train, 0).unwrap();
        let all = enumerate_solutions(&q, 100).unwrap();
        assert_eq!(all.len(), 27);
        assert!(all.iter().all(|(_, ok)| *ok));
        assert!((true_value(&q, &PartialPath::root(), &uniform()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trees_are_deterministic() {
        let p = params(3, 2, 0.5);
        let a = sample_problem(&p, 2, Split::Train, 5).unwrap();
        let b = sample_problem(&p, 2, Split::Train, 5).unwrap();
        let ea = enumerate_solutions(&a, 64).unwrap();
        let eb = enumerate_solutions(&b, 64).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn root_is_valid() {
        for id in 0..50 {
            let q = sample_problem(&params(5, 3, 0.05), 3, Split::Train, id).unwrap();
            assert!(is_valid_prefix(&q, &PartialPath::root()).unwrap());
        }
    }

    #[test]
    fn leaf_count_and_refusal() {
        let q = sample_problem(&params(1, 2, 0.5), 1, Split::Train, 0).unwrap();
        assert_eq!(enumerate_solutions(&q, 10).unwrap().len(), 2);
        let big = sample_problem(&params(10, 4, 0.5), 1, Split::Train, 0).unwrap();
        assert!(matches!(enumerate_solutions(&big, 3000), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn invalid_prefixes_have_zero_value() {
        let q = sample_problem(&params(4, 3, 0.3), 1, Split::Train, 3).unwrap();
        let w = &q.world;
        let root = w.root();
        let mask = w.child_validity(root);
        let bad = mask.iter().position(|v| !v).expect("some invalid child");
        let step = w.make_step(root, StepToken(bad as u32)).unwrap();
        let p = PartialPath::root().extend(step.clone(), 10).unwrap();
        assert!(!is_valid_prefix(&q, &p).unwrap());
        assert!(!step_correct(&q, &PartialPath::root(), &step).unwrap());
        assert_eq!(true_value(&q, &p, &uniform()).unwrap(), 0.0);
        // Correctness never comes back below an invalid node.
        let below = w.child(w.child(root, StepToken(bad as u32)).unwrap(), StepToken(0)).unwrap();
        assert!(w.child_validity(below).iter().all(|v| !v));
    }

    #[test]
    fn correct_terminal_has_value_one() {
        let q = sample_problem(&params(3, 3, 0.4), 1, Split::Train, 9).unwrap();
        let (path, _) = enumerate_solutions(&q, 100).unwrap().into_iter().find(|(_, ok)| *ok).unwrap();
        assert_eq!(true_value(&q, &path, &uniform()).unwrap(), 1.0);
    }

    #[test]
    fn tokens_outside_the_tree_are_rejected() {
        let q = sample_problem(&params(2, 3, 0.4), 1, Split::Train, 0).unwrap();
        let foreign = Step::intermediate(StepToken(7), vec![0.0; 4]);
        let p = PartialPath::root().extend(foreign, 5).unwrap();
        assert!(matches!(is_valid_prefix(&q, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn sparsity_target_is_solved() {
        let p = WorldParams { sparsity_target: Some(1.0 / 16.0), ..params(4, 4, 0.5) };
        let pv = p.resolved_p_valid().unwrap();
        assert!((expected_sparsity(pv, 4, 4) - 1.0 / 16.0).abs() < 1e-9);
        let too_sparse = WorldParams { sparsity_target: Some(1e-4), ..params(4, 4, 0.5) };
        assert!(matches!(too_sparse.resolved_p_valid(), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn bad_params_are_rejected() {
        assert!(params(0, 2, 0.5).validate().is_err());
        assert!(params(3, 1, 0.5).validate().is_err());
        assert!(params(3, 2, 0.0).validate().is_err());
        assert!(WorldParams { feature_separation: -1.0, ..params(3, 2, 0.5) }.validate().is_err());
        assert!(sample_problem(&params(3, 2, 0.5), 6, Split::Train, 0).is_err());
    }

    #[test]
    fn ood_shift_only_moves_features() {
        let base = WorldParams { ood_shift: 0.0, ..params(3, 3, 0.4) };
        let shifted = WorldParams { ood_shift: 1.2, ..base.clone() };
        let a = sample_problem(&base, 4, Split::Test, 2).unwrap();
        let b = sample_problem(&shifted, 4, Split::Test, 2).unwrap();
        let ea = enumerate_solutions(&a, 100).unwrap();
        let eb = enumerate_solutions(&b, 100).unwrap();
        let labels = |e: &[(PartialPath, bool)]| e.iter().map(|(p, ok)| (p.key(), *ok)).collect::<Vec<_>>();
        assert_eq!(labels(&ea), labels(&eb));
        assert_ne!(ea[0].0.steps()[0].features, eb[0].0.steps()[0].features);
        let pol = uniform();
        assert_eq!(
            true_value(&a, &PartialPath::root(), &pol).unwrap(),
            true_value(&b, &PartialPath::root(), &pol).unwrap()
        );
    }
}
