//! Shared vocabulary: steps, partial paths, candidate sets, scores and the
//! beam configuration.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::mix64;
use crate::synthworld::World;

/// Identifies one child among the children of a node.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepToken(pub u32);

impl fmt::Display for StepToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Final answers are opaque and compared by equality only.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerToken(pub u64);

impl fmt::Display for AnswerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One reasoning step as the generator emits it. `answer` is set exactly
/// when `is_answer_step` is.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub token: StepToken,
    pub features: Arc<[f64]>,
    pub is_answer_step: bool,
    pub answer: Option<AnswerToken>,
}

impl Step {
    pub fn intermediate(token: StepToken, features: impl Into<Arc<[f64]>>) -> Self {
        Step { token, features: features.into(), is_answer_step: false, answer: None }
    }

    pub fn answer(token: StepToken, features: impl Into<Arc<[f64]>>, answer: AnswerToken) -> Self {
        Step { token, features: features.into(), is_answer_step: true, answer: Some(answer) }
    }
}

const ROOT_KEY: u64 = 0x005E_ED0F_7EE5;

/// Structural key of the node reached by following `token` from `parent`.
#[inline]
pub fn child_key(parent: u64, token: StepToken) -> u64 {
    mix64(parent ^ mix64(u64::from(token.0).wrapping_add(0x2545_F491_4F6C_DD1D)))
}

/// A prefix of steps from the root. Values are never mutated; [`extend`]
/// returns a new path.
///
/// [`extend`]: PartialPath::extend
#[derive(Clone, Debug)]
pub struct PartialPath {
    steps: Vec<Step>,
    terminal: bool,
    truncated: bool,
    answer: Option<AnswerToken>,
    key: u64,
}

impl PartialEq for PartialPath {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
            && self.terminal == other.terminal
            && self.truncated == other.truncated
            && self.answer == other.answer
            && self.steps == other.steps
    }
}

impl Default for PartialPath {
    fn default() -> Self {
        Self::root()
    }
}

impl PartialPath {
    pub fn root() -> Self {
        PartialPath { steps: Vec::new(), terminal: false, truncated: false, answer: None, key: ROOT_KEY }
    }

    pub fn from_steps(steps: impl IntoIterator<Item = Step>, t_max: usize) -> Result<Self> {
        steps.into_iter().try_fold(Self::root(), |p, s| p.extend(s, t_max))
    }

    /// Appends `step`. Fails on a terminal path or when the result would be
    /// longer than `t_max`.
    pub fn extend(&self, step: Step, t_max: usize) -> Result<Self> {
        if self.terminal {
            return Err(Error::contract("cannot extend a terminal path"));
        }
        if self.steps.len() + 1 > t_max {
            return Err(Error::contract(format!(
                "extending a length-{} path exceeds T_max = {t_max}",
                self.steps.len()
            )));
        }
        if step.is_answer_step != step.answer.is_some() {
            return Err(Error::contract("answer steps must carry an answer, others must not"));
        }
        let mut steps = Vec::with_capacity(self.steps.len() + 1);
        steps.extend_from_slice(&self.steps);
        let key = child_key(self.key, step.token);
        let terminal = step.is_answer_step;
        let answer = step.answer;
        steps.push(step);
        Ok(PartialPath { steps, terminal, truncated: false, answer, key })
    }

    /// Marks a non-terminal path as cut off at `T_max`.
    pub fn into_truncated(mut self) -> Self {
        if !self.terminal {
            self.truncated = true;
        }
        self
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn is_finished(&self) -> bool {
        self.terminal || self.truncated
    }

    pub fn answer(&self) -> Option<AnswerToken> {
        self.answer
    }

    /// Structural hash of the token sequence; equal token sequences share a key.
    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn tokens(&self) -> impl Iterator<Item = StepToken> + '_ {
        self.steps.iter().map(|s| s.token)
    }

    /// Key of every node on the path, root first.
    pub fn node_keys(&self) -> Vec<u64> {
        let mut keys = Vec::with_capacity(self.steps.len() + 1);
        let mut k = ROOT_KEY;
        keys.push(k);
        for s in &self.steps {
            k = child_key(k, s.token);
            keys.push(k);
        }
        keys
    }

    pub fn prefix(&self, len: usize) -> PartialPath {
        let steps = self.steps[..len].to_vec();
        let key = steps.iter().fold(ROOT_KEY, |k, s| child_key(k, s.token));
        let terminal = steps.last().is_some_and(|s| s.is_answer_step);
        let answer = if terminal { steps.last().and_then(|s| s.answer) } else { None };
        PartialPath { steps, terminal, truncated: false, answer, key }
    }
}

/// A scored quantity in [0, 1].
#[derive(Copy, Clone, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(f64);

impl Score {
    pub const ZERO: Score = Score(0.0);
    pub const ONE: Score = Score(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Score(value))
        } else {
            Err(Error::contract(format!("score {value} outside [0, 1]")))
        }
    }

    /// Clamps into [0, 1]; NaN maps to 0.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Score(0.0)
        } else {
            Score(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// The candidates generated at one stage, optionally scored.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub stage: usize,
    pub candidates: Vec<PartialPath>,
    pub scores: Option<Vec<Score>>,
}

impl CandidateSet {
    pub fn new(stage: usize, candidates: Vec<PartialPath>) -> Self {
        CandidateSet { stage, candidates, scores: None }
    }

    pub fn with_scores(stage: usize, candidates: Vec<PartialPath>, scores: Vec<Score>) -> Result<Self> {
        if scores.len() != candidates.len() {
            return Err(Error::contract(format!(
                "{} scores for {} candidates",
                scores.len(),
                candidates.len()
            )));
        }
        Ok(CandidateSet { stage, candidates, scores: Some(scores) })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub candidates: usize,
    pub t_max: usize,
    /// Hand the K/b budget of frozen terminal beams to the live ones.
    #[serde(default)]
    pub redistribute_frozen: bool,
}

impl BeamConfig {
    pub fn new(beam_size: usize, candidates: usize, t_max: usize) -> Result<Self> {
        let cfg = BeamConfig { beam_size, candidates, t_max, redistribute_frozen: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let BeamConfig { beam_size: b, candidates: k, t_max, .. } = *self;
        if b < 1 || k < b || k % b != 0 || t_max < 1 {
            return Err(Error::InvalidParams(format!(
                "beam config needs b >= 1, K >= b, K mod b = 0, T_max >= 1 (got b={b}, K={k}, T_max={t_max})"
            )));
        }
        Ok(())
    }

    pub fn expansion_per_beam(&self) -> usize {
        self.candidates / self.beam_size
    }
}

/// A reasoning instance backed by one synthetic tree.
#[derive(Clone)]
pub struct Problem {
    pub id: u64,
    pub difficulty: u8,
    pub split: Split,
    pub correct_answer: AnswerToken,
    pub world: Arc<World>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("id", &self.id)
            .field("difficulty", &self.difficulty)
            .field("split", &self.split)
            .field("correct_answer", &self.correct_answer)
            .finish()
    }
}

impl Problem {
    /// A finished path is correct iff it is terminal and its answer matches.
    pub fn is_correct(&self, path: &PartialPath) -> bool {
        path.is_terminal() && path.answer() == Some(self.correct_answer)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMethod {
    BeamSearch,
    RepeatedSampling,
}

/// Number of complete solution paths a method returns: `b` for beam search,
/// `K` attempts for repeated sampling.
pub fn sample_size(method: SampleMethod, beam_size: usize, candidates: usize) -> usize {
    match method {
        SampleMethod::BeamSearch => beam_size,
        SampleMethod::RepeatedSampling => candidates,
    }
}
