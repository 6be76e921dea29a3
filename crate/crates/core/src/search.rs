//! Step-level beam search, repeated sampling, and the selection policies.
//!
//! Stage 1 proposes `K` first steps from the root and keeps `b`. Every later
//! stage expands each live beam with `K/b` proposals, scores them, and keeps
//! `b` paths in total. Beams that reached an answer are frozen: they keep
//! their slot, are carried into the candidate set unexpanded, and are not
//! re-selected. The loop stops when every beam is finished or the stage
//! count reaches `T_max`.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BeamConfig, CandidateSet, PartialPath, Problem, Score, StepToken};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::rng::{stream, tag, Stream};
use crate::verifiers::Verifier;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionKind {
    TopB,
    Softmax { temperature: f64 },
    Blended { lambda: f64 },
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    #[serde(flatten)]
    pub kind: SelectionKind,
    #[serde(default = "yes")]
    pub dedup_priority: bool,
}

fn yes() -> bool {
    true
}

impl SelectionPolicy {
    pub fn top_b() -> Self {
        SelectionPolicy { kind: SelectionKind::TopB, dedup_priority: true }
    }

    pub fn softmax(temperature: f64) -> Self {
        SelectionPolicy { kind: SelectionKind::Softmax { temperature }, dedup_priority: true }
    }

    pub fn blended(lambda: f64) -> Self {
        SelectionPolicy { kind: SelectionKind::Blended { lambda }, dedup_priority: true }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SelectionKind::TopB => Ok(()),
            SelectionKind::Softmax { temperature } if temperature > 0.0 && temperature.is_finite() => Ok(()),
            SelectionKind::Blended { lambda } if (0.0..=1.0).contains(&lambda) => Ok(()),
            k => Err(Error::InvalidParams(format!("bad selection policy {k:?}"))),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            SelectionKind::TopB => "top_b".into(),
            SelectionKind::Softmax { temperature } => format!("softmax_t{temperature}"),
            SelectionKind::Blended { lambda } => format!("blended_l{lambda}"),
        }
    }
}

/// Candidate order for deterministic selection: score descending, then
/// generation index ascending.
fn ranked(scores: &[Score]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].value().total_cmp(&scores[a].value()).then(a.cmp(&b)));
    idx
}

/// Picks up to `b` distinct indices. With `dedup_priority`, a candidate whose
/// token sequence was already picked waits until every distinct path had
/// its turn.
pub fn select(candidates: &CandidateSet, policy: &SelectionPolicy, b: usize, rng: &mut Stream) -> Result<Vec<usize>> {
    let scores = candidates
        .scores
        .as_deref()
        .ok_or_else(|| Error::contract("selection needs scored candidates"))?;
    if b == 0 {
        return Err(Error::contract("selection needs b >= 1"));
    }
    let n = candidates.len();
    if n <= b {
        return Ok((0..n).collect());
    }
    let keys: Vec<u64> = candidates.candidates.iter().map(|c| c.key()).collect();
    match policy.kind {
        SelectionKind::TopB | SelectionKind::Blended { .. } => Ok(pick_in_order(&ranked(scores), &keys, b, policy.dedup_priority)),
        SelectionKind::Softmax { temperature } => Ok(softmax_draws(scores, &keys, b, temperature, policy.dedup_priority, rng)),
    }
}

fn pick_in_order(order: &[usize], keys: &[u64], b: usize, dedup: bool) -> Vec<usize> {
    if !dedup {
        return order.iter().take(b).cloned().collect();
    }
    let mut seen = HashSet::new();
    let mut picked = Vec::with_capacity(b);
    let mut waiting = Vec::new();
    for &i in order {
        if picked.len() == b {
            break;
        }
        if seen.insert(keys[i]) {
            picked.push(i);
        } else {
            waiting.push(i);
        }
    }
    picked.extend(waiting.into_iter().take(b - picked.len()));
    picked
}

/// `b` draws without replacement from softmax(score / temperature),
/// renormalized after every draw.
fn softmax_draws(scores: &[Score], keys: &[u64], b: usize, temperature: f64, dedup: bool, rng: &mut Stream) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut taken_keys = HashSet::new();
    let mut picked = Vec::with_capacity(b);
    while picked.len() < b && !remaining.is_empty() {
        let fresh: Vec<usize> = if dedup {
            remaining.iter().cloned().filter(|&i| !taken_keys.contains(&keys[i])).collect()
        } else {
            Vec::new()
        };
        let pool = if fresh.is_empty() { &remaining } else { &fresh };
        let max = pool.iter().map(|&i| scores[i].value()).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = pool.iter().map(|&i| ((scores[i].value() - max) / temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut choice = pool[pool.len() - 1];
        for (&i, &w) in pool.iter().zip(&weights) {
            if u < w {
                choice = i;
                break;
            }
            u -= w;
        }
        picked.push(choice);
        taken_keys.insert(keys[choice]);
        remaining.retain(|&i| i != choice);
    }
    picked
}

/// `λ·r + (1-λ)·v`.
pub fn blended_score(v: Score, r: Score, lambda: f64) -> Result<Score> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(Score::clamped(lambda * r.value() + (1.0 - lambda) * v.value()))
}

/// Scores `prefix` by blending the verifier's score with the verifier's
/// score of one rollout completion. A truncated rollout earns reward 0; a
/// prefix that is already complete is its own rollout.
pub fn score_with_rollout(
    problem: &Problem,
    prefix: &PartialPath,
    verifier: &dyn Verifier,
    generator: &dyn Generator,
    lambda: f64,
    t_max: usize,
    rng: &mut Stream,
) -> Result<Score> {
    let v = verifier.score(problem, prefix)?;
    let r = if prefix.is_terminal() {
        v
    } else if prefix.is_truncated() {
        Score::ZERO
    } else {
        let done = generator.rollout(problem, prefix, t_max, rng)?;
        if done.is_truncated() {
            Score::ZERO
        } else {
            verifier.score(problem, &done)?
        }
    };
    blended_score(v, r, lambda)
}

/// One selection stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub candidates: Vec<PartialPath>,
    pub scores: Vec<Score>,
    /// Indices kept for the next stage, frozen beams included.
    pub selected: Vec<usize>,
    /// Indices of terminal beams carried over unexpanded.
    pub frozen: Vec<usize>,
    /// Per-candidate validity, filled in by diagnostics.
    pub valid: Option<Vec<bool>>,
}

impl StageRecord {
    pub fn new_candidates(&self) -> usize {
        self.candidates.len() - self.frozen.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchTrace {
    pub problem_id: u64,
    pub policy: SelectionPolicy,
    pub config: BeamConfig,
    pub stages: Vec<StageRecord>,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub final_paths: Vec<PartialPath>,
    pub trace: SearchTrace,
    pub solved: bool,
}

/// Wire form of one trace line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLine {
    pub problem_id: u64,
    #[serde(default)]
    pub method: String,
    #[serde(default)]
    pub repeat: usize,
    #[serde(default)]
    pub point: usize,
    #[serde(default)]
    pub b: usize,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub t_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<SelectionPolicy>,
    pub stage: usize,
    pub candidates: Vec<Vec<StepToken>>,
    pub scores: Vec<f64>,
    pub selected: Vec<usize>,
    #[serde(default)]
    pub frozen: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<Vec<bool>>,
    #[serde(default)]
    pub solved: bool,
}

impl SearchTrace {
    /// Writes one JSON line per stage, tagged with the run coordinates.
    pub fn write_jsonl(&self, mut out: impl Write, method: &str, repeat: usize, point: usize, solved: bool) -> Result<()> {
        for s in &self.stages {
            let line = StageLine {
                problem_id: self.problem_id,
                method: method.to_string(),
                repeat,
                point,
                b: self.config.beam_size,
                k: self.config.candidates,
                t_max: self.config.t_max,
                policy: Some(self.policy),
                stage: s.stage,
                candidates: s.candidates.iter().map(|c| c.tokens().collect()).collect(),
                scores: s.scores.iter().map(|v| v.value()).collect(),
                selected: s.selected.clone(),
                frozen: s.frozen.clone(),
                valid: s.valid.clone(),
                solved,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct Beam {
    path: PartialPath,
    score: Score,
}

fn fault(problem: &Problem, trace: &SearchTrace, stage: usize, e: Error) -> Error {
    Error::SearchFault { problem_id: problem.id, stage, message: e.to_string(), trace: Box::new(trace.clone()) }
}

fn score_all(
    problem: &Problem,
    paths: &[PartialPath],
    verifier: &dyn Verifier,
    generator: &dyn Generator,
    policy: &SelectionPolicy,
    t_max: usize,
    rng: &mut Stream,
) -> Result<Vec<Score>> {
    paths
        .iter()
        .map(|p| match policy.kind {
            SelectionKind::Blended { lambda } => score_with_rollout(problem, p, verifier, generator, lambda, t_max, rng),
            _ => verifier.score(problem, p),
        })
        .collect()
}

/// Verifier-guided step-level beam search.
pub fn beam_search(
    problem: &Problem,
    generator: &dyn Generator,
    verifier: &dyn Verifier,
    policy: &SelectionPolicy,
    config: &BeamConfig,
    rng: &mut Stream,
) -> Result<SearchResult> {
    config.validate()?;
    policy.validate()?;
    let (b, k, t_max) = (config.beam_size, config.candidates, config.t_max);
    let per_beam = config.expansion_per_beam();
    let mut trace = SearchTrace { problem_id: problem.id, policy: *policy, config: *config, stages: Vec::new() };

    let root = PartialPath::root();
    let first: Result<(Vec<PartialPath>, Vec<Score>)> = (|| {
        let steps = generator.propose(problem, &root, k, rng)?;
        let paths = steps.into_iter().map(|s| root.extend(s, t_max)).collect::<Result<Vec<_>>>()?;
        let scores = score_all(problem, &paths, verifier, generator, policy, t_max, rng)?;
        Ok((paths, scores))
    })();
    let (paths, scores) = first.map_err(|e| fault(problem, &trace, 1, e))?;
    let set = CandidateSet::with_scores(1, paths, scores)?;
    let selected = select(&set, policy, b, rng)?;
    let scores = set.scores.clone().unwrap_or_default();
    let mut beams: Vec<Beam> =
        selected.iter().map(|&i| Beam { path: set.candidates[i].clone(), score: scores[i] }).collect();
    trace.stages.push(StageRecord {
        stage: 1,
        candidates: set.candidates,
        scores,
        selected,
        frozen: Vec::new(),
        valid: None,
    });

    let mut t = 1;
    while beams.iter().any(|bm| !bm.path.is_finished()) && t < t_max {
        t += 1;
        let (frozen, live): (Vec<Beam>, Vec<Beam>) = beams.into_iter().partition(|bm| bm.path.is_finished());
        let budget = if config.redistribute_frozen {
            let spare = k.saturating_sub(frozen.len());
            let base = spare / live.len();
            let extra = spare % live.len();
            (0..live.len()).map(|i| base + usize::from(i < extra)).collect::<Vec<_>>()
        } else {
            vec![per_beam; live.len()]
        };

        let expanded: Result<(Vec<PartialPath>, Vec<Score>)> = (|| {
            let mut paths = Vec::with_capacity(k);
            for (beam, &n) in live.iter().zip(&budget) {
                if n == 0 {
                    continue;
                }
                for step in generator.propose(problem, &beam.path, n, rng)? {
                    paths.push(beam.path.extend(step, t_max)?);
                }
            }
            let scores = score_all(problem, &paths, verifier, generator, policy, t_max, rng)?;
            Ok((paths, scores))
        })();
        let (new_paths, new_scores) = expanded.map_err(|e| fault(problem, &trace, t, e))?;

        let slots = b - frozen.len();
        let fresh = CandidateSet::with_scores(t, new_paths, new_scores)?;
        let picked = select(&fresh, policy, slots, rng)?;

        let n_frozen = frozen.len();
        let fresh_scores = fresh.scores.unwrap_or_default();
        let mut candidates: Vec<PartialPath> = frozen.iter().map(|bm| bm.path.clone()).collect();
        let mut scores: Vec<Score> = frozen.iter().map(|bm| bm.score).collect();
        candidates.extend(fresh.candidates);
        scores.extend(fresh_scores);

        let mut selected: Vec<usize> = (0..n_frozen).collect();
        selected.extend(picked.iter().map(|&i| i + n_frozen));
        beams = selected.iter().map(|&i| Beam { path: candidates[i].clone(), score: scores[i] }).collect();
        trace.stages.push(StageRecord {
            stage: t,
            candidates,
            scores,
            selected,
            frozen: (0..n_frozen).collect(),
            valid: None,
        });
    }

    let final_paths: Vec<PartialPath> = beams
        .into_iter()
        .map(|bm| if bm.path.is_terminal() { bm.path } else { bm.path.into_truncated() })
        .collect();
    let solved = final_paths.iter().any(|p| problem.is_correct(p));
    Ok(SearchResult { final_paths, trace, solved })
}

#[derive(Clone, Debug)]
pub struct SamplingResult {
    pub paths: Vec<PartialPath>,
    pub solved: bool,
    /// Index of the first correct sample.
    pub first_correct: Option<usize>,
}

impl SamplingResult {
    /// Whether the first `k` samples contain a correct one.
    pub fn solved_within(&self, k: usize) -> bool {
        self.first_correct.is_some_and(|i| i < k)
    }
}

/// `k` independent rollouts from the root. Sample `i` always uses stream
/// `(seed, i)`, so a smaller `k` reproduces a prefix of a larger run.
pub fn repeated_sampling(
    problem: &Problem,
    generator: &dyn Generator,
    k: usize,
    t_max: usize,
    seed: u64,
) -> Result<SamplingResult> {
    if k == 0 {
        return Err(Error::contract("repeated sampling needs K >= 1"));
    }
    let paths = (0..k)
        .map(|i| generator.rollout(problem, &PartialPath::root(), t_max, &mut stream(seed, &[tag("sample"), i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let first_correct = paths.iter().position(|p| problem.is_correct(p));
    Ok(SamplingResult { solved: first_correct.is_some(), paths, first_correct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Split, Step};
    use crate::generators::{GenerationPolicy, SyntheticGenerator};
    use crate::synthworld::{sample_problem, WorldParams};
    use crate::verifiers::OracleOvm;

    fn set(scores: &[f64]) -> CandidateSet {
        let cands = (0..scores.len())
            .map(|i| PartialPath::root().extend(Step::intermediate(StepToken(i as u32), vec![0.0]), 5).unwrap())
            .collect();
        CandidateSet::with_scores(1, cands, scores.iter().map(|&s| Score::clamped(s)).collect()).unwrap()
    }

    #[test]
    fn top_b_strict_order() {
        let mut rng = stream(0, &[]);
        let mut got = select(&set(&[0.9, 0.5, 0.1]), &SelectionPolicy::top_b(), 2, &mut rng).unwrap();
        got.sort();
        assert_eq!(got, vec![0, 1]);
    }

    #[test]
    fn top_b_ties_by_generation_index() {
        let mut rng = stream(0, &[]);
        let got = select(&set(&[0.5, 0.7, 0.5, 0.5]), &SelectionPolicy::top_b(), 3, &mut rng).unwrap();
        assert_eq!(got, vec![1, 0, 2]);
    }

    #[test]
    fn small_sets_are_kept_whole() {
        let mut rng = stream(0, &[]);
        for policy in [SelectionPolicy::top_b(), SelectionPolicy::softmax(1.0)] {
            assert_eq!(select(&set(&[0.1, 0.2]), &policy, 4, &mut rng).unwrap(), vec![0, 1]);
        }
    }

    #[test]
    fn duplicates_wait_for_distinct_paths() {
        let step = |t| Step::intermediate(StepToken(t), vec![0.0]);
        let cands: Vec<PartialPath> =
            [0, 0, 1].iter().map(|&t| PartialPath::root().extend(step(t), 5).unwrap()).collect();
        let s = CandidateSet::with_scores(1, cands, vec![Score::clamped(0.9), Score::clamped(0.9), Score::clamped(0.2)]).unwrap();
        let mut rng = stream(0, &[]);
        assert_eq!(select(&s, &SelectionPolicy::top_b(), 2, &mut rng).unwrap(), vec![0, 2]);
        let no_dedup = SelectionPolicy { dedup_priority: false, ..SelectionPolicy::top_b() };
        assert_eq!(select(&s, &no_dedup, 2, &mut rng).unwrap(), vec![0, 1]);
        let mut soft = select(&s, &SelectionPolicy::softmax(1e-6), 2, &mut rng).unwrap();
        soft.sort();
        assert_eq!(soft[1], 2);
    }

    #[test]
    fn cold_softmax_is_top_b() {
        let mut rng = stream(3, &[]);
        let s = set(&[0.31, 0.95, 0.12, 0.77, 0.5]);
        let mut a = select(&s, &SelectionPolicy::top_b(), 3, &mut rng).unwrap();
        let mut b = select(&s, &SelectionPolicy::softmax(1e-6), 3, &mut rng).unwrap();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn unscored_sets_are_rejected() {
        let mut rng = stream(0, &[]);
        let s = CandidateSet::new(1, vec![PartialPath::root()]);
        assert!(select(&s, &SelectionPolicy::top_b(), 1, &mut rng).is_err());
    }

    #[test]
    fn blend_arithmetic() {
        let v = Score::clamped(0.2);
        let r = Score::clamped(0.6);
        assert_eq!(blended_score(v, r, 0.0).unwrap(), v);
        assert_eq!(blended_score(v, r, 1.0).unwrap(), r);
        assert!((blended_score(v, r, 0.75).unwrap().value() - 0.5).abs() < 1e-12);
        assert!(blended_score(v, r, 1.5).is_err());
    }

    fn world() -> WorldParams {
        WorldParams { depth: 4, branching: 4, p_valid_child: 0.3, seed: 5, ..Default::default() }
    }

    #[test]
    fn rollout_blend_with_zero_lambda_is_the_verifier() {
        let q = sample_problem(&world(), 2, Split::Train, 1).unwrap();
        let g = SyntheticGenerator::default();
        let v = OracleOvm::default();
        let step = g.propose(&q, &PartialPath::root(), 1, &mut stream(0, &[])).unwrap().remove(0);
        let p = PartialPath::root().extend(step, 10).unwrap();
        let s = score_with_rollout(&q, &p, &v, &g, 0.0, 10, &mut stream(1, &[])).unwrap();
        assert_eq!(s, v.score(&q, &p).unwrap());
    }

    #[test]
    fn rollout_blend_saturates_on_sure_prefixes() {
        let params = WorldParams { p_valid_child: 1.0, ..world() };
        let q = sample_problem(&params, 2, Split::Train, 1).unwrap();
        let g = SyntheticGenerator::default();
        let v = OracleOvm::default();
        let step = g.propose(&q, &PartialPath::root(), 1, &mut stream(0, &[])).unwrap().remove(0);
        let p = PartialPath::root().extend(step, 10).unwrap();
        for lambda in [0.0, 0.5, 0.75, 1.0] {
            let s = score_with_rollout(&q, &p, &v, &g, lambda, 10, &mut stream(2, &[])).unwrap();
            assert!((s.value() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_degenerate_case() {
        let q = sample_problem(&world(), 2, Split::Train, 3).unwrap();
        let g = SyntheticGenerator::default();
        let v = OracleOvm::default();
        let cfg = BeamConfig::new(1, 1, 10).unwrap();
        let r = beam_search(&q, &g, &v, &SelectionPolicy::top_b(), &cfg, &mut stream(9, &[])).unwrap();
        assert_eq!(r.final_paths.len(), 1);
        assert_eq!(r.trace.stages.len(), 4);
        assert!(r.trace.stages.iter().all(|s| s.candidates.len() == 1 && s.selected == vec![0]));
        // Same draws as a plain rollout on the same stream.
        let mut rng = stream(9, &[]);
        let mut path = PartialPath::root();
        while !path.is_terminal() {
            let step = g.propose(&q, &path, 1, &mut rng).unwrap().remove(0);
            path = path.extend(step, 10).unwrap();
        }
        assert_eq!(r.final_paths[0], path);
    }

    #[test]
    fn search_is_deterministic_and_budgeted() {
        let q = sample_problem(&world(), 2, Split::Train, 4).unwrap();
        let g = SyntheticGenerator::new(GenerationPolicy::default()).unwrap();
        let v = OracleOvm::default();
        let cfg = BeamConfig::new(4, 16, 10).unwrap();
        let a = beam_search(&q, &g, &v, &SelectionPolicy::softmax(1.0), &cfg, &mut stream(1, &[])).unwrap();
        let b = beam_search(&q, &g, &v, &SelectionPolicy::softmax(1.0), &cfg, &mut stream(1, &[])).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.final_paths, b.final_paths);
        for (i, s) in a.trace.stages.iter().enumerate() {
            assert_eq!(s.stage, i + 1);
            assert!(s.candidates.len() <= 16);
            assert!(s.selected.len() <= 4);
            let distinct: HashSet<_> = s.selected.iter().collect();
            assert_eq!(distinct.len(), s.selected.len());
        }
        assert_eq!(a.final_paths.len(), 4);
        assert_eq!(a.solved, a.final_paths.iter().any(|p| q.is_correct(p)));
    }

    #[test]
    fn trace_lines_roundtrip() {
        let q = sample_problem(&world(), 2, Split::Train, 4).unwrap();
        let g = SyntheticGenerator::default();
        let r = beam_search(&q, &g, &OracleOvm::default(), &SelectionPolicy::top_b(), &BeamConfig::new(2, 8, 10).unwrap(), &mut stream(1, &[]))
            .unwrap();
        let mut buf = Vec::new();
        r.trace.write_jsonl(&mut buf, "oracle", 0, 2, r.solved).unwrap();
        let lines: Vec<StageLine> =
            String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), r.trace.stages.len());
        assert_eq!(lines[0].candidates.len(), 8);
        assert_eq!(lines[1].selected, r.trace.stages[1].selected);
    }

    #[test]
    fn sampling_is_nested() {
        let q = sample_problem(&world(), 2, Split::Train, 6).unwrap();
        let g = SyntheticGenerator::default();
        let big = repeated_sampling(&q, &g, 32, 10, 77).unwrap();
        for k in [1, 2, 4, 8, 16] {
            let small = repeated_sampling(&q, &g, k, 10, 77).unwrap();
            assert_eq!(small.paths[..], big.paths[..k]);
            assert_eq!(small.solved, big.solved_within(k));
        }
        assert!(repeated_sampling(&q, &g, 0, 10, 1).is_err());
        let one = repeated_sampling(&q, &g, 1, 10, 5).unwrap();
        let direct = g.rollout(&q, &PartialPath::root(), 10, &mut stream(5, &[tag("sample"), 0])).unwrap();
        assert_eq!(one.paths[0], direct);
    }
}
