//! Failure analysis over search traces: validity labeling, generation vs
//! selection attribution, first-stage selection scaling, sparsity of failed
//! stages, and selection-stage accuracy of alternative policies.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{CandidateSet, PartialPath, Problem, Score};
use crate::error::{Error, Result};
use crate::generators::remote::path_from_tokens;
use crate::generators::Generator;
use crate::rng::{stream, tag, Stream};
use crate::search::{score_with_rollout, select, SearchTrace, SelectionKind, SelectionPolicy, StageLine, StageRecord};
use crate::synthworld::is_valid_prefix;
use crate::verifiers::Verifier;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMethod {
    Oracle,
    Rollout,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityLabel {
    pub method: LabelMethod,
    pub rollouts_used: usize,
    pub label: bool,
}

/// Rollout counts per difficulty tier: 4 for the two easiest, 16 above.
pub fn default_label_rollouts(difficulty: u8) -> usize {
    if difficulty <= 2 {
        4
    } else {
        16
    }
}

/// Labels `prefix` valid if the oracle says so, or in rollout mode if any of
/// `m` rollouts reaches the correct answer. Rollout labels have no false
/// positives.
pub fn label_valid(
    problem: &Problem,
    prefix: &PartialPath,
    generator: &dyn Generator,
    method: LabelMethod,
    m: usize,
    t_max: usize,
    rng: &mut Stream,
) -> Result<ValidityLabel> {
    match method {
        LabelMethod::Oracle => Ok(ValidityLabel { method, rollouts_used: 0, label: is_valid_prefix(problem, prefix)? }),
        LabelMethod::Rollout => {
            if m == 0 {
                return Err(Error::contract("rollout labeling needs m >= 1"));
            }
            if prefix.is_finished() {
                return Ok(ValidityLabel { method, rollouts_used: 1, label: problem.is_correct(prefix) });
            }
            let mut used = 0;
            let mut label = false;
            for _ in 0..m {
                used += 1;
                if problem.is_correct(&generator.rollout(problem, prefix, t_max, rng)?) {
                    label = true;
                    break;
                }
            }
            Ok(ValidityLabel { method, rollouts_used: used, label })
        }
    }
}

/// Fills `valid` on every stage with exact oracle labels.
pub fn label_trace_oracle(problem: &Problem, trace: &mut SearchTrace) -> Result<()> {
    for s in &mut trace.stages {
        let labels = s.candidates.iter().map(|c| is_valid_prefix(problem, c)).collect::<Result<Vec<_>>>()?;
        s.valid = Some(labels);
    }
    Ok(())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Generation,
    Selection,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureAttribution {
    pub kind: FailureKind,
    pub stage: usize,
}

fn labels(s: &StageRecord) -> Result<&[bool]> {
    s.valid.as_deref().ok_or_else(|| Error::contract(format!("stage {} has no validity labels", s.stage)))
}

/// First decisive failure of an unsolved search: the first stage with no
/// valid candidate is a generation failure, the first stage that had valid
/// candidates but kept none is a selection failure; whichever comes first.
pub fn attribute_failure(trace: &SearchTrace, solved: bool) -> Result<FailureAttribution> {
    if solved {
        return Err(Error::contract("cannot attribute a solved search"));
    }
    for s in &trace.stages {
        let valid = labels(s)?;
        if !valid.iter().any(|&v| v) {
            return Ok(FailureAttribution { kind: FailureKind::Generation, stage: s.stage });
        }
        if !s.selected.iter().any(|&i| valid[i]) {
            return Ok(FailureAttribution { kind: FailureKind::Selection, stage: s.stage });
        }
    }
    Err(Error::contract(format!(
        "failed search on problem {} kept a valid candidate at every stage",
        trace.problem_id
    )))
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionTable {
    pub generation: usize,
    pub selection: usize,
}

impl AttributionTable {
    pub fn add(&mut self, a: FailureAttribution) {
        match a.kind {
            FailureKind::Generation => self.generation += 1,
            FailureKind::Selection => self.selection += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.generation + self.selection
    }

    /// (generation, selection) fractions; `None` with no failures.
    pub fn fractions(&self) -> Option<(f64, f64)> {
        let n = self.total();
        (n > 0).then(|| (self.generation as f64 / n as f64, self.selection as f64 / n as f64))
    }
}

/// (valid, total) candidate counts at the stage where each selection
/// failure happened.
pub fn failure_stage_sparsity(trace: &SearchTrace, solved: bool) -> Result<Option<(usize, usize)>> {
    if solved {
        return Ok(None);
    }
    let a = attribute_failure(trace, solved)?;
    if a.kind != FailureKind::Selection {
        return Ok(None);
    }
    let s = trace.stages.iter().find(|s| s.stage == a.stage).expect("attributed stage exists");
    let valid = labels(s)?.iter().filter(|&&v| v).count();
    Ok(Some((valid, s.candidates.len())))
}

/// Distribution of failed stages over the sparsity bins [0, .25), [.25, .5),
/// [.5, .75), [.75, 1]. `None` for empty input.
pub fn sparsity_bins(records: &[(usize, usize)]) -> Result<Option<[f64; 4]>> {
    if records.is_empty() {
        return Ok(None);
    }
    let mut counts = [0usize; 4];
    for &(valid, total) in records {
        if total == 0 || valid > total {
            return Err(Error::contract(format!("bad sparsity record {valid}/{total}")));
        }
        let s = valid as f64 / total as f64;
        counts[((s * 4.0).floor() as usize).min(3)] += 1;
    }
    let n = records.len() as f64;
    Ok(Some(counts.map(|c| c as f64 / n)))
}

/// Fraction of stages with at least one valid candidate where the selection
/// kept one. `None` if no stage qualifies.
pub fn selection_stage_accuracy<'a>(traces: impl IntoIterator<Item = &'a SearchTrace>) -> Result<Option<f64>> {
    let mut policy: Option<SelectionPolicy> = None;
    let (mut hits, mut stages) = (0usize, 0usize);
    for t in traces {
        match policy {
            None => policy = Some(t.policy),
            Some(p) if p != t.policy => return Err(Error::contract("traces were produced by different policies")),
            _ => {}
        }
        for s in &t.stages {
            let valid = labels(s)?;
            if valid.iter().any(|&v| v) {
                stages += 1;
                hits += usize::from(s.selected.iter().any(|&i| valid[i]));
            }
        }
    }
    Ok((stages > 0).then(|| hits as f64 / stages as f64))
}

/// One row of the first-stage table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStageRow {
    pub b: usize,
    pub k: usize,
    pub problems: usize,
    pub verifier_success: f64,
    pub oracle_success: f64,
}

impl FirstStageRow {
    pub fn gap(&self) -> f64 {
        self.oracle_success - self.verifier_success
    }
}

/// Selection success at the first stage as the candidate count grows.
///
/// Each problem draws `max(K)` first steps once; the `K`-candidate set is
/// the first `K` of them, so the oracle row (any valid candidate) is
/// non-decreasing in `K`. The verifier row counts problems where the
/// selection of `b` kept at least one valid candidate.
#[allow(clippy::too_many_arguments)]
pub fn first_stage_scaling(
    problems: &[Problem],
    generator: &dyn Generator,
    verifier: &dyn Verifier,
    policy: &SelectionPolicy,
    b_grid: &[usize],
    k_grid: &[usize],
    k_cap: usize,
    seed: u64,
) -> Result<Vec<FirstStageRow>> {
    let k_max = k_grid.iter().cloned().max().unwrap_or(0);
    if k_max > k_cap {
        return Err(Error::InvalidParams(format!("K = {k_max} exceeds the cap {k_cap}")));
    }
    if k_max == 0 || b_grid.is_empty() {
        return Ok(Vec::new());
    }
    let cells: Vec<(usize, usize)> =
        b_grid.iter().flat_map(|&b| k_grid.iter().filter(move |&&k| k >= b).map(move |&k| (b, k))).collect();

    let per_problem: Vec<Vec<(bool, bool)>> = problems
        .par_iter()
        .map(|q| -> Result<Vec<(bool, bool)>> {
            let root = PartialPath::root();
            let steps = generator.propose(q, &root, k_max, &mut stream(seed, &[tag("first-stage"), q.id]))?;
            let t_max = q.world.depth().max(1);
            let paths = steps.into_iter().map(|s| root.extend(s, t_max)).collect::<Result<Vec<_>>>()?;
            let valid = paths.iter().map(|p| is_valid_prefix(q, p)).collect::<Result<Vec<_>>>()?;
            let scores = paths.iter().map(|p| verifier.score(q, p)).collect::<Result<Vec<_>>>()?;
            cells
                .iter()
                .map(|&(b, k)| {
                    let set = CandidateSet::with_scores(1, paths[..k].to_vec(), scores[..k].to_vec())?;
                    let mut rng = stream(seed, &[tag("first-stage-select"), q.id, b as u64, k as u64]);
                    let picked = select(&set, policy, b, &mut rng)?;
                    Ok((picked.iter().any(|&i| valid[i]), valid[..k].iter().any(|&v| v)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let n = problems.len().max(1) as f64;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &(b, k))| {
            let (mut v, mut o) = (0usize, 0usize);
            for row in &per_problem {
                v += usize::from(row[c].0);
                o += usize::from(row[c].1);
            }
            FirstStageRow { b, k, problems: problems.len(), verifier_success: v as f64 / n, oracle_success: o as f64 / n }
        })
        .collect())
}

/// Selection-stage accuracy of `policy` replayed on the stages of labeled
/// baseline traces. Frozen beams stay selected; the policy fills the
/// remaining slots from the new candidates. Blended policies roll out every
/// new candidate once.
pub fn replay_selection_accuracy(
    problems: &BTreeMap<u64, Problem>,
    traces: &[SearchTrace],
    generator: &dyn Generator,
    verifier: &dyn Verifier,
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<Option<f64>> {
    let per_trace: Vec<(usize, usize)> = traces
        .par_iter()
        .map(|t| -> Result<(usize, usize)> {
            let q = problems.get(&t.problem_id).ok_or_else(|| Error::contract(format!("unknown problem {}", t.problem_id)))?;
            let (mut hits, mut stages) = (0, 0);
            for s in &t.stages {
                let valid = labels(s)?;
                if !valid.iter().any(|&v| v) {
                    continue;
                }
                stages += 1;
                let nf = s.frozen.len();
                let fresh: Vec<PartialPath> = s.candidates[nf..].to_vec();
                let slots = s.selected.len() - nf;
                let mut rng = stream(seed, &[tag("replay"), t.problem_id, s.stage as u64]);
                let scores: Vec<Score> = match policy.kind {
                    SelectionKind::Blended { lambda } => fresh
                        .iter()
                        .map(|p| score_with_rollout(q, p, verifier, generator, lambda, t.config.t_max, &mut rng))
                        .collect::<Result<_>>()?,
                    _ => s.scores[nf..].to_vec(),
                };
                let kept_frozen = valid[..nf].iter().any(|&v| v);
                let picked = if slots == 0 {
                    Vec::new()
                } else {
                    select(&CandidateSet::with_scores(s.stage, fresh, scores)?, policy, slots, &mut rng)?
                };
                hits += usize::from(kept_frozen || picked.iter().any(|&i| valid[nf + i]));
            }
            Ok((hits, stages))
        })
        .collect::<Result<_>>()?;
    let (hits, stages) = per_trace.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((stages > 0).then(|| hits as f64 / stages as f64))
}

/// A trace read back from JSONL together with its run coordinates.
#[derive(Clone, Debug)]
pub struct LoadedTrace {
    pub method: String,
    pub repeat: usize,
    pub point: usize,
    pub solved: bool,
    pub trace: SearchTrace,
}

/// Parses trace lines, reporting `file:line` on malformed input.
pub fn read_stage_lines(path: &Path) -> Result<Vec<StageLine>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StageLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Groups stage lines into traces and rebuilds their paths inside the
/// problems they belong to.
pub fn assemble_traces(lines: Vec<StageLine>, problems: &BTreeMap<u64, Problem>) -> Result<Vec<LoadedTrace>> {
    let mut groups: BTreeMap<(String, usize, usize, u64), Vec<StageLine>> = BTreeMap::new();
    for l in lines {
        groups.entry((l.method.clone(), l.repeat, l.point, l.problem_id)).or_default().push(l);
    }
    groups
        .into_iter()
        .map(|((method, repeat, point, problem_id), mut ls)| {
            ls.sort_by_key(|l| l.stage);
            let q = problems.get(&problem_id).ok_or_else(|| Error::contract(format!("trace names unknown problem {problem_id}")))?;
            let first = &ls[0];
            let config = crate::domain::BeamConfig {
                beam_size: first.b.max(1),
                candidates: first.k.max(first.b.max(1)),
                t_max: first.t_max.max(1),
                redistribute_frozen: false,
            };
            let policy = first.policy.unwrap_or_else(SelectionPolicy::top_b);
            let solved = ls.iter().any(|l| l.solved);
            let stages = ls
                .into_iter()
                .map(|l| {
                    let candidates = l
                        .candidates
                        .iter()
                        .map(|toks| path_from_tokens(q, toks, config.t_max))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(StageRecord {
                        stage: l.stage,
                        candidates,
                        scores: l.scores.iter().map(|&s| Score::clamped(s)).collect(),
                        selected: l.selected,
                        frozen: l.frozen,
                        valid: l.valid,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LoadedTrace { method, repeat, point, solved, trace: SearchTrace { problem_id, policy, config, stages } })
        })
        .collect()
}
