use std::collections::HashMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{PartialPath, Problem, Score, StepToken};
use crate::error::{Error, Result};
use crate::generators::remote::path_from_tokens;
use crate::generators::Generator;
use crate::rng::{stream, tag};
use crate::synthworld::is_valid_prefix;
use crate::verifiers::Verifier;

/// One sampled solution and its outcome label.
#[derive(Clone, Debug)]
pub struct OvmRow {
    pub problem: Problem,
    pub path: PartialPath,
    pub label: bool,
}

#[derive(Clone, Debug, Default)]
pub struct OvmDataset {
    pub rows: Vec<OvmRow>,
    pub n_per_problem: usize,
}

#[derive(Serialize, Deserialize)]
struct RowRecord {
    problem_id: u64,
    steps: Vec<StepToken>,
    label: u8,
}

impl OvmDataset {
    pub fn mean_label(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.label).count() as f64 / self.rows.len() as f64
    }

    /// One JSON object per row: `{problem_id, steps, label}`.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for r in &self.rows {
            let rec = RowRecord { problem_id: r.problem.id, steps: r.path.tokens().collect(), label: r.label as u8 };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads rows back, rebuilding paths inside the given problems.
    pub fn read_jsonl(input: impl BufRead, problems: &[Problem], n_per_problem: usize, t_max: usize) -> Result<Self> {
        let by_id: HashMap<u64, &Problem> = problems.iter().map(|p| (p.id, p)).collect();
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { path: "<ovm dataset>".into(), line: i + 1, msg };
            let rec: RowRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let problem = *by_id.get(&rec.problem_id).ok_or_else(|| parse_err(format!("unknown problem {}", rec.problem_id)))?;
            let path = path_from_tokens(problem, &rec.steps, t_max)?;
            rows.push(OvmRow { problem: problem.clone(), path, label: rec.label != 0 });
        }
        Ok(OvmDataset { rows, n_per_problem })
    }
}

/// `n` rollouts from the root of every problem, labeled by whether the final
/// answer matches. Problems run in parallel on disjoint streams.
pub fn build_ovm_dataset(
    problems: &[Problem],
    generator: &dyn Generator,
    n: usize,
    t_max_of: impl Fn(&Problem) -> usize + Sync,
    seed: u64,
) -> Result<OvmDataset> {
    if n == 0 {
        return Err(Error::contract("build_ovm_dataset needs n >= 1"));
    }
    let per_problem: Vec<Vec<OvmRow>> = problems
        .par_iter()
        .map(|q| {
            (0..n)
                .map(|i| {
                    let mut rng = stream(seed, &[tag("ovm-data"), q.id, i as u64]);
                    let path = generator.rollout(q, &PartialPath::root(), t_max_of(q), &mut rng)?;
                    let label = q.is_correct(&path);
                    Ok(OvmRow { problem: q.clone(), path, label })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(OvmDataset { rows: per_problem.into_iter().flatten().collect(), n_per_problem: n })
}

/// Prefix summary: mean step features, last step features, and length over
/// the tier's step cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub feature_dim: usize,
    pub t_max_by_tier: [usize; 5],
}

impl Featurizer {
    pub fn new(feature_dim: usize, t_max_by_tier: [usize; 5]) -> Self {
        Featurizer { feature_dim, t_max_by_tier }
    }

    pub fn width(&self) -> usize {
        2 * self.feature_dim + 1
    }

    pub fn featurize(&self, problem: &Problem, prefix: &PartialPath) -> Result<Vec<f64>> {
        let d = self.feature_dim;
        let mut x = vec![0.0; self.width()];
        let steps = prefix.steps();
        if let Some(last) = steps.last() {
            for s in steps {
                if s.features.len() != d {
                    return Err(Error::Scoring(format!("step has {} features, expected {d}", s.features.len())));
                }
                for (acc, f) in x[..d].iter_mut().zip(s.features.iter()) {
                    *acc += f;
                }
            }
            let n = steps.len() as f64;
            x[..d].iter_mut().for_each(|v| *v /= n);
            x[d..2 * d].copy_from_slice(&last.features);
        }
        let tier = (problem.difficulty.clamp(1, 5) - 1) as usize;
        x[2 * d] = steps.len() as f64 / self.t_max_by_tier[tier] as f64;
        Ok(x)
    }
}

/// Linear value model clamped to [0, 1]. `weights` ends with the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedOvm {
    pub weights: Vec<f64>,
    pub training_loss: f64,
    /// Ridge term added to the normal equations, zero when none was needed.
    pub ridge: f64,
    pub featurizer: Featurizer,
}

const RIDGE_FALLBACK: f64 = 1e-6;

/// Least squares of the row label on the summary of every nonempty prefix of
/// the row. Falls back to a small ridge term when the normal equations are
/// singular.
pub fn fit_ovm(dataset: &OvmDataset, featurizer: &Featurizer) -> Result<FittedOvm> {
    if dataset.rows.is_empty() {
        return Err(Error::contract("cannot fit an OVM on an empty dataset"));
    }
    let p = featurizer.width() + 1;
    let (xtx, xty, n) = dataset
        .rows
        .par_iter()
        .map(|row| -> Result<(DMatrix<f64>, DVector<f64>, usize)> {
            let mut xtx = DMatrix::zeros(p, p);
            let mut xty = DVector::zeros(p);
            let y = if row.label { 1.0 } else { 0.0 };
            for len in 1..=row.path.len() {
                let mut x = featurizer.featurize(&row.problem, &row.path.prefix(len))?;
                x.push(1.0);
                let x = DVector::from_vec(x);
                xtx.ger(1.0, &x, &x, 1.0);
                xty.axpy(y, &x, 1.0);
            }
            Ok((xtx, xty, row.path.len()))
        })
        .try_reduce(
            || (DMatrix::zeros(p, p), DVector::zeros(p), 0),
            |a, b| Ok((a.0 + b.0, a.1 + b.1, a.2 + b.2)),
        )?;
    if n == 0 {
        return Err(Error::contract("dataset has no nonempty prefixes"));
    }

    let solve = |ridge: f64| {
        let mut m = xtx.clone();
        for i in 0..p {
            m[(i, i)] += ridge * (1.0 + xtx[(i, i)]);
        }
        m.cholesky().map(|c| c.solve(&xty))
    };
    let (w, ridge) = match solve(0.0) {
        Some(w) if w.iter().all(|v| v.is_finite()) => (w, 0.0),
        _ => (solve(RIDGE_FALLBACK).ok_or_else(|| Error::Scoring("normal equations are singular".into()))?, RIDGE_FALLBACK),
    };
    let mut model = FittedOvm { weights: w.iter().cloned().collect(), training_loss: 0.0, ridge, featurizer: featurizer.clone() };

    let sse: f64 = dataset
        .rows
        .par_iter()
        .map(|row| {
            let y = if row.label { 1.0 } else { 0.0 };
            (1..=row.path.len())
                .map(|len| model.raw(&row.problem, &row.path.prefix(len)).map(|v| (v - y).powi(2)))
                .sum::<Result<f64>>()
        })
        .sum::<Result<f64>>()?;
    model.training_loss = sse / n as f64;
    Ok(model)
}

impl FittedOvm {
    /// Unclamped linear prediction.
    pub fn raw(&self, problem: &Problem, prefix: &PartialPath) -> Result<f64> {
        let x = self.featurizer.featurize(problem, prefix)?;
        let (bias, w) = self.weights.split_last().expect("weights include a bias");
        Ok(w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + bias)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FittedOvm = serde_json::from_str(s)?;
        if m.weights.len() != m.featurizer.width() + 1 {
            return Err(Error::Config(format!(
                "OVM has {} weights, featurizer needs {}",
                m.weights.len(),
                m.featurizer.width() + 1
            )));
        }
        Ok(m)
    }
}

impl Verifier for FittedOvm {
    fn score(&self, problem: &Problem, prefix: &PartialPath) -> Result<Score> {
        Ok(Score::clamped(self.raw(problem, prefix)?))
    }
}

/// Probability that a valid prefix outscores an invalid one of the same
/// problem and length (ties count half), over the distinct prefixes of
/// `rollouts` sampled solutions per problem. `None` when no such pair exists.
pub fn ranking_accuracy(
    verifier: &dyn Verifier,
    problems: &[Problem],
    generator: &dyn Generator,
    rollouts: usize,
    t_max_of: impl Fn(&Problem) -> usize + Sync,
    seed: u64,
) -> Result<Option<f64>> {
    let per_problem: Vec<(f64, u64)> = problems
        .par_iter()
        .map(|q| -> Result<(f64, u64)> {
            let mut seen = HashMap::new();
            for i in 0..rollouts {
                let mut rng = stream(seed, &[tag("rank-acc"), q.id, i as u64]);
                let path = generator.rollout(q, &PartialPath::root(), t_max_of(q), &mut rng)?;
                for len in 1..=path.len() {
                    let pre = path.prefix(len);
                    if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(pre.key()) {
                        let valid = is_valid_prefix(q, &pre)?;
                        let s = verifier.score(q, &pre)?.value();
                        e.insert((len, valid, s));
                    }
                }
            }
            let mut by_len: HashMap<usize, (Vec<f64>, Vec<f64>)> = HashMap::new();
            for &(len, valid, s) in seen.values() {
                let e = by_len.entry(len).or_default();
                if valid { e.0.push(s) } else { e.1.push(s) }
            }
            let mut wins = 0.0;
            let mut pairs = 0u64;
            for (good, bad) in by_len.values() {
                for &g in good {
                    for &b in bad {
                        wins += if g > b { 1.0 } else if g == b { 0.5 } else { 0.0 };
                        pairs += 1;
                    }
                }
            }
            Ok((wins, pairs))
        })
        .collect::<Result<_>>()?;
    let (wins, pairs) = per_problem.iter().fold((0.0, 0u64), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((pairs > 0).then(|| wins / pairs as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Split;
    use crate::generators::SyntheticGenerator;
    use crate::synthworld::{sample_problems, WorldParams};

    fn world(sep: f64) -> WorldParams {
        WorldParams {
            depth: 4,
            branching: 4,
            p_valid_child: 0.35,
            feature_dim: 4,
            feature_separation: sep,
            seed: 21,
            ..Default::default()
        }
    }

    fn featurizer() -> Featurizer {
        Featurizer::new(4, [10; 5])
    }

    #[test]
    fn constant_labels_give_constant_predictor() {
        let params = WorldParams { p_valid_child: 1.0, ..world(2.0) };
        let problems = sample_problems(&params, 1, Split::Train, 0..20).unwrap();
        let g = SyntheticGenerator::default();
        let data = build_ovm_dataset(&problems, &g, 5, |_| 10, 1).unwrap();
        assert_eq!(data.rows.len(), 100);
        assert!(data.rows.iter().all(|r| r.label));
        let m = fit_ovm(&data, &featurizer()).unwrap();
        assert!(m.training_loss < 1e-12, "mse {}", m.training_loss);
        let s = m.score(&problems[0], &data.rows[0].path).unwrap().value();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(fit_ovm(&OvmDataset::default(), &featurizer()).is_err());
    }

    #[test]
    fn singular_design_falls_back_to_ridge() {
        // Every step has identical features: the design has rank 2 at most.
        let params = WorldParams { feature_separation: 0.0, p_valid_child: 1.0, ..world(0.0) };
        let q = sample_problems(&params, 1, Split::Train, 0..1).unwrap().remove(0);
        let step = q.world.make_step(q.world.root(), StepToken(0)).unwrap();
        let path = PartialPath::root().extend(step, 10).unwrap();
        let rows = (0..4).map(|i| OvmRow { problem: q.clone(), path: path.clone(), label: i % 2 == 0 }).collect();
        let m = fit_ovm(&OvmDataset { rows, n_per_problem: 4 }, &featurizer()).unwrap();
        assert!(m.ridge > 0.0);
        assert!(m.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn weights_roundtrip_through_json() {
        let problems = sample_problems(&world(2.0), 1, Split::Train, 0..10).unwrap();
        let g = SyntheticGenerator::default();
        let data = build_ovm_dataset(&problems, &g, 4, |_| 10, 2).unwrap();
        let m = fit_ovm(&data, &featurizer()).unwrap();
        let back = FittedOvm::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let mut bad = m.clone();
        bad.weights.pop();
        assert!(FittedOvm::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn dataset_jsonl_roundtrip() {
        let problems = sample_problems(&world(2.0), 1, Split::Train, 0..5).unwrap();
        let g = SyntheticGenerator::default();
        let data = build_ovm_dataset(&problems, &g, 3, |_| 10, 3).unwrap();
        let mut buf = Vec::new();
        data.write_jsonl(&mut buf).unwrap();
        let back = OvmDataset::read_jsonl(&buf[..], &problems, 3, 10).unwrap();
        assert_eq!(back.rows.len(), data.rows.len());
        for (a, b) in data.rows.iter().zip(&back.rows) {
            assert_eq!(a.path, b.path);
            assert_eq!(a.label, b.label);
        }
        assert!(matches!(
            OvmDataset::read_jsonl(&b"{\"problem_id\": 999, \"steps\": [], \"label\": 1}\n"[..], &problems, 3, 10),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
