//! Sweep harness: coverage of verifier-guided search and repeated sampling
//! over a grid of sample sizes or candidate counts, repeated and stratified.
//!
//! Every random draw is keyed by `(master_seed, method, problem, repeat,
//! point)` through [`crate::rng::derive`], and aggregation runs in key
//! order, so results do not depend on the number of workers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use crate::config::{FirstStageConfig, MitigateConfig, OodConfig};
use crate::diagnostics::{
    first_stage_scaling, label_trace_oracle, replay_selection_accuracy, selection_stage_accuracy, FirstStageRow,
};
use crate::domain::{BeamConfig, Problem, Split};
use crate::error::{Error, Result};
use crate::generators::{default_t_max, GenerationPolicy, Generator, SyntheticGenerator};
use crate::rng::{derive, stream, tag};
use crate::search::{beam_search, repeated_sampling, SearchTrace, SelectionPolicy};
use crate::synthworld::{sample_problems, WorldParams};
use crate::verifiers::{
    build_ovm_dataset, fit_ovm, ranking_accuracy, Aggregation, Featurizer, FittedOvm, NoiseSpec, Noisy, OracleOvm, Prm, UniformVerifier,
    Verifier,
};

/// A named population of problems: world parameters, difficulty tier and
/// the split problems are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub difficulty: u8,
    #[serde(default = "test_split")]
    pub split: Split,
    pub world: WorldParams,
}

fn test_split() -> Split {
    Split::Test
}

impl Preset {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.difficulty) {
            return Err(Error::InvalidParams(format!("difficulty {} outside 1..=5", self.difficulty)));
        }
        self.world.validate()?;
        self.world.resolved_p_valid()?;
        if self.world.depth > self.t_max() {
            return Err(Error::InvalidParams(format!(
                "depth {} exceeds the step cap {} of tier {}",
                self.world.depth,
                self.t_max(),
                self.difficulty
            )));
        }
        Ok(())
    }

    pub fn t_max(&self) -> usize {
        default_t_max(self.difficulty)
    }

    pub fn is_ood(&self) -> bool {
        self.split == Split::Test && self.world.ood_shift > 0.0
    }

    /// Problems `first_id..first_id + n` of this preset on its own split.
    pub fn problems(&self, first_id: u64, n: usize) -> Result<Vec<Problem>> {
        sample_problems(&self.world, self.difficulty, self.split, first_id..first_id + n as u64)
    }
}

/// First problem id of training problems; evaluation ids stay below it.
pub const TRAIN_ID_BASE: u64 = 1 << 48;

/// How a verifier is built for a stratum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VerifierSpec {
    OracleOvm {
        #[serde(default)]
        noise: Option<NoiseSpec>,
    },
    /// Linear OVM fitted on `train_problems` training-split problems with
    /// `rollouts` labeled samples each.
    FittedOvm {
        train_problems: usize,
        rollouts: usize,
        #[serde(default)]
        noise: Option<NoiseSpec>,
    },
    Prm {
        #[serde(default)]
        noise: Option<NoiseSpec>,
        #[serde(default)]
        aggregation: Aggregation,
    },
    Uniform,
}

impl VerifierSpec {
    pub fn validate(&self) -> Result<()> {
        let noise = match self {
            VerifierSpec::OracleOvm { noise } | VerifierSpec::Prm { noise, .. } => noise,
            VerifierSpec::FittedOvm { train_problems, rollouts, noise } => {
                if *train_problems == 0 || *rollouts == 0 {
                    return Err(Error::InvalidParams("fitted_ovm needs train_problems and rollouts >= 1".into()));
                }
                noise
            }
            VerifierSpec::Uniform => &None,
        };
        noise.as_ref().map_or(Ok(()), NoiseSpec::validate)
    }
}

/// Fits the linear OVM for `preset` on its training split.
pub fn train_fitted_ovm(
    preset: &Preset,
    generator: &dyn Generator,
    train_problems: usize,
    rollouts: usize,
    seed: u64,
) -> Result<FittedOvm> {
    let mut train = preset.clone();
    train.split = Split::Train;
    let problems = train.problems(TRAIN_ID_BASE + (derive(seed, &[tag("train-ids")]) >> 24), train_problems)?;
    let t_max = preset.t_max();
    let data = build_ovm_dataset(&problems, generator, rollouts, |_| t_max, derive(seed, &[tag("ovm-data")]))?;
    let tiers = [1u8, 2, 3, 4, 5].map(default_t_max);
    fit_ovm(&data, &Featurizer::new(preset.world.feature_dim, tiers))
}

/// Builds the verifier described by `spec` for problems of `preset`.
pub fn build_verifier(
    spec: &VerifierSpec,
    preset: &Preset,
    generator: &dyn Generator,
    seed: u64,
) -> Result<Arc<dyn Verifier>> {
    spec.validate()?;
    fn wrap<V: Verifier + 'static>(v: V, noise: &Option<NoiseSpec>) -> Arc<dyn Verifier> {
        match noise {
            Some(n) if !n.is_zero() => Arc::new(Noisy { base: v, noise: *n }),
            _ => Arc::new(v),
        }
    }
    Ok(match spec {
        VerifierSpec::OracleOvm { noise } => wrap(OracleOvm::new(generator.policy().clone()), noise),
        VerifierSpec::FittedOvm { train_problems, rollouts, noise } => {
            wrap(train_fitted_ovm(preset, generator, *train_problems, *rollouts, seed)?, noise)
        }
        VerifierSpec::Prm { noise, aggregation } => {
            let prm = match noise {
                Some(n) if !n.is_zero() => Prm::noisy(*n),
                _ => Prm::oracle(),
            };
            Arc::new(prm.with_aggregation(*aggregation))
        }
        VerifierSpec::Uniform => Arc::new(UniformVerifier { seed }),
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Grid over `b` with `K = ratio · b`.
    SampleSize,
    /// Grid over `K` with `b = ratio`.
    CandidateSize,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::SampleSize => "sample_size",
            Axis::CandidateSize => "candidate_size",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Search,
    Sampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub method: MethodKind,
    #[serde(default)]
    pub verifier: Option<VerifierSpec>,
    #[serde(default)]
    pub policy: Option<SelectionPolicy>,
}

impl MethodSpec {
    pub fn search(name: &str, verifier: VerifierSpec, policy: SelectionPolicy) -> Self {
        MethodSpec { name: name.into(), method: MethodKind::Search, verifier: Some(verifier), policy: Some(policy) }
    }

    pub fn sampling(name: &str) -> Self {
        MethodSpec { name: name.into(), method: MethodKind::Sampling, verifier: None, policy: None }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_name = !self.name.is_empty()
            && self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok_name {
            return Err(Error::InvalidParams(format!("method name {:?} must be nonempty [A-Za-z0-9_-]", self.name)));
        }
        match self.method {
            MethodKind::Search => {
                self.verifier
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParams(format!("search method {} needs a verifier", self.name)))?
                    .validate()?;
                self.policy.unwrap_or_else(SelectionPolicy::top_b).validate()
            }
            MethodKind::Sampling if self.verifier.is_some() || self.policy.is_some() => {
                Err(Error::InvalidParams(format!("sampling method {} takes no verifier or policy", self.name)))
            }
            MethodKind::Sampling => Ok(()),
        }
    }
}

fn default_ratio() -> usize {
    8
}

fn default_repeats() -> usize {
    3
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Axis,
    pub grid: Vec<usize>,
    /// `K / b` on the sample-size axis, `b` on the candidate-size axis.
    #[serde(default = "default_ratio")]
    pub ratio: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Problems per stratum.
    pub problems: usize,
    /// Preset names, one stratum each.
    pub strata: Vec<String>,
    pub methods: Vec<MethodSpec>,
    /// Write per-stage traces of the search methods.
    #[serde(default = "yes")]
    pub traces: bool,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.grid.is_empty() || self.grid.contains(&0) {
            return bad("grid must be nonempty with positive points".into());
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("grid must be strictly increasing".into());
        }
        if self.ratio == 0 || self.repeats == 0 {
            return bad("ratio and repeats must be >= 1".into());
        }
        if self.problems == 0 {
            return bad("problem set is empty".into());
        }
        if self.strata.is_empty() || self.methods.is_empty() {
            return bad("strata and methods must be nonempty".into());
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("method names must be unique".into());
        }
        for m in &self.methods {
            m.validate()?;
        }
        for &p in &self.grid {
            let (b, k) = self.beam_at(p);
            if b > k || k % b != 0 {
                return bad(format!("grid point {p} gives b = {b}, K = {k}; K must be a multiple of b"));
            }
        }
        Ok(())
    }

    /// `(b, K)` of the search at grid point `p`.
    pub fn beam_at(&self, p: usize) -> (usize, usize) {
        match self.axis {
            Axis::SampleSize => (p, p * self.ratio),
            Axis::CandidateSize => (self.ratio, p),
        }
    }

    /// Number of sampled paths repeated sampling gets at grid point `p`.
    pub fn sampling_size_at(&self, p: usize) -> usize {
        self.beam_at(p).0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub name: String,
    pub preset: Preset,
}

/// Everything a sweep needs, resolved from a run config.
#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub config: SweepConfig,
    pub strata: Vec<Stratum>,
    pub generation: GenerationPolicy,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coverage {
    pub mean: f64,
    pub std: f64,
    /// One coverage value per repeat.
    pub raw: Vec<f64>,
}

impl Coverage {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let std = if raw.len() > 1 {
            (raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Coverage { mean, std, raw }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub point: usize,
    pub b: usize,
    pub k: usize,
    /// Over all problems of all strata.
    pub all: Coverage,
    /// In stratum order.
    pub strata: Vec<(String, Coverage)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageCurve {
    pub method: String,
    pub axis: Axis,
    pub points: Vec<CurvePoint>,
}

impl CoverageCurve {
    pub fn at(&self, point: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.point == point)
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub curves: Vec<CoverageCurve>,
    pub trace_files: Vec<PathBuf>,
}

/// Runs every method over every grid point, repeat and problem on a pool of
/// `workers` threads (0: one per core). Traces go to `trace_dir` when given.
pub fn run_sweep(plan: &SweepPlan, workers: usize, trace_dir: Option<&Path>) -> Result<SweepOutput> {
    with_workers(workers, || run_sweep_inner(plan, trace_dir))
}

/// Runs `f` on a pool of `workers` threads (0: one per core).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::contract(format!("cannot start worker pool: {e}")))?
        .install(f)
}

struct Sweep<'a> {
    plan: &'a SweepPlan,
    problems: Vec<Vec<Problem>>,
    generator: SyntheticGenerator,
}

fn instance_error(method: &str, point: usize, repeat: usize, problem: u64, e: Error) -> Error {
    Error::SweepFailed { method: method.to_string(), point, repeat, problem_id: problem, source: Box::new(e) }
}

fn run_sweep_inner(plan: &SweepPlan, trace_dir: Option<&Path>) -> Result<SweepOutput> {
    let cfg = &plan.config;
    cfg.validate()?;
    plan.generation.validate()?;
    for s in &plan.strata {
        s.preset.validate()?;
    }
    let problems = plan
        .strata
        .iter()
        .enumerate()
        .map(|(i, s)| s.preset.problems((i as u64) << 32, cfg.problems))
        .collect::<Result<Vec<_>>>()?;
    let sweep = Sweep { plan, problems, generator: SyntheticGenerator::new(plan.generation.clone())? };

    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut curves = Vec::new();
    let mut trace_files = Vec::new();
    for method in &cfg.methods {
        let solved = match method.method {
            MethodKind::Sampling => sweep.sampling(method)?,
            MethodKind::Search => sweep.search(method, trace_dir.filter(|_| cfg.traces), &mut trace_files)?,
        };
        curves.push(sweep.aggregate(method, &solved));
    }
    Ok(SweepOutput { curves, trace_files })
}

/// `solved[point][repeat][stratum][problem]`
type Solved = Vec<Vec<Vec<Vec<bool>>>>;

impl Sweep<'_> {
    fn seed(&self, labels: &[u64]) -> u64 {
        derive(self.plan.master_seed, labels)
    }

    fn sampling(&self, method: &MethodSpec) -> Result<Solved> {
        let cfg = &self.plan.config;
        let k_max = cfg.grid.iter().map(|&p| cfg.sampling_size_at(p)).max().expect("nonempty grid");
        let jobs: Vec<(usize, usize, usize)> = (0..cfg.repeats)
            .flat_map(|r| (0..self.problems.len()).flat_map(move |s| (0..cfg.problems).map(move |i| (r, s, i))))
            .collect();
        let first: Vec<Option<usize>> = jobs
            .par_iter()
            .map(|&(r, s, i)| {
                let q = &self.problems[s][i];
                let seed = self.seed(&[tag("sampling"), q.id, r as u64]);
                repeated_sampling(q, &self.generator, k_max, self.plan.strata[s].preset.t_max(), seed)
                    .map(|res| res.first_correct)
                    .map_err(|e| instance_error(&method.name, cfg.grid[0], r, q.id, e))
            })
            .collect::<Result<_>>()?;
        Ok(cfg
            .grid
            .iter()
            .map(|&p| {
                let k = cfg.sampling_size_at(p);
                let mut it = first.iter();
                (0..cfg.repeats)
                    .map(|_| {
                        (0..self.problems.len())
                            .map(|_| (0..cfg.problems).map(|_| it.next().unwrap().is_some_and(|j| j < k)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect())
    }

    fn search(&self, method: &MethodSpec, trace_dir: Option<&Path>, files: &mut Vec<PathBuf>) -> Result<Solved> {
        let cfg = &self.plan.config;
        let name_key = tag(&method.name);
        let spec = method.verifier.as_ref().expect("validated");
        let policy = method.policy.unwrap_or_else(SelectionPolicy::top_b);
        let verifiers = self
            .plan
            .strata
            .iter()
            .enumerate()
            .map(|(s, st)| build_verifier(spec, &st.preset, &self.generator, self.seed(&[tag("verifier"), name_key, s as u64])))
            .collect::<Result<Vec<_>>>()?;

        let mut out = Vec::with_capacity(cfg.grid.len());
        for &p in &cfg.grid {
            let (b, k) = cfg.beam_at(p);
            let jobs: Vec<(usize, usize, usize)> = (0..cfg.repeats)
                .flat_map(|r| (0..self.problems.len()).flat_map(move |s| (0..cfg.problems).map(move |i| (r, s, i))))
                .collect();
            let results: Vec<(bool, Vec<u8>)> = jobs
                .par_iter()
                .map(|&(r, s, i)| {
                    let q = &self.problems[s][i];
                    let run = || -> Result<(bool, Vec<u8>)> {
                        let config = BeamConfig::new(b, k, self.plan.strata[s].preset.t_max())?;
                        let mut rng = stream(self.plan.master_seed, &[tag("search"), name_key, q.id, r as u64, p as u64]);
                        let mut res = beam_search(q, &self.generator, verifiers[s].as_ref(), &policy, &config, &mut rng)?;
                        let mut bytes = Vec::new();
                        if trace_dir.is_some() {
                            label_trace_oracle(q, &mut res.trace)?;
                            res.trace.write_jsonl(&mut bytes, &method.name, r, p, res.solved)?;
                        }
                        Ok((res.solved, bytes))
                    };
                    run().map_err(|e| instance_error(&method.name, p, r, q.id, e))
                })
                .collect::<Result<_>>()?;

            if let Some(dir) = trace_dir {
                let path = dir.join(format!("{}-p{}.jsonl", method.name, p));
                let mut w = BufWriter::new(File::create(&path)?);
                for (_, bytes) in &results {
                    w.write_all(bytes)?;
                }
                w.flush()?;
                files.push(path);
            }
            let mut it = results.into_iter().map(|(s, _)| s);
            out.push(
                (0..cfg.repeats)
                    .map(|_| {
                        (0..self.problems.len()).map(|_| (0..cfg.problems).map(|_| it.next().unwrap()).collect()).collect()
                    })
                    .collect(),
            );
        }
        Ok(out)
    }

    fn aggregate(&self, method: &MethodSpec, solved: &Solved) -> CoverageCurve {
        let cfg = &self.plan.config;
        let frac = |v: &[bool]| v.iter().filter(|&&x| x).count() as f64 / v.len() as f64;
        let points = cfg
            .grid
            .iter()
            .zip(solved)
            .map(|(&p, reps)| {
                let (b, k) = cfg.beam_at(p);
                let all = Coverage::from_raw(reps.iter().map(|strata| frac(&strata.concat())).collect());
                let strata = self
                    .plan
                    .strata
                    .iter()
                    .enumerate()
                    .map(|(s, st)| (st.name.clone(), Coverage::from_raw(reps.iter().map(|r| frac(&r[s])).collect())))
                    .collect();
                CurvePoint { point: p, b, k, all, strata }
            })
            .collect();
        CoverageCurve { method: method.name.clone(), axis: cfg.axis, points }
    }
}

/// Smallest grid point from which search stays strictly below sampling.
pub fn detect_crossover(search: &CoverageCurve, sampling: &CoverageCurve) -> Result<Option<usize>> {
    let grid: Vec<usize> = search.points.iter().map(|p| p.point).collect();
    if grid != sampling.points.iter().map(|p| p.point).collect::<Vec<_>>() {
        return Err(Error::contract("curves do not share a grid"));
    }
    let below: Vec<bool> = search.points.iter().zip(&sampling.points).map(|(a, b)| a.all.mean < b.all.mean).collect();
    Ok((0..grid.len()).find(|&i| below[i..].iter().all(|&x| x)).map(|i| grid[i]))
}

/// Per-stratum `search − sampling` coverage at `point`, then the pooled gap
/// under the name `all`.
pub fn degradation_table(search: &CoverageCurve, sampling: &CoverageCurve, point: usize) -> Result<Vec<(String, f64)>> {
    let (a, b) = match (search.at(point), sampling.at(point)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::contract(format!("grid point {point} missing from a curve"))),
    };
    let mut rows: Vec<(String, f64)> =
        a.strata.iter().zip(&b.strata).map(|((name, x), (_, y))| (name.clone(), x.mean - y.mean)).collect();
    rows.push(("all".into(), a.all.mean - b.all.mean));
    Ok(rows)
}

/// Column order of `curves.csv`. Columns are only ever appended.
pub const CURVES_HEADER: [&str; 10] = ["method", "axis", "point", "b", "k", "stratum", "mean", "std", "repeats", "raw"];

/// Writes `curves.csv`: one row per method, grid point and stratum, plus a
/// pooled `all` row. `raw` holds the per-repeat values joined by `;`.
pub fn write_curves_csv(curves: &[CoverageCurve], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CURVES_HEADER).map_err(to_io)?;
    for c in curves {
        for p in &c.points {
            let rows = std::iter::once(("all", &p.all)).chain(p.strata.iter().map(|(n, v)| (n.as_str(), v)));
            for (stratum, cov) in rows {
                let raw = cov.raw.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
                w.write_record([
                    c.method.as_str(),
                    c.axis.name(),
                    &p.point.to_string(),
                    &p.b.to_string(),
                    &p.k.to_string(),
                    stratum,
                    &cov.mean.to_string(),
                    &cov.std.to_string(),
                    &cov.raw.len().to_string(),
                    &raw,
                ])
                .map_err(to_io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of `curves.csv` read back.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub axis: String,
    pub point: usize,
    pub b: usize,
    pub k: usize,
    pub stratum: String,
    pub mean: f64,
    pub std: f64,
    pub repeats: usize,
    pub raw: String,
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse { path: path.display().to_string(), line: i + 2, msg: e.to_string() })
        })
        .collect()
}

/// First-stage scaling table for repeat `r`; each repeat draws its own
/// problems and its own verifier.
pub fn run_first_stage(
    cfg: &FirstStageConfig,
    preset: &Preset,
    generation: &GenerationPolicy,
    master_seed: u64,
    r: usize,
) -> Result<Vec<FirstStageRow>> {
    preset.validate()?;
    let generator = SyntheticGenerator::new(generation.clone())?;
    let seed = derive(master_seed, &[tag("first-stage"), r as u64]);
    let verifier = build_verifier(&cfg.verifier, preset, &generator, seed)?;
    let problems = preset.problems((r as u64) << 32, cfg.problems)?;
    first_stage_scaling(&problems, &generator, verifier.as_ref(), &cfg.policy, &cfg.b_grid, &cfg.k_grid, cfg.k_cap, seed)
}

/// Selection-stage accuracy of one policy and its gain over `top_b`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MitigationRow {
    pub policy: String,
    pub accuracy: Option<f64>,
    pub gain: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MitigationReport {
    pub baseline: Option<f64>,
    pub stages: usize,
    pub rows: Vec<MitigationRow>,
}

/// Runs `top_b` searches, labels their stages with the oracle and replays
/// softmax and blended selection on those same stages.
pub fn run_mitigation(
    cfg: &MitigateConfig,
    preset: &Preset,
    generation: &GenerationPolicy,
    master_seed: u64,
    r: usize,
) -> Result<MitigationReport> {
    preset.validate()?;
    let generator = SyntheticGenerator::new(generation.clone())?;
    let seed = derive(master_seed, &[tag("mitigate"), r as u64]);
    let verifier = build_verifier(&cfg.verifier, preset, &generator, seed)?;
    let problems = preset.problems((r as u64) << 32, cfg.problems)?;
    let config = BeamConfig::new(cfg.b, cfg.k, preset.t_max())?;
    let baseline = SelectionPolicy::top_b();
    let traces: Vec<SearchTrace> = problems
        .par_iter()
        .map(|q| {
            let mut rng = stream(seed, &[tag("mitigate-search"), q.id]);
            let mut res = beam_search(q, &generator, verifier.as_ref(), &baseline, &config, &mut rng)?;
            label_trace_oracle(q, &mut res.trace)?;
            Ok(res.trace)
        })
        .collect::<Result<_>>()?;
    let stages = traces
        .iter()
        .flat_map(|t| &t.stages)
        .filter(|s| s.valid.as_ref().is_some_and(|v| v.iter().any(|&x| x)))
        .count();
    let base = selection_stage_accuracy(&traces)?;
    let by_id: BTreeMap<u64, Problem> = problems.into_iter().map(|q| (q.id, q)).collect();
    let policies = cfg
        .temperatures
        .iter()
        .map(|&t| SelectionPolicy::softmax(t))
        .chain(cfg.lambdas.iter().map(|&l| SelectionPolicy::blended(l)));
    let rows = policies
        .map(|p| {
            let acc = replay_selection_accuracy(&by_id, &traces, &generator, verifier.as_ref(), &p, seed)?;
            let gain = acc.zip(base).map(|(a, b)| a - b);
            Ok(MitigationRow { policy: p.label(), accuracy: acc, gain })
        })
        .collect::<Result<_>>()?;
    Ok(MitigationReport { baseline: base, stages, rows })
}

/// Held-out ranking accuracy of a fitted OVM trained once on the unshifted
/// training split, evaluated on test problems at each `ood_shift`.
pub fn run_ood(
    cfg: &OodConfig,
    preset: &Preset,
    generation: &GenerationPolicy,
    master_seed: u64,
    r: usize,
) -> Result<Vec<(f64, Option<f64>)>> {
    preset.validate()?;
    let generator = SyntheticGenerator::new(generation.clone())?;
    let seed = derive(master_seed, &[tag("ood"), r as u64]);
    let ovm = train_fitted_ovm(preset, &generator, cfg.train_problems, cfg.train_rollouts, seed)?;
    let t_max = preset.t_max();
    cfg.shifts
        .iter()
        .map(|&shift| {
            let mut test = preset.clone();
            test.split = Split::Test;
            test.world.ood_shift = shift;
            let problems = test.problems((r as u64) << 32, cfg.test_problems)?;
            let acc = ranking_accuracy(&ovm, &problems, &generator, cfg.test_rollouts, |_| t_max, seed)?;
            Ok((shift, acc))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(name: &str, means: &[f64]) -> CoverageCurve {
        CoverageCurve {
            method: name.into(),
            axis: Axis::SampleSize,
            points: means
                .iter()
                .enumerate()
                .map(|(i, &m)| CurvePoint {
                    point: 1 << i,
                    b: 1 << i,
                    k: 8 << i,
                    all: Coverage::from_raw(vec![m]),
                    strata: vec![("x".into(), Coverage::from_raw(vec![m]))],
                })
                .collect(),
        }
    }

    #[test]
    fn crossover_rules() {
        let s = curve("s", &[0.5, 0.6, 0.7]);
        assert_eq!(detect_crossover(&s, &s).unwrap(), None);
        assert_eq!(detect_crossover(&curve("a", &[0.6, 0.7, 0.8]), &s).unwrap(), None);
        assert_eq!(detect_crossover(&curve("a", &[0.6, 0.5, 0.8, 0.6]), &curve("b", &[0.5, 0.6, 0.7, 0.7])).unwrap(), Some(8));
        assert_eq!(detect_crossover(&curve("a", &[0.4, 0.5, 0.6]), &s).unwrap(), Some(1));
        assert!(detect_crossover(&curve("a", &[0.4]), &s).is_err());
    }

    #[test]
    fn coverage_stats() {
        let c = Coverage::from_raw(vec![0.2, 0.4, 0.6]);
        assert!((c.mean - 0.4).abs() < 1e-12);
        assert!((c.std - 0.2).abs() < 1e-12);
        assert_eq!(Coverage::from_raw(vec![0.3]).std, 0.0);
    }

    #[test]
    fn degradation_rows() {
        let rows = degradation_table(&curve("a", &[0.5, 0.4]), &curve("b", &[0.4, 0.6]), 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].1 + 0.2).abs() < 1e-12);
        assert!(degradation_table(&curve("a", &[0.5]), &curve("b", &[0.4]), 4).is_err());
    }

    #[test]
    fn config_checks() {
        let ok = SweepConfig {
            axis: Axis::SampleSize,
            grid: vec![1, 2, 4],
            ratio: 8,
            repeats: 3,
            problems: 10,
            strata: vec!["x".into()],
            methods: vec![MethodSpec::sampling("rs")],
            traces: true,
        };
        ok.validate().unwrap();
        assert_eq!(ok.beam_at(4), (4, 32));
        let cand = SweepConfig { axis: Axis::CandidateSize, grid: vec![8, 16, 64], ..ok.clone() };
        cand.validate().unwrap();
        assert_eq!(cand.beam_at(64), (8, 64));
        assert_eq!(cand.sampling_size_at(64), 8);
        assert!(SweepConfig { problems: 0, ..ok.clone() }.validate().is_err());
        assert!(SweepConfig { grid: vec![2, 1], ..ok.clone() }.validate().is_err());
        assert!(SweepConfig { axis: Axis::CandidateSize, grid: vec![4], ..ok.clone() }.validate().is_err());
        let dup = SweepConfig { methods: vec![MethodSpec::sampling("a"), MethodSpec::sampling("a")], ..ok.clone() };
        assert!(dup.validate().is_err());
        let blind = MethodSpec { verifier: None, ..MethodSpec::search("s", VerifierSpec::Uniform, SelectionPolicy::top_b()) };
        assert!(blind.validate().is_err());
    }
}
