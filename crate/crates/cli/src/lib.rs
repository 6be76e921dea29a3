//! The `beamlab` command: sweeps, diagnostics, mitigation studies, plots
//! and reports over the synthetic search laboratory.

pub mod manifest;
pub mod plots;
pub mod tables;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use beamlab::config::RunConfig;
use beamlab::diagnostics::{
    assemble_traces, attribute_failure, failure_stage_sparsity, label_trace_oracle, read_stage_lines,
    selection_stage_accuracy, sparsity_bins, AttributionTable, LoadedTrace,
};
use beamlab::experiments::{
    degradation_table, detect_crossover, read_curves_csv, run_first_stage, run_mitigation, run_sweep, with_workers,
    write_curves_csv,
    Axis, CoverageCurve, CurveRow, MethodKind,
};
use beamlab::{Error, Problem};
use clap::{Args, Parser, Subcommand};

use manifest::{now_unix, FailedInstance, RunManifest};
use tables::{read_csv, write_csv, AttributionCsv, FirstStageCsv, MitigationCsv, SparsityCsv};

pub const CURVES: &str = "curves.csv";
pub const TRACES: &str = "traces";

#[derive(Debug, Parser)]
#[command(name = "beamlab", version, about = "Verifier-guided search laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run config (TOML), or a manifest.json to rerun a recorded run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true, env = "BEAMLAB_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "beamlab-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Coverage sweep of search and repeated sampling.
    Sweep {
        /// Replace the config's axis; the grid resets to that axis' default.
        #[arg(long, value_parser = parse_axis)]
        axis: Option<Axis>,
    },
    /// Failure attribution, sparsity and first-stage scaling from traces.
    Diagnose {
        /// Trace directory; defaults to `<out>/traces`.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Selection-stage accuracy of softmax and blended selection vs top_b.
    Mitigate,
    /// Redraw the figures of an artifact directory from its CSVs.
    Plot,
    /// Summary tables of an artifact directory as markdown.
    Report,
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    match s {
        "sample_size" => Ok(Axis::SampleSize),
        "candidate_size" => Ok(Axis::CandidateSize),
        _ => Err(format!("unknown axis {s:?}; expected sample_size or candidate_size")),
    }
}

/// A failed command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// Library errors that stem from the configuration exit with code 2.
fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_) | Error::InvalidParams(_) | Error::Degenerate { .. } => Failure::Config(e.into()),
        e => Failure::Runtime(e.into()),
    }
}

/// Parses `args` and runs the command, printing errors to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Sweep { axis } => cmd_sweep(g, *axis),
        Command::Diagnose { traces } => cmd_diagnose(g, traces.as_deref()),
        Command::Mitigate => cmd_mitigate(g),
        Command::Plot => cmd_plot(&g.out).map_err(runtime),
        Command::Report => cmd_report(&g.out).map(|text| print!("{text}")).map_err(runtime),
    }
}

/// Loads a TOML config or the config recorded in a manifest, then applies
/// the seed override.
pub fn load_config(g: &Global) -> Result<RunConfig, Failure> {
    let path = g.config.as_ref().ok_or_else(|| Failure::Config(anyhow!("--config is required")))?;
    let mut cfg = if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::Config)?;
        let m: RunManifest = serde_json::from_str(&text)
            .with_context(|| format!("{}: not a run manifest", path.display()))
            .map_err(Failure::Config)?;
        m.config.validate().map_err(classify)?;
        m.config
    } else {
        RunConfig::load(path).map_err(classify)?
    };
    if let Some(seed) = g.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn default_grid(axis: Axis) -> Vec<usize> {
    match axis {
        Axis::SampleSize => vec![1, 2, 4, 8, 16, 32],
        Axis::CandidateSize => vec![8, 16, 32, 64, 128, 256],
    }
}

pub fn cmd_sweep(g: &Global, axis: Option<Axis>) -> Result<(), Failure> {
    let mut cfg = load_config(g)?;
    {
        let sweep = cfg.sweep.as_mut().ok_or_else(|| Failure::Config(anyhow!("sweep: section missing")))?;
        if let Some(axis) = axis.filter(|a| *a != sweep.axis) {
            sweep.axis = axis;
            sweep.grid = default_grid(axis);
            sweep.ratio = 8;
        }
    }
    cfg.validate().map_err(classify)?;
    let plan = cfg.sweep_plan().map_err(classify)?;

    std::fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display())).map_err(runtime)?;
    let mut manifest = RunManifest::new("sweep", &cfg, g.workers);
    let trace_dir = g.out.join(TRACES);
    let out = match run_sweep(&plan, g.workers, Some(&trace_dir)) {
        Ok(out) => out,
        Err(e) => {
            manifest.failure = Some(match &e {
                Error::SweepFailed { method, point, repeat, problem_id, .. } => FailedInstance {
                    message: e.to_string(),
                    method: Some(method.clone()),
                    point: Some(*point),
                    repeat: Some(*repeat),
                    problem_id: Some(*problem_id),
                },
                _ => FailedInstance { message: e.to_string(), method: None, point: None, repeat: None, problem_id: None },
            });
            manifest.finished_unix = Some(now_unix());
            manifest.write(&g.out).map_err(runtime)?;
            return Err(classify(e));
        }
    };

    let curves_path = g.out.join(CURVES);
    let w = BufWriter::new(File::create(&curves_path).map_err(runtime)?);
    write_curves_csv(&out.curves, w).map_err(runtime)?;
    manifest.add_output(CURVES);
    for f in &out.trace_files {
        manifest.add_output(format!("{TRACES}/{}", f.file_name().unwrap().to_string_lossy()));
    }
    let rows = read_curves_csv(&curves_path).map_err(runtime)?;
    plots::scaling(&rows, &g.out.join("fig_scaling.svg"), &manifest.provenance(CURVES)).map_err(runtime)?;
    manifest.add_output("fig_scaling.svg");
    manifest.finished_unix = Some(now_unix());
    manifest.write(&g.out).map_err(runtime)?;
    print!("{}", summarize_curves(&out.curves, &plan.config.methods));
    Ok(())
}

fn summarize_curves(curves: &[CoverageCurve], methods: &[beamlab::experiments::MethodSpec]) -> String {
    let mut s = String::new();
    for c in curves {
        let pts: Vec<String> = c.points.iter().map(|p| format!("{}:{:.3}±{:.3}", p.point, p.all.mean, p.all.std)).collect();
        let _ = writeln!(s, "{:<16} {}", c.method, pts.join("  "));
    }
    let sampling = methods.iter().zip(curves).find(|(m, _)| m.method == MethodKind::Sampling).map(|(_, c)| c);
    if let Some(base) = sampling {
        for (m, c) in methods.iter().zip(curves) {
            if m.method == MethodKind::Search {
                if let Ok(x) = detect_crossover(c, base) {
                    let _ = writeln!(s, "crossover {} vs {}: {}", c.method, base.method, x.map_or("none".into(), |p| p.to_string()));
                }
            }
        }
    }
    s
}

/// Problems of every stratum of the sweep, keyed by id.
fn sweep_problems(cfg: &RunConfig) -> Result<BTreeMap<u64, Problem>, Failure> {
    let plan = cfg.sweep_plan().map_err(classify)?;
    let mut out = BTreeMap::new();
    for (i, s) in plan.strata.iter().enumerate() {
        for q in s.preset.problems((i as u64) << 32, plan.config.problems).map_err(classify)? {
            out.insert(q.id, q);
        }
    }
    Ok(out)
}

fn load_run_config(g: &Global) -> Result<RunConfig, Failure> {
    if g.config.is_some() {
        return load_config(g);
    }
    let m = RunManifest::read(&g.out).map_err(Failure::Config)?;
    let mut cfg = m.config;
    if let Some(seed) = g.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

pub fn cmd_diagnose(g: &Global, traces: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_run_config(g)?;
    let trace_dir = traces.map(Path::to_path_buf).unwrap_or_else(|| g.out.join(TRACES));
    let problems = sweep_problems(&cfg)?;

    let mut files: Vec<PathBuf> = std::fs::read_dir(&trace_dir)
        .with_context(|| format!("reading {}", trace_dir.display()))
        .map_err(runtime)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(runtime(anyhow!("no trace files in {}", trace_dir.display())));
    }
    let mut lines = Vec::new();
    for f in &files {
        lines.extend(read_stage_lines(f).map_err(runtime)?);
    }
    let mut traces = assemble_traces(lines, &problems).map_err(runtime)?;
    let mut relabeled = 0;
    for t in &mut traces {
        if t.trace.stages.iter().any(|s| s.valid.is_none()) {
            label_trace_oracle(&problems[&t.trace.problem_id], &mut t.trace).map_err(runtime)?;
            relabeled += 1;
        }
    }

    let mut groups: BTreeMap<(String, usize), Vec<&LoadedTrace>> = BTreeMap::new();
    for t in &traces {
        groups.entry((t.method.clone(), t.point)).or_default().push(t);
    }
    let mut attribution = Vec::new();
    let mut sparsity = Vec::new();
    for ((method, point), ts) in &groups {
        let mut table = AttributionTable::default();
        let mut records = Vec::new();
        for t in ts.iter().filter(|t| !t.solved) {
            table.add(attribute_failure(&t.trace, false).map_err(runtime)?);
            records.extend(failure_stage_sparsity(&t.trace, false).map_err(runtime)?);
        }
        let shares = table.fractions();
        attribution.push(AttributionCsv {
            method: method.clone(),
            point: *point,
            searches: ts.len(),
            failed: table.total(),
            generation: table.generation,
            selection: table.selection,
            generation_share: shares.map(|s| s.0),
            selection_share: shares.map(|s| s.1),
            stage_accuracy: selection_stage_accuracy(ts.iter().map(|t| &t.trace)).map_err(runtime)?,
        });
        if let Some(mass) = sparsity_bins(&records).map_err(runtime)? {
            for (bin, m) in mass.iter().enumerate() {
                let count = records
                    .iter()
                    .filter(|(v, n)| ((*v as f64 / *n as f64 * 4.0).floor() as usize).min(3) == bin)
                    .count();
                sparsity.push(SparsityCsv {
                    method: method.clone(),
                    point: *point,
                    bin,
                    lo: bin as f64 / 4.0,
                    hi: (bin + 1) as f64 / 4.0,
                    count,
                    mass: *m,
                });
            }
        }
    }

    std::fs::create_dir_all(&g.out).map_err(runtime)?;
    let mut manifest = RunManifest::read(&g.out).unwrap_or_else(|_| RunManifest::new("diagnose", &cfg, g.workers));
    write_csv(&g.out.join("attribution.csv"), &attribution).map_err(runtime)?;
    write_csv(&g.out.join("sparsity.csv"), &sparsity).map_err(runtime)?;
    manifest.add_output("attribution.csv");
    manifest.add_output("sparsity.csv");
    if relabeled > 0 {
        manifest.notes.push(format!("diagnose: validity labels computed on demand via oracle for {relabeled} traces"));
    }

    if let Some(fs) = &cfg.first_stage {
        let preset = cfg.preset(&fs.preset, "first_stage.preset").map_err(classify)?;
        let mut rows = Vec::new();
        for r in 0..fs.repeats {
            let table = with_workers(g.workers, || run_first_stage(fs, preset, &cfg.generation, cfg.master_seed, r))
                .map_err(classify)?;
            rows.extend(table.into_iter().map(|x| FirstStageCsv {
                repeat: r,
                b: x.b,
                k: x.k,
                problems: x.problems,
                verifier_success: x.verifier_success,
                oracle_success: x.oracle_success,
            }));
        }
        write_csv(&g.out.join("first_stage.csv"), &rows).map_err(runtime)?;
        plots::first_stage(&rows, &g.out.join("fig_first_stage.svg"), &manifest.provenance("first_stage.csv"))
            .map_err(runtime)?;
        manifest.add_output("first_stage.csv");
        manifest.add_output("fig_first_stage.svg");
    }
    plots::sparsity(&sparsity, &g.out.join("fig_sparsity.svg"), &manifest.provenance("sparsity.csv")).map_err(runtime)?;
    manifest.add_output("fig_sparsity.svg");
    manifest.write(&g.out).map_err(runtime)?;

    println!("{:<16} {:>6} {:>7} {:>10} {:>9}", "method", "point", "failed", "generation", "selection");
    for a in &attribution {
        println!(
            "{:<16} {:>6} {:>7} {:>10} {:>9}",
            a.method,
            a.point,
            a.failed,
            a.generation_share.map_or("-".into(), |x| format!("{:.1}%", 100.0 * x)),
            a.selection_share.map_or("-".into(), |x| format!("{:.1}%", 100.0 * x)),
        );
    }
    Ok(())
}

pub fn cmd_mitigate(g: &Global) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let m = cfg.mitigate.as_ref().ok_or_else(|| Failure::Config(anyhow!("mitigate: section missing")))?;
    let preset = cfg.preset(&m.preset, "mitigate.preset").map_err(classify)?;
    std::fs::create_dir_all(&g.out).map_err(runtime)?;
    let mut manifest = RunManifest::new("mitigate", &cfg, g.workers);

    let mut rows = Vec::new();
    let mut sums: BTreeMap<String, (f64, f64, f64, usize, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in 0..m.repeats {
        let rep = with_workers(g.workers, || run_mitigation(m, preset, &cfg.generation, cfg.master_seed, r))
            .map_err(classify)?;
        for x in &rep.rows {
            rows.push(MitigationCsv {
                repeat: r.to_string(),
                policy: x.policy.clone(),
                baseline: rep.baseline,
                accuracy: x.accuracy,
                gain: x.gain,
                stages: rep.stages,
            });
            if let (Some(b), Some(a), Some(gn)) = (rep.baseline, x.accuracy, x.gain) {
                if !sums.contains_key(&x.policy) {
                    order.push(x.policy.clone());
                }
                let e = sums.entry(x.policy.clone()).or_default();
                e.0 += b;
                e.1 += a;
                e.2 += gn;
                e.3 += 1;
                e.4 += rep.stages;
            }
        }
    }
    for p in &order {
        let (b, a, gn, n, st) = sums[p];
        let n_f = n as f64;
        rows.push(MitigationCsv {
            repeat: "mean".into(),
            policy: p.clone(),
            baseline: Some(b / n_f),
            accuracy: Some(a / n_f),
            gain: Some(gn / n_f),
            stages: st / n,
        });
    }
    write_csv(&g.out.join("mitigation.csv"), &rows).map_err(runtime)?;
    manifest.add_output("mitigation.csv");
    manifest.finished_unix = Some(now_unix());
    manifest.write(&g.out).map_err(runtime)?;
    println!("{:<16} {:>9}", "policy", "gain");
    for r in rows.iter().filter(|r| r.repeat == "mean") {
        println!("{:<16} {:>+8.1}%", r.policy, 100.0 * r.gain.unwrap_or(f64::NAN));
    }
    Ok(())
}

/// Redraws every figure whose CSV exists in `dir`.
pub fn cmd_plot(dir: &Path) -> anyhow::Result<()> {
    let manifest = RunManifest::read(dir).ok();
    let prov = |src: &str| manifest.as_ref().map_or(format!("data {src}"), |m| m.provenance(src));
    let mut drawn = 0;
    if dir.join(CURVES).exists() {
        plots::scaling(&read_curves_csv(&dir.join(CURVES))?, &dir.join("fig_scaling.svg"), &prov(CURVES))?;
        drawn += 1;
    }
    if dir.join("first_stage.csv").exists() {
        let rows: Vec<FirstStageCsv> = read_csv(&dir.join("first_stage.csv"))?;
        plots::first_stage(&rows, &dir.join("fig_first_stage.svg"), &prov("first_stage.csv"))?;
        drawn += 1;
    }
    if dir.join("sparsity.csv").exists() {
        let rows: Vec<SparsityCsv> = read_csv(&dir.join("sparsity.csv"))?;
        plots::sparsity(&rows, &dir.join("fig_sparsity.svg"), &prov("sparsity.csv"))?;
        drawn += 1;
    }
    if drawn == 0 {
        return Err(anyhow!("no result tables in {}", dir.display()));
    }
    Ok(())
}

fn curves_from_rows(rows: &[CurveRow]) -> Vec<CoverageCurve> {
    use beamlab::experiments::{Coverage, CurvePoint};
    let mut curves: Vec<CoverageCurve> = Vec::new();
    for r in rows {
        let axis = if r.axis == "candidate_size" { Axis::CandidateSize } else { Axis::SampleSize };
        if curves.last().map(|c| &c.method) != Some(&r.method) {
            curves.push(CoverageCurve { method: r.method.clone(), axis, points: Vec::new() });
        }
        let c = curves.last_mut().unwrap();
        let cov = Coverage {
            mean: r.mean,
            std: r.std,
            raw: r.raw.split(';').filter(|s| !s.is_empty()).filter_map(|s| s.parse().ok()).collect(),
        };
        if c.points.last().map(|p| p.point) != Some(r.point) {
            c.points.push(CurvePoint { point: r.point, b: r.b, k: r.k, all: cov.clone(), strata: Vec::new() });
        }
        if r.stratum != "all" {
            c.points.last_mut().unwrap().strata.push((r.stratum.clone(), cov));
        }
    }
    curves
}

/// Markdown summary of the tables present in `dir`; also written to
/// `report.md`.
pub fn cmd_report(dir: &Path) -> anyhow::Result<String> {
    let mut s = String::from("# beamlab report\n\n");
    if let Ok(m) = RunManifest::read(dir) {
        let _ = writeln!(s, "seed {} · presets sha256 `{}`\n", m.master_seed, m.presets_digest);
    }
    if dir.join(CURVES).exists() {
        let rows = read_curves_csv(&dir.join(CURVES))?;
        let curves = curves_from_rows(&rows);
        s.push_str("## Coverage\n\n| method | point | mean | std |\n|---|---:|---:|---:|\n");
        for c in &curves {
            for p in &c.points {
                let _ = writeln!(s, "| {} | {} | {:.3} | {:.3} |", c.method, p.point, p.all.mean, p.all.std);
            }
        }
        if let Some(base) = curves.iter().find(|c| c.method.contains("sampling")) {
            for c in curves.iter().filter(|c| c.method != base.method) {
                let x = detect_crossover(c, base)?;
                let _ = writeln!(s, "\ncrossover of {} below {}: {}", c.method, base.method, x.map_or("none".into(), |p| p.to_string()));
                let points: Vec<usize> = [1, 32].into_iter().filter(|p| c.at(*p).is_some()).collect();
                if !points.is_empty() {
                    s.push_str("\n| stratum |");
                    for p in &points {
                        let _ = write!(s, " #sample {p} |");
                    }
                    s.push_str("\n|---|");
                    s.push_str(&"---:|".repeat(points.len()));
                    s.push('\n');
                    let tables: Vec<Vec<(String, f64)>> =
                        points.iter().map(|&p| degradation_table(c, base, p)).collect::<Result<_, _>>()?;
                    for (i, (name, _)) in tables[0].iter().enumerate() {
                        let _ = write!(s, "| {name} |");
                        for t in &tables {
                            let _ = write!(s, " {:+.1}% |", 100.0 * t[i].1);
                        }
                        s.push('\n');
                    }
                }
            }
        }
        s.push('\n');
    }
    if dir.join("attribution.csv").exists() {
        let rows: Vec<AttributionCsv> = read_csv(&dir.join("attribution.csv"))?;
        s.push_str("## Failure sources\n\n| method | point | failed | G | S |\n|---|---:|---:|---:|---:|\n");
        for a in rows {
            let pct = |x: Option<f64>| x.map_or("-".into(), |x| format!("{:.1}%", 100.0 * x));
            let _ = writeln!(s, "| {} | {} | {} | {} | {} |", a.method, a.point, a.failed, pct(a.generation_share), pct(a.selection_share));
        }
        s.push('\n');
    }
    if dir.join("mitigation.csv").exists() {
        let rows: Vec<MitigationCsv> = read_csv(&dir.join("mitigation.csv"))?;
        s.push_str("## Selection-stage gain over top_b\n\n| policy | gain |\n|---|---:|\n");
        for r in rows.iter().filter(|r| r.repeat == "mean") {
            let _ = writeln!(s, "| {} | {:+.1}% |", r.policy, 100.0 * r.gain.unwrap_or(f64::NAN));
        }
        s.push('\n');
    }
    std::fs::write(dir.join("report.md"), &s)?;
    Ok(s)
}
