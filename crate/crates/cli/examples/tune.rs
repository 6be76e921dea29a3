//! Prints the reproduction metrics of a run config so its pinned presets
//! can be adjusted by hand.
//!
//! `cargo run --release -p beamlab-cli --example tune -- configs/acceptance.toml [sweep|first|sparsity|mitigate|ood]...`

use std::path::Path;
use std::time::Instant;

use beamlab::config::RunConfig;
use beamlab::diagnostics::{failure_stage_sparsity, sparsity_bins, AttributionTable, attribute_failure};
use beamlab::experiments::{run_first_stage, run_mitigation, run_ood, run_sweep};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::load(Path::new(&args[0]))?;
    let all = args.len() == 1;
    let want = |s: &str| all || args[1..].iter().any(|a| a == s);

    if want("sweep") || want("sparsity") {
        let t = Instant::now();
        let dir = std::env::temp_dir().join("beamlab-tune");
        let _ = std::fs::remove_dir_all(&dir);
        let out = run_sweep(&cfg.sweep_plan()?, 0, Some(&dir))?;
        println!("sweep {:.1}s", t.elapsed().as_secs_f64());
        for c in &out.curves {
            let row: Vec<String> = c.points.iter().map(|p| format!("{}:{:.3}{:?}", p.point, p.all.mean, fmt(&p.all.raw))).collect();
            println!("  {:<12} {}", c.method, row.join(" "));
        }
        if want("sparsity") {
            let plan = cfg.sweep_plan()?;
            let problems: std::collections::BTreeMap<u64, _> = plan
                .strata
                .iter()
                .enumerate()
                .flat_map(|(i, s)| s.preset.problems((i as u64) << 32, plan.config.problems).unwrap())
                .map(|q| (q.id, q))
                .collect();
            for f in &out.trace_files {
                let lines = beamlab::diagnostics::read_stage_lines(f)?;
                let traces = beamlab::diagnostics::assemble_traces(lines, &problems)?;
                let mut table = AttributionTable::default();
                let mut recs = Vec::new();
                for t in &traces {
                    if !t.solved {
                        table.add(attribute_failure(&t.trace, false)?);
                        recs.extend(failure_stage_sparsity(&t.trace, false)?);
                    }
                }
                let bins = sparsity_bins(&recs)?;
                println!("  {} G/S {:?} bins {:?}", f.file_name().unwrap().to_string_lossy(), (table.generation, table.selection), bins.map(|b| fmt(&b)));
            }
        }
    }
    if want("first") {
        let f = cfg.first_stage.as_ref().unwrap();
        let preset = cfg.preset(&f.preset, "first_stage")?;
        for r in 0..f.repeats {
            let rows = run_first_stage(f, preset, &cfg.generation, cfg.master_seed, r)?;
            for b in &f.b_grid {
                let line: Vec<String> = rows
                    .iter()
                    .filter(|x| x.b == *b)
                    .map(|x| format!("K{}:{:.3}/{:.3}", x.k, x.verifier_success, x.oracle_success))
                    .collect();
                println!("first r{r} b{b} {}", line.join(" "));
            }
        }
    }
    if want("mitigate") {
        let m = cfg.mitigate.as_ref().unwrap();
        let preset = cfg.preset(&m.preset, "mitigate")?;
        for r in 0..m.repeats {
            let rep = run_mitigation(m, preset, &cfg.generation, cfg.master_seed, r)?;
            let line: Vec<String> = rep.rows.iter().map(|x| format!("{}:{:+.3}", x.policy, x.gain.unwrap_or(f64::NAN))).collect();
            println!("mitigate r{r} base {:.3} n={} {}", rep.baseline.unwrap_or(f64::NAN), rep.stages, line.join(" "));
            let mut zero = m.clone();
            zero.verifier = beamlab::experiments::VerifierSpec::OracleOvm { noise: None };
            let rep = run_mitigation(&zero, preset, &cfg.generation, cfg.master_seed, r)?;
            let line: Vec<String> = rep.rows.iter().map(|x| format!("{}:{:+.3}", x.policy, x.gain.unwrap_or(f64::NAN))).collect();
            println!("  zero-noise base {:.3} {}", rep.baseline.unwrap_or(f64::NAN), line.join(" "));
        }
    }
    if want("ood") {
        let o = cfg.ood.as_ref().unwrap();
        let preset = cfg.preset(&o.preset, "ood")?;
        for r in 0..o.repeats {
            let accs = run_ood(o, preset, &cfg.generation, cfg.master_seed, r)?;
            println!("ood r{r} {:?}", accs);
        }
    }
    Ok(())
}

fn fmt(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{x:.3}")).collect()
}
