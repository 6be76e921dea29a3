use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
master_seed = 5

[presets.tiny]
difficulty = 1
[presets.tiny.world]
depth = 3
branching = 6
p_valid_child = 0.3
feature_dim = 4
feature_separation = 2.0
seed = 4

[sweep]
axis = "sample_size"
grid = [1, 2, 4]
ratio = 4
repeats = 2
problems = 30
strata = ["tiny"]

[[sweep.methods]]
name = "search-ovm"
method = "search"
verifier = { kind = "fitted_ovm", train_problems = 20, rollouts = 4 }

[[sweep.methods]]
name = "sampling"
method = "sampling"

[first_stage]
preset = "tiny"
problems = 40
b_grid = [1, 2]
k_grid = [4, 8]
verifier = { kind = "uniform" }
repeats = 2

[mitigate]
preset = "tiny"
problems = 30
b = 2
k = 8
verifier = { kind = "oracle_ovm", noise = { sigma = 2.0 } }
temperatures = [1.0]
lambdas = [0.5]
repeats = 2
"#;

fn beamlab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_beamlab"));
    cmd.args(args).env_remove("BEAMLAB_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn ok(out: &Output) {
    assert!(out.status.success(), "status {:?}\nstderr:\n{}", out.status, String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    ok(&beamlab(&["sweep", "--config", s(&cfg), "--out", s(&out), "--workers", "2"], &[]));
    for f in ["curves.csv", "manifest.json", "fig_scaling.svg", "traces/search-ovm-p1.jsonl"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let svg = std::fs::read_to_string(out.join("fig_scaling.svg")).unwrap();
    assert!(svg.starts_with("<!-- beamlab"));

    // Without --config the manifest in the artifact directory supplies it.
    ok(&beamlab(&["diagnose", "--out", s(&out)], &[]));
    for f in ["attribution.csv", "sparsity.csv", "first_stage.csv", "fig_first_stage.svg", "fig_sparsity.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    ok(&beamlab(&["mitigate", "--config", s(&cfg), "--out", s(&out)], &[]));
    assert!(out.join("mitigation.csv").exists());
    std::fs::remove_file(out.join("fig_scaling.svg")).unwrap();
    ok(&beamlab(&["plot", "--out", s(&out)], &[]));
    assert!(out.join("fig_scaling.svg").exists());
    ok(&beamlab(&["report", "--out", s(&out)], &[]));
    let report = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(report.contains("search-ovm"));
}

#[test]
fn rerun_from_manifest_reproduces_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&beamlab(&["sweep", "--config", s(&cfg), "--out", s(&a), "--workers", "1"], &[]));
    ok(&beamlab(&["sweep", "--config", s(&a.join("manifest.json")), "--out", s(&b), "--workers", "3"], &[]));
    assert_eq!(std::fs::read(a.join("curves.csv")).unwrap(), std::fs::read(b.join("curves.csv")).unwrap());
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&beamlab(&["sweep", "--config", s(&cfg), "--out", s(&a)], &[("BEAMLAB_SEED", "1234")]));
    ok(&beamlab(&["sweep", "--config", s(&cfg), "--out", s(&b)], &[]));
    let seed = |d: &Path| -> u64 {
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("manifest.json")).unwrap()).unwrap();
        m["master_seed"].as_u64().unwrap()
    };
    assert_eq!(seed(&a), 1234);
    assert_eq!(seed(&b), 5);
    assert_ne!(std::fs::read(a.join("curves.csv")).unwrap(), std::fs::read(b.join("curves.csv")).unwrap());
}

#[test]
fn config_errors_exit_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        SMALL.replace("ratio = 4", "ratio = 4\nbogus = 1"),
        SMALL.replace("problems = 30\nstrata", "problems = 0\nstrata"),
        SMALL.replace("strata = [\"tiny\"]", "strata = [\"missing\"]"),
        SMALL.replace("grid = [1, 2, 4]", "grid = [4, 2]"),
        SMALL.replace("depth = 3", "depth = 30"),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), text);
        let out = dir.path().join(format!("out{i}"));
        let res = beamlab(&["sweep", "--config", s(&cfg), "--out", s(&out)], &[]);
        assert_eq!(res.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(!out.exists(), "case {i} left artifacts");
    }
    let stderr = {
        let cfg = write_config(dir.path(), &cases[0]);
        String::from_utf8(beamlab(&["sweep", "--config", s(&cfg), "--out", s(&dir.path().join("x"))], &[]).stderr).unwrap()
    };
    assert!(stderr.contains("bogus"), "{stderr}");
    let missing = beamlab(&["sweep", "--out", s(&dir.path().join("y"))], &[]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_flag = beamlab(&["sweep", "--axis", "diagonal"], &[]);
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn malformed_trace_line_is_reported_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    ok(&beamlab(&["sweep", "--config", s(&cfg), "--out", s(&out)], &[]));
    let trace = out.join("traces/search-ovm-p2.jsonl");
    let mut text = std::fs::read_to_string(&trace).unwrap();
    let good_lines = text.lines().count();
    text.push_str("{\"problem_id\": 1, \"stage\": \n");
    std::fs::write(&trace, text).unwrap();
    let res = beamlab(&["diagnose", "--out", s(&out)], &[]);
    assert!(!res.status.success());
    let stderr = String::from_utf8_lossy(&res.stderr);
    let location = format!("search-ovm-p2.jsonl:{}", good_lines + 1);
    assert!(stderr.contains(&location), "{stderr}");
}

#[test]
fn help_and_version_exit_0() {
    assert!(beamlab(&["--help"], &[]).status.success());
    assert!(beamlab(&["--version"], &[]).status.success());
}
