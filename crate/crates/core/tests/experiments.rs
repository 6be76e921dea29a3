use beamlab::config::RunConfig;
use beamlab::experiments::{
    detect_crossover, read_curves_csv, run_sweep, write_curves_csv, Axis, MethodSpec, Preset, Stratum, SweepConfig,
    SweepPlan, VerifierSpec,
};
use beamlab::generators::GenerationPolicy;
use beamlab::search::SelectionPolicy;
use beamlab::synthworld::{true_value, WorldParams};
use beamlab::{PartialPath, Split};

fn preset(seed: u64) -> Preset {
    Preset {
        difficulty: 1,
        split: Split::Test,
        world: WorldParams { depth: 3, branching: 6, p_valid_child: 0.3, seed, ..Default::default() },
    }
}

fn plan(methods: Vec<MethodSpec>, grid: Vec<usize>, problems: usize, repeats: usize) -> SweepPlan {
    SweepPlan {
        config: SweepConfig {
            axis: Axis::SampleSize,
            grid,
            ratio: 4,
            repeats,
            problems,
            strata: vec!["a".into(), "b".into()],
            methods,
            traces: true,
        },
        strata: vec![Stratum { name: "a".into(), preset: preset(1) }, Stratum { name: "b".into(), preset: preset(2) }],
        generation: GenerationPolicy::default(),
        master_seed: 77,
    }
}

fn oracle_search() -> MethodSpec {
    MethodSpec::search("oracle", VerifierSpec::OracleOvm { noise: None }, SelectionPolicy::top_b())
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let p = plan(
        vec![
            oracle_search(),
            MethodSpec::search("uniform", VerifierSpec::Uniform, SelectionPolicy::softmax(1.0)),
            MethodSpec::sampling("sampling"),
        ],
        vec![1, 2, 4],
        40,
        2,
    );
    let d1 = tempfile::tempdir().unwrap();
    let d3 = tempfile::tempdir().unwrap();
    let a = run_sweep(&p, 1, Some(d1.path())).unwrap();
    let b = run_sweep(&p, 3, Some(d3.path())).unwrap();
    assert_eq!(a.curves, b.curves);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    write_curves_csv(&a.curves, &mut ca).unwrap();
    write_curves_csv(&b.curves, &mut cb).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.trace_files.len(), 6);
    for (fa, fb) in a.trace_files.iter().zip(&b.trace_files) {
        assert_eq!(fa.file_name(), fb.file_name());
        assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
    }
}

#[test]
fn sampling_coverage_is_nested_and_matches_exact_values() {
    let grid = vec![1, 2, 4, 8, 16];
    let (n, repeats) = (400, 3);
    let p = plan(vec![MethodSpec::sampling("sampling")], grid.clone(), n, repeats);
    let out = run_sweep(&p, 0, None).unwrap();
    let curve = &out.curves[0];
    for w in curve.points.windows(2) {
        for (a, b) in w[0].all.raw.iter().zip(&w[1].all.raw) {
            assert!(b >= a);
        }
    }
    // Exact per-problem success probability from the oracle value of the root.
    let policy = GenerationPolicy::default();
    let mut values = Vec::new();
    for (i, s) in p.strata.iter().enumerate() {
        for q in s.preset.problems((i as u64) << 32, n).unwrap() {
            values.push(true_value(&q, &PartialPath::root(), &policy).unwrap());
        }
    }
    for pt in &curve.points {
        let k = pt.b as i32;
        let expect = values.iter().map(|v| 1.0 - (1.0 - v).powi(k)).sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| {
            let c = 1.0 - (1.0 - v).powi(k);
            c * (1.0 - c)
        });
        let se = (var.sum::<f64>() / (values.len() * values.len() * repeats) as f64).sqrt();
        assert!((pt.all.mean - expect).abs() < 4.0 * se + 1e-9, "K={k}: {} vs {expect}", pt.all.mean);
    }
}

#[test]
fn oracle_search_never_trails_sampling() {
    let p = plan(vec![oracle_search(), MethodSpec::sampling("sampling")], vec![1, 2, 4], 150, 2);
    let out = run_sweep(&p, 0, None).unwrap();
    for (a, b) in out.curves[0].points.iter().zip(&out.curves[1].points) {
        assert!(a.all.mean >= b.all.mean, "point {}: {} < {}", a.point, a.all.mean, b.all.mean);
    }
    assert_eq!(detect_crossover(&out.curves[0], &out.curves[1]).unwrap(), None);
}

#[test]
fn curves_survive_csv() {
    let p = plan(vec![oracle_search(), MethodSpec::sampling("sampling")], vec![1, 2], 20, 2);
    let out = run_sweep(&p, 0, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    write_curves_csv(&out.curves, std::fs::File::create(&path).unwrap()).unwrap();
    let rows = read_curves_csv(&path).unwrap();
    // Two methods, two points, the pooled row plus two strata.
    assert_eq!(rows.len(), 2 * 2 * 3);
    for r in &rows {
        let c = out.curves.iter().find(|c| c.method == r.method).unwrap();
        let pt = c.at(r.point).unwrap();
        let cov = if r.stratum == "all" { &pt.all } else { &pt.strata.iter().find(|s| s.0 == r.stratum).unwrap().1 };
        assert_eq!(r.mean, cov.mean);
        assert_eq!(r.repeats, 2);
        let raw: Vec<f64> = r.raw.split(';').map(|x| x.parse().unwrap()).collect();
        assert_eq!(raw, cov.raw);
    }
}

#[test]
fn invalid_sweeps_fail_before_running() {
    let mut p = plan(vec![MethodSpec::sampling("sampling")], vec![2, 1], 10, 1);
    assert!(run_sweep(&p, 1, None).is_err());
    p.config.grid = vec![1];
    p.config.problems = 0;
    assert!(run_sweep(&p, 1, None).is_err());
    p.config.problems = 5;
    p.strata[0].preset.world.depth = 40;
    assert!(run_sweep(&p, 1, None).is_err());
}

#[test]
fn shipped_configs_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["default.toml", "acceptance.toml"] {
        let cfg = RunConfig::load(&dir.join(name)).unwrap();
        cfg.validate().unwrap();
        cfg.sweep_plan().unwrap();
    }
}
