use beamlab::generators::GenerationPolicy;
use beamlab::synthworld::{
    enumerate_solutions, expected_sparsity, is_valid_prefix, sample_problem, step_correct, true_value, WorldParams,
};
use beamlab::{Error, PartialPath, Split};
use proptest::prelude::*;

fn small_world() -> impl Strategy<Value = WorldParams> {
    (1usize..=4, 2usize..=5, 0.05f64..0.9, any::<u64>(), 0.0f64..2.0, -1.0f64..2.0).prop_map(
        |(depth, branching, p, seed, spread, skill)| WorldParams {
            depth,
            branching,
            p_valid_child: p,
            seed,
            policy_spread: spread,
            policy_skill: skill,
            ..Default::default()
        },
    )
}

/// All prefixes (root excluded) of every full path.
fn all_prefixes(sols: &[(PartialPath, bool)]) -> Vec<PartialPath> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (p, _) in sols {
        for len in 1..=p.len() {
            let pre = p.prefix(len);
            if seen.insert(pre.key()) {
                out.push(pre);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn validity_matches_enumeration(params in small_world(), id in 0u64..1000) {
        let q = sample_problem(&params, 1, Split::Test, id).unwrap();
        let sols = enumerate_solutions(&q, 10_000).unwrap();
        prop_assert!(sols.iter().any(|(_, ok)| *ok), "every problem has a solution");
        for pre in all_prefixes(&sols) {
            let reachable = sols.iter().any(|(p, ok)| *ok && p.prefix(pre.len()).key() == pre.key());
            prop_assert_eq!(is_valid_prefix(&q, &pre).unwrap(), reachable);
        }
    }

    #[test]
    fn value_is_the_policy_weighted_success(params in small_world(), id in 0u64..1000, temp in 0.3f64..3.0) {
        let q = sample_problem(&params, 1, Split::Test, id).unwrap();
        let policy = GenerationPolicy { temperature: temp, ..Default::default() };
        let sols = enumerate_solutions(&q, 10_000).unwrap();
        // Independent recomputation: the probability of a full path is the
        // product of the child policies along it.
        let world = &q.world;
        let mut expect = 0.0;
        for (path, ok) in &sols {
            let mut node = world.root();
            let mut prob = 1.0;
            for t in path.tokens() {
                prob *= world.child_policy(node, temp)[t.0 as usize];
                node = world.child(node, t).unwrap();
            }
            if *ok {
                expect += prob;
            }
        }
        let v = true_value(&q, &PartialPath::root(), &policy).unwrap();
        prop_assert!((v - expect).abs() < 1e-9, "{v} vs {expect}");
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn prefix_values_in_unit_interval_and_zero_iff_invalid(params in small_world(), id in 0u64..1000) {
        let q = sample_problem(&params, 2, Split::Train, id).unwrap();
        let policy = GenerationPolicy::default();
        let sols = enumerate_solutions(&q, 10_000).unwrap();
        for pre in all_prefixes(&sols) {
            let v = true_value(&q, &pre, &policy).unwrap();
            let valid = is_valid_prefix(&q, &pre).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v > 0.0, valid);
        }
    }

    #[test]
    fn generation_is_deterministic(params in small_world(), id in 0u64..1000) {
        let a = sample_problem(&params, 1, Split::Test, id).unwrap();
        let b = sample_problem(&params, 1, Split::Test, id).unwrap();
        let sa = enumerate_solutions(&a, 10_000).unwrap();
        let sb = enumerate_solutions(&b, 10_000).unwrap();
        prop_assert_eq!(sa.len(), sb.len());
        for ((pa, oa), (pb, ob)) in sa.iter().zip(&sb) {
            prop_assert_eq!(pa, pb);
            prop_assert_eq!(oa, ob);
            prop_assert_eq!(pa.steps().last().unwrap().features.to_vec(), pb.steps().last().unwrap().features.to_vec());
        }
    }

    #[test]
    fn step_correctness_is_child_validity(params in small_world(), id in 0u64..1000) {
        let q = sample_problem(&params, 1, Split::Test, id).unwrap();
        for (path, _) in enumerate_solutions(&q, 10_000).unwrap() {
            for len in 1..=path.len() {
                let parent = path.prefix(len - 1);
                let step = path.steps()[len - 1].clone();
                prop_assert_eq!(step_correct(&q, &parent, &step).unwrap(), is_valid_prefix(&q, &path.prefix(len)).unwrap());
            }
        }
    }
}

#[test]
fn sparsity_target_is_met_on_average() {
    let params = WorldParams { depth: 3, branching: 4, sparsity_target: Some(0.1), ..Default::default() };
    let p = params.resolved_p_valid().unwrap();
    assert!((expected_sparsity(p, 4, 3) - 0.1).abs() < 1e-6);
    let n = 400;
    let mut frac = 0.0;
    for id in 0..n {
        let q = sample_problem(&params, 1, Split::Test, id).unwrap();
        let sols = enumerate_solutions(&q, 1000).unwrap();
        frac += sols.iter().filter(|(_, ok)| *ok).count() as f64 / sols.len() as f64;
    }
    frac /= n as f64;
    // Per-problem fraction has std below 0.1; 4 standard errors.
    assert!((frac - 0.1).abs() < 4.0 * 0.1 / (n as f64).sqrt(), "mean valid-leaf fraction {frac}");
}

#[test]
fn infeasible_sparsity_is_degenerate() {
    let params = WorldParams { depth: 3, branching: 4, sparsity_target: Some(1e-4), ..Default::default() };
    assert!(matches!(sample_problem(&params, 1, Split::Test, 0), Err(Error::Degenerate { .. })));
}

#[test]
fn ood_shift_moves_features_not_truth() {
    let base = WorldParams { depth: 3, branching: 3, seed: 5, ..Default::default() };
    let shifted = WorldParams { ood_shift: 1.0, ..base.clone() };
    let a = sample_problem(&base, 4, Split::Test, 9).unwrap();
    let b = sample_problem(&shifted, 4, Split::Test, 9).unwrap();
    let sa = enumerate_solutions(&a, 100).unwrap();
    let sb = enumerate_solutions(&b, 100).unwrap();
    let policy = GenerationPolicy::default();
    assert_eq!(true_value(&a, &PartialPath::root(), &policy).unwrap(), true_value(&b, &PartialPath::root(), &policy).unwrap());
    let mut moved = false;
    for ((pa, oa), (pb, ob)) in sa.iter().zip(&sb) {
        assert_eq!(oa, ob);
        assert_eq!(pa.key(), pb.key());
        moved |= pa.steps()[0].features != pb.steps()[0].features;
    }
    assert!(moved);
    // The train split of a shifted preset is unshifted.
    let ta = sample_problem(&base, 4, Split::Train, 9).unwrap();
    let tb = sample_problem(&shifted, 4, Split::Train, 9).unwrap();
    assert_eq!(ta.world.direction(), tb.world.direction());
}
