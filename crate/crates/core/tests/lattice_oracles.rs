use proptest::prelude::*;

use robstop_core::divergence::initial_bracket;
use robstop_core::dual::exact_policy_martingale;
use robstop_core::lattice::{
    discretize_rule, dyadic_exercise_mask, enumerate_stopping_times, find_saddle, fixtures,
    kernel_distribution, kernel_objective, minimax_check, pathwise_dual_check, robust_value_lattice,
    robust_value_masked, shifted_rewards, snell_envelope, tail_integral_objective, EmpiricalDistribution,
    LatticeRecord, MinimaxConfig, DEFAULT_ENUMERATION_CAP,
};
use robstop_core::{DivergenceSpec, Error, Lattice, ShiftSearchConfig, StoppingRule};

fn specs() -> [DivergenceSpec; 4] {
    [
        DivergenceSpec::AVaR(0.4),
        DivergenceSpec::Entropic(0.2),
        DivergenceSpec::Power(3.0),
        DivergenceSpec::RiskNeutral,
    ]
}

fn spec_strategy() -> impl Strategy<Value = DivergenceSpec> {
    prop_oneof![
        (0.05f64..1.0).prop_map(DivergenceSpec::AVaR),
        (0.01f64..2.0).prop_map(DivergenceSpec::Entropic),
        (1.5f64..4.0).prop_map(DivergenceSpec::Power),
        Just(DivergenceSpec::RiskNeutral),
    ]
}

fn shift_grid(y: &[f64]) -> Vec<f64> {
    let (lo, hi) = initial_bracket(y);
    (0..41).map(|i| lo + (hi - lo) * i as f64 / 40.0).collect()
}

#[test]
fn dp_matches_enumeration_for_transformed_rewards() {
    for l in fixtures::enumerable_random_trees(30, 100, 4, 3) {
        let y = l.payoffs();
        for spec in specs() {
            let z = shifted_rewards(&y, spec, -1.5);
            let dp = snell_envelope(&l, &z).unwrap();
            let (best, rule) = enumerate_stopping_times(&l, &z, DEFAULT_ENUMERATION_CAP).unwrap();
            assert!((dp.root_value() - best).abs() <= 1e-12, "{} {spec}", l.name);
            assert!((rule.expected_reward(&l, &z) - best).abs() <= 1e-12);
        }
    }
}

#[test]
fn optimal_martingale_makes_every_path_maximum_equal_the_value() {
    for l in fixtures::enumerable_random_trees(20, 500, 4, 3) {
        let y = l.payoffs();
        let s = snell_envelope(&l, &y).unwrap();
        let d = pathwise_dual_check(&l, &y, &s.martingale, s.root_value());
        assert!(d.max_deviation <= 1e-12, "{}", l.name);
    }
}

#[test]
fn policy_martingale_gives_an_upper_bound_and_is_exact_at_the_optimum() {
    for l in fixtures::enumerable_random_trees(20, 900, 4, 3) {
        let z = l.payoffs();
        let s = snell_envelope(&l, &z).unwrap();
        let v0 = s.root_value();
        let leaf_reach: Vec<f64> = l.paths().iter().map(|p| l.reach()[*p.last().unwrap()]).collect();
        let dual = |rule: &StoppingRule| {
            let m = exact_policy_martingale(&l, &z, rule);
            pathwise_dual_check(&l, &z, &m, v0)
                .path_maxima
                .iter()
                .zip(&leaf_reach)
                .map(|(v, p)| v * p)
                .sum::<f64>()
        };
        let optimal = dual(&s.optimal_rule(&l, &z));
        assert!((optimal - v0).abs() <= 1e-12, "{}: {optimal} vs {v0}", l.name);
        for j in 0..=l.depth() {
            let rule = StoppingRule::at_level(&l, j);
            let lower = rule.expected_reward(&l, &z);
            let upper = dual(&rule);
            assert!(lower <= v0 + 1e-12 && upper >= v0 - 1e-12, "{} level {j}", l.name);
        }
    }
}

#[test]
fn randomized_minimax_closes_on_random_trees() {
    let cfg = MinimaxConfig::default();
    for l in fixtures::enumerable_random_trees(6, 40, 3, 2) {
        let y = l.payoffs();
        for spec in specs() {
            let r = minimax_check(&l, &y, spec, &shift_grid(&y), &cfg).unwrap();
            assert!(r.chain_holds(1e-6), "{} {spec}: {r:?}", l.name);
        }
    }
}

#[test]
fn saddle_exists_on_builtin_fixtures() {
    let cfg = MinimaxConfig::default();
    for l in fixtures::builtin() {
        let y = l.payoffs();
        let spec = DivergenceSpec::AVaR(0.5);
        let saddle = find_saddle(&l, &y, spec, &shift_grid(&y), &cfg).unwrap();
        let (v, _) = robust_value_lattice(&l, &y, spec, &cfg.search).unwrap();
        assert!((saddle.value - v).abs() <= 1e-6, "{}", l.name);
    }
}

#[test]
fn atom_gap_separates_deterministic_from_randomized() {
    let l = fixtures::by_name("atom-gap").unwrap();
    let y = l.payoffs();
    let spec = DivergenceSpec::AVaR(0.5);
    let r = minimax_check(&l, &y, spec, &shift_grid(&y), &MinimaxConfig::default()).unwrap();
    let det = r.sup_inf_deterministic.unwrap();
    assert!(det < r.sup_inf_randomized - 0.5, "{det} vs {}", r.sup_inf_randomized);
}

#[test]
fn dyadic_refinement_increases_the_value_to_the_full_problem() {
    let l = fixtures::by_name("binomial-4").unwrap();
    let y = l.payoffs();
    let search = ShiftSearchConfig::default();
    for spec in specs() {
        let (full, _) = robust_value_lattice(&l, &y, spec, &search).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for m in 0..=3 {
            let mask = dyadic_exercise_mask(l.times(), m).unwrap();
            let (v, _) = robust_value_masked(&l, &y, spec, &search, &mask).unwrap();
            assert!(v >= prev - 1e-9 && v <= full + 1e-9, "{spec} m={m}: {v} after {prev}, full {full}");
            prev = v;
        }
        assert!((prev - full).abs() <= 1e-9, "{spec}");
    }
}

#[test]
fn discretizing_on_the_full_grid_is_the_identity() {
    for l in fixtures::enumerable_random_trees(10, 7, 4, 3) {
        let z = l.payoffs();
        let rule = snell_envelope(&l, &z).unwrap().optimal_rule(&l, &z);
        let all = vec![true; l.depth() + 1];
        let same = discretize_rule(&l, &rule, &all).unwrap();
        assert_eq!(same.stopping_nodes(&l), rule.stopping_nodes(&l));
    }
}

#[test]
fn corrupted_probability_row_names_the_node() {
    let mut rec: LatticeRecord = fixtures::by_name("binomial-4").unwrap().to_record();
    rec.nodes[3].probs[0] += 0.1;
    let json = serde_json::to_string(&rec).unwrap();
    match Lattice::from_json(&json) {
        Err(Error::MalformedLattice { node, .. }) => assert_eq!(node, 3),
        other => panic!("expected a malformed-lattice error, got {other:?}"),
    }
}

#[test]
fn lattice_json_round_trip() {
    for l in fixtures::builtin() {
        let back = Lattice::from_json(&l.to_json().unwrap()).unwrap();
        assert_eq!(back.payoffs(), l.payoffs());
        assert_eq!(back.times(), l.times());
        assert_eq!(back.len(), l.len());
    }
}

#[test]
fn large_tree_hits_the_enumeration_cap_but_dp_runs() {
    let l = fixtures::trinomial_five();
    let y = l.payoffs();
    assert!(matches!(
        enumerate_stopping_times(&l, &y, DEFAULT_ENUMERATION_CAP),
        Err(Error::EnumerationCap { .. })
    ));
    let s = snell_envelope(&l, &y).unwrap();
    let d = pathwise_dual_check(&l, &y, &s.martingale, s.root_value());
    assert!(d.max_deviation <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixing_kernels_mixes_laws_and_objectives(
        seed in 0u64..10_000,
        level in 0usize..5,
        lambda in 0.0f64..=1.0,
        spec in spec_strategy(),
        x in -5.0f64..5.0,
    ) {
        let l = fixtures::random_tree(seed, 4, 3);
        let y = l.payoffs();
        let a = snell_envelope(&l, &y).unwrap().optimal_rule(&l, &y).to_kernel(&l);
        let b = StoppingRule::at_level(&l, level.min(l.depth())).to_kernel(&l);
        let mixed = a.mixture(&b, lambda).unwrap();

        let law = kernel_distribution(&l, &y, &mixed).unwrap();
        let expected = kernel_distribution(&l, &y, &a).unwrap()
            .mix(&kernel_distribution(&l, &y, &b).unwrap(), lambda)
            .unwrap();
        prop_assert_eq!(law.support().len(), expected.support().len());
        for (p, q) in law.probs().iter().zip(expected.probs()) {
            prop_assert!((p - q).abs() <= 1e-15);
        }

        let ja = kernel_objective(&l, &y, &a, spec, x);
        let jb = kernel_objective(&l, &y, &b, spec, x);
        let jm = kernel_objective(&l, &y, &mixed, spec, x);
        let scale = 1.0 + ja.abs().max(jb.abs());
        prop_assert!((jm - (lambda * ja + (1.0 - lambda) * jb)).abs() <= 1e-13 * scale);
    }

    #[test]
    fn tail_integral_equals_direct_expectation(
        points in prop::collection::vec((0.0f64..5.0, 0.05f64..1.0), 1..25),
        spec in spec_strategy(),
        x in -5.0f64..3.0,
    ) {
        let total: f64 = points.iter().map(|p| p.1).sum();
        let support: Vec<f64> = points.iter().map(|p| p.0).collect();
        let probs: Vec<f64> = points.iter().map(|p| p.1 / total).collect();
        let dist = EmpiricalDistribution::new(&support, &probs).unwrap();
        let tail = tail_integral_objective(&dist, spec, x).unwrap();
        let direct = dist.expectation(|v| spec.phi_star(x + v)) - x;
        prop_assert!((tail - direct).abs() <= 1e-10, "{} vs {}", tail, direct);
    }

    #[test]
    fn robust_value_is_bracketed_by_expectation_and_maximum(
        seed in 0u64..10_000,
        alpha in 0.05f64..1.0,
    ) {
        let l = fixtures::random_tree(seed, 3, 3);
        let y = l.payoffs();
        let search = ShiftSearchConfig::default();
        let neutral = snell_envelope(&l, &y).unwrap().root_value();
        let (v, _) = robust_value_lattice(&l, &y, DivergenceSpec::AVaR(alpha), &search).unwrap();
        let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // the minimum can sit on a kink where the slope is 1 / alpha
        prop_assert!(v >= neutral - 1e-6 && v <= top + 1e-6, "{} outside [{}, {}]", v, neutral, top);
    }
}
