mod common;

use common::*;
use decentsim::algorithms::AlgorithmKind;
use proptest::prelude::*;

fn ok(r: Check) -> Result<(), TestCaseError> {
    r.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn combination_matrices_are_valid(k in 2usize..12, p in 0.4f64..1.0, seed in any::<u64>()) {
        ok(combination_matrix(k, p, seed))?;
    }

    #[test]
    fn laplacian_spectrum_reflects_connectivity(k in 2usize..10, density in 0.05f64..0.9, seed in any::<u64>()) {
        ok(laplacian_spectrum(k, density, seed))?;
    }

    #[test]
    fn variation_matches_double_sum(k in 1usize..=8, m in 1usize..=4, seed in any::<u64>()) {
        ok(variation_brute_force(k, m, seed))?;
    }

    #[test]
    fn perron_vector_is_uniform(k in 2usize..10, p in 0.4f64..1.0, seed in any::<u64>()) {
        ok(perron_uniform(k, p, seed))?;
    }

    #[test]
    fn disagreement_vanishes_only_at_consensus(k in 1usize..8, m in 1usize..4, seed in any::<u64>()) {
        ok(disagreement_zero_iff_consensus(k, m, seed))?;
    }

    #[test]
    fn consensus_contracts_with_zero_gradients(
        id in prop::sample::select(vec!["consensus_innovation", "diffusion_atc", "diffusion_cta"]),
        k in 3usize..10,
        p in 0.4f64..1.0,
        seed in any::<u64>(),
    ) {
        ok(consensus_contraction(id, k, p, seed))?;
    }

    #[test]
    fn steps_ignore_agent_order(
        id in prop::sample::select(AlgorithmKind::IDS.to_vec()),
        seed in any::<u64>(),
    ) {
        ok(order_invariance(id, seed))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn gradients_match_finite_differences(kind in prop::sample::select(PROBLEM_KINDS.to_vec()), seed in any::<u64>()) {
        ok(finite_differences(kind, seed))?;
    }

    #[test]
    fn optimum_is_weighted_stationary(kind in prop::sample::select(vec!["quadratic", "logistic"]), seed in any::<u64>()) {
        ok(optimum_is_stationary(kind, seed))?;
    }

    #[test]
    fn trackers_conserve_gradient_mean(id in prop::sample::select(vec!["diging", "aug_dgm"]), seed in any::<u64>()) {
        ok(tracker_conservation(id, seed))?;
    }

    #[test]
    fn exact_diffusion_first_step_is_atc(seed in any::<u64>()) {
        ok(exact_diffusion_starts_as_atc(seed))?;
    }

    #[test]
    fn regret_accumulates_excess_risk(seed in any::<u64>()) {
        ok(regret_is_running_sum(seed))?;
    }

    #[test]
    fn gradient_norm_vanishes_at_optimum(seed in any::<u64>()) {
        ok(gradient_vanishes_at_optimum(seed))?;
    }

    #[test]
    fn heterogeneity_increases_with_spread(seed in any::<u64>()) {
        ok(heterogeneity_grows(seed))?;
    }
}

// Statistical checks run at fixed seeds so the suite stays deterministic.

#[test]
fn mixing_rate_orders_topologies() {
    for k in 3..12 {
        mixing_rate_order(k).unwrap();
    }
}

#[test]
fn link_failure_mean_matches_expectation() {
    for (keep, seed) in [(0.6, 11), (0.9, 12)] {
        link_failure_expectation(keep, seed).unwrap();
    }
}

#[test]
fn sample_gradients_are_unbiased() {
    for kind in PROBLEM_KINDS {
        sample_gradients_unbiased(kind, 21).unwrap();
    }
}

#[test]
fn sample_variance_within_bound() {
    for kind in ["quadratic", "logistic"] {
        sample_variance_bounded(kind, 22).unwrap();
    }
}

#[test]
fn oracles_are_unbiased() {
    for config in oracle_configs() {
        oracle_unbiased(config, 31).unwrap();
    }
}

#[test]
fn oracle_variance_within_bound() {
    for config in oracle_configs() {
        oracle_variance_bounded(config, 32).unwrap();
    }
}

#[test]
fn minibatch_variance_halves() {
    minibatch_halving(33).unwrap();
}

#[test]
fn oracles_are_deterministic() {
    for config in oracle_configs() {
        oracle_deterministic(config, 34).unwrap();
    }
}

#[test]
fn federated_kinds_match_reference() {
    for period in [1, 5] {
        federated_matches_reference(period, 41).unwrap();
    }
}

#[test]
fn exact_methods_remove_bias() {
    exactness(2024).unwrap();
}

#[test]
fn artifacts_are_byte_reproducible() {
    byte_reproducible().unwrap();
}

#[test]
fn predicted_rows_carry_errors() {
    rows_carry_errors().unwrap();
}

#[test]
fn presets_use_separate_directories() {
    presets_isolated().unwrap();
}
