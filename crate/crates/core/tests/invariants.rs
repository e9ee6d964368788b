mod common;

use common::invariants::{self, CASES};

fn assert_all_cases(result: Result<u32, String>) {
    let ran = result.unwrap_or_else(|e| panic!("{e}"));
    // Rejected inputs are regenerated, so every case runs.
    assert!(ran >= CASES, "only {ran} cases ran");
}

#[test]
fn ranking_is_invariant_to_positive_affine_maps() {
    assert_all_cases(invariants::affine_invariance_of_ranking());
}

#[test]
fn two_hot_is_antisymmetric() {
    assert_all_cases(invariants::two_hot_antisymmetry());
}

#[test]
fn routing_ignores_uniform_bias_shift() {
    assert_all_cases(invariants::bias_translation_routing_invariance());
}

#[test]
fn allocation_ratios_are_conserved() {
    assert_all_cases(invariants::allocation_ratio_conservation());
}

#[test]
fn swap_is_idempotent() {
    assert_all_cases(invariants::swap_idempotence());
}
