mod common;

use common::invariants;
use proptest::prelude::*;

const DEFAULT_STEPS: usize = 1000;

fn assert_all(steps: usize, seed: u64) {
    for (name, check) in invariants::all(steps, seed) {
        if let Err(msg) = check {
            panic!("{name} at {steps} steps: {msg}");
        }
    }
}

#[test]
fn suite_default_grid() {
    assert_all(DEFAULT_STEPS, 1);
}

#[test]
fn suite_doubled_grid() {
    assert_all(2 * DEFAULT_STEPS, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn riccati_symmetric_any_case(seed in any::<u64>(), doubled in any::<bool>()) {
        let steps = if doubled { 2 * DEFAULT_STEPS } else { DEFAULT_STEPS };
        prop_assert!(invariants::riccati_symmetric(steps, seed).is_ok());
    }

    #[test]
    fn derivative_free_any_case(seed in any::<u64>(), doubled in any::<bool>()) {
        let steps = if doubled { 2 * DEFAULT_STEPS } else { DEFAULT_STEPS };
        let r = invariants::derivative_free_equivalence(steps, seed);
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn control_shrinkage_any_case(seed in any::<u64>()) {
        let r = invariants::control_shrinkage(DEFAULT_STEPS, seed);
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn partition_of_unity_any_basis(k in 0usize..30, points in 50usize..400) {
        let r = invariants::partition_of_unity(k, points);
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}
