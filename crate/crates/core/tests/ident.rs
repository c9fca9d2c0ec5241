mod common;

use phd_core::ident::{assign_ids, mean_target_count, IdentityTracker};
use proptest::prelude::*;

use common::oracles::{coasting_sweep, crafted_identity_cases, est, greedy_agreement, track, GATE};

#[test]
fn crafted_branch_cardinalities() {
    crafted_identity_cases().unwrap();
    assert!(assign_ids(&[], &[est(1.0, 0.0)], GATE, 1.0).unwrap().is_empty());
}

#[test]
fn coasting_is_noise_free_transition() {
    coasting_sweep(5, 200).unwrap();
}

#[test]
fn greedy_agrees_with_exhaustive_on_separated_scenes() {
    let agree = greedy_agreement(11, 1000);
    assert!(agree >= 950, "agreement {agree}/1000");
}

#[test]
fn session_mints_and_keeps_ids() {
    let mut id = IdentityTracker::new(GATE, 1.0).unwrap();
    let first = id.step(&[est(10.0, 0.0), est(100.0, 0.0)]).unwrap();
    assert_eq!(first.iter().map(|t| t.id).collect::<Vec<_>>(), vec![1, 2]);
    for k in 1..20 {
        let out = id.step(&[est(100.0 + k as f64, 0.0), est(10.0 - k as f64 * 0.5, 0.0)]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].id, 1);
        assert!((out[0].state.azimuth - (10.0 - k as f64 * 0.5)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn output_matches_previous_cardinality_and_ids(
        prev in prop::collection::vec((0.0..360.0f64, -60.0..60.0f64), 0..6),
        cur in prop::collection::vec((0.0..360.0f64, -60.0..60.0f64), 0..8),
        gate in 1.0..50.0f64,
    ) {
        let prev: Vec<_> = prev.iter().enumerate().map(|(i, &(a, e))| track(i as u32 + 1, a, e)).collect();
        let cur: Vec<_> = cur.iter().map(|&(a, e)| est(a, e)).collect();
        let out = assign_ids(&prev, &cur, gate, 1.0).unwrap();
        prop_assert_eq!(out.len(), prev.len());
        for (o, p) in out.iter().zip(&prev) {
            prop_assert_eq!(o.id, p.id);
        }
        prop_assert_eq!(&out, &assign_ids(&prev, &cur, gate, 1.0).unwrap());
    }

    #[test]
    fn wider_gate_never_coasts_more(
        prev in prop::collection::vec((0.0..360.0f64, -60.0..60.0f64), 1..6),
        cur in prop::collection::vec((0.0..360.0f64, -60.0..60.0f64), 0..6),
        gate in 1.0..40.0f64,
        extra in 0.0..40.0f64,
    ) {
        prop_assume!(cur.len() < prev.len());
        let prev: Vec<_> = prev.iter().enumerate().map(|(i, &(a, e))| track(i as u32 + 1, a, e)).collect();
        let cur: Vec<_> = cur.iter().map(|&(a, e)| est(a, e)).collect();
        let coasted = |g| assign_ids(&prev, &cur, g, 1.0).unwrap().iter().filter(|t| t.coasting).count();
        prop_assert!(coasted(gate + extra) <= coasted(gate));
    }

    #[test]
    fn mean_count_is_rounded_mean(history in prop::collection::vec(0usize..10, 1..50)) {
        let mean = history.iter().sum::<usize>() as f64 / history.len() as f64;
        let got = mean_target_count(&history).unwrap() as f64;
        prop_assert!(got - mean <= 0.5 && mean - got < 0.5);
    }
}
