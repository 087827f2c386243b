mod common;

use apprentice_core::gateway::MockGateway;
use apprentice_core::student::{
    bkt_update, posterior, transit, BktError, BktParams, ObserveResult, Outcome, StudentModel,
};
use common::oracles::{bkt_closed_form, bkt_state as state};
use proptest::prelude::*;

fn oracle(p: f64, t: f64, s: f64, g: f64, correct: bool) -> f64 {
    bkt_closed_form(p, t, s, g, correct).expect("non-degenerate")
}

#[test]
fn defaults_from_a_fresh_component() {
    let s = state(0.1, 0.1, 0.1, 0.2);
    let up = bkt_update(&s, Outcome::Correct).unwrap();
    // 0.09 / (0.09 + 0.18) = 1/3, then 1/3 + 2/3 * 0.1 = 0.4
    assert!((up.p_mastery - 0.4).abs() < 1e-12);
    assert_eq!(up.attempts, 1);
    let down = bkt_update(&s, Outcome::Incorrect).unwrap();
    // 0.01 / 0.73, then + (1 - that) * 0.1
    let post = 0.01 / 0.73;
    assert!((down.p_mastery - (post + (1.0 - post) * 0.1)).abs() < 1e-12);
}

#[test]
fn grid_matches_closed_form() {
    assert_eq!(common::oracles::bkt_grid_check().unwrap(), 11usize.pow(4) * 2);
}

#[test]
fn out_of_range_parameters_are_rejected() {
    assert!(matches!(
        posterior(1.5, 0.1, 0.2, Outcome::Correct),
        Err(BktError::InvalidProbability { name: "p_mastery", .. })
    ));
    assert!(posterior(0.5, f64::NAN, 0.2, Outcome::Correct).is_err());
    assert!(bkt_update(&state(0.5, -0.1, 0.1, 0.2), Outcome::Correct).is_err());
}

#[test]
fn similar_anchor_merges_and_distinct_anchor_creates() {
    let gw = MockGateway::empty();
    let defaults = BktParams::default();
    let mut model = StudentModel::new("s", 0.8);
    let first = model
        .observe("use 'geom_boxplot' on 'ggplot'", Outcome::Correct, &gw, &defaults)
        .unwrap();
    assert_eq!(first, ObserveResult::Created(0));
    let again = model
        .observe("use 'geom_boxplot' on 'ggplot'", Outcome::Correct, &gw, &defaults)
        .unwrap();
    assert_eq!(again, ObserveResult::Updated(0));
    let near = model.observe("use 'geom_boxplot' on  'ggplot' ", Outcome::Incorrect, &gw, &defaults);
    assert_eq!(near.unwrap(), ObserveResult::Updated(0));
    let other = model
        .observe(
            "examine the histogram for extreme values",
            Outcome::Correct,
            &gw,
            &defaults,
        )
        .unwrap();
    assert_eq!(other, ObserveResult::Created(1));
    assert_eq!(model.total_attempts(), 4);
    // Three updates composed in order on the first component.
    let want = oracle(
        oracle(oracle(0.1, 0.1, 0.1, 0.2, true), 0.1, 0.1, 0.2, true),
        0.1,
        0.1,
        0.2,
        false,
    );
    assert!((model.components[0].p_mastery - want).abs() < 1e-12);
}

#[test]
fn embedding_outage_defers_then_replays_in_order() {
    let gw = MockGateway::empty();
    let defaults = BktParams::default();
    let mut model = StudentModel::new("s", 0.8);
    gw.set_embeddings_down(true);
    assert_eq!(
        model
            .observe("use 'fct_reorder'", Outcome::Correct, &gw, &defaults)
            .unwrap(),
        ObserveResult::Deferred
    );
    assert_eq!(
        model
            .observe("use 'fct_reorder'", Outcome::Incorrect, &gw, &defaults)
            .unwrap(),
        ObserveResult::Deferred
    );
    assert!(model.components.is_empty());
    assert_eq!(model.pending.len(), 2);
    gw.set_embeddings_down(false);
    assert_eq!(model.flush_pending(&gw, &defaults).unwrap(), 0);
    let want = oracle(oracle(0.1, 0.1, 0.1, 0.2, true), 0.1, 0.1, 0.2, false);
    assert!((model.components[0].p_mastery - want).abs() < 1e-12);
}

#[test]
fn mastery_lookup_uses_similarity() {
    let gw = MockGateway::empty();
    let model = common::seeded_student("s", &gw);
    assert_eq!(
        model.mastery_of(common::SEEDED_ANCHOR, &gw),
        Some(common::SEEDED_MASTERY)
    );
    assert_eq!(model.mastery_of("check the Sample_size column", &gw), None);
}

proptest! {
    #[test]
    fn update_stays_a_probability(p in 0.0..=1.0f64, t in 0.0..=1.0f64, s in 0.0..0.5f64, g in 0.0..0.5f64, correct: bool) {
        let outcome = if correct { Outcome::Correct } else { Outcome::Incorrect };
        if let Ok(next) = bkt_update(&state(p, t, s, g), outcome) {
            prop_assert!((0.0..=1.0).contains(&next.p_mastery));
            prop_assert!((next.p_mastery - oracle(p, t, s, g, correct)).abs() <= 1e-12);
        }
    }

    #[test]
    fn correct_never_lowers_mastery_below_incorrect(p in 0.01..0.99f64, s in 0.01..0.49f64, g in 0.01..0.49f64) {
        let up = posterior(p, s, g, Outcome::Correct).unwrap();
        let down = posterior(p, s, g, Outcome::Incorrect).unwrap();
        prop_assert!(up >= down);
        prop_assert!(transit(up, 0.1) >= up);
    }
}
