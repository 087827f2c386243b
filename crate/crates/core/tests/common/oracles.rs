//! Independent restatements of the derived values, shared by the unit-style
//! integration tests and the acceptance run.

use std::collections::HashMap;

use apprentice_core::dsl::{DslAction, DslDocument, DslEntry, Interaction};
use apprentice_core::eval::{intent_of, IntentLabel, LabeledUtterance};
use apprentice_core::knowledge::{KnowledgeDomain, KnowledgeKind};
use apprentice_core::planner::{plan_item, ItemFacts, MentorMove};
use apprentice_core::student::{bkt_update, BktError, BktParams, KnowledgeComponentState, Outcome, Thresholds};
use indexmap::IndexMap;
use proptest::prelude::*;
use MentorMove::*;

/// One BKT step written out by hand. `None` when the evidence has zero
/// probability under the parameters.
pub fn bkt_closed_form(p: f64, t: f64, s: f64, g: f64, correct: bool) -> Option<f64> {
    let (num, denom) = if correct {
        (p * (1.0 - s), p * (1.0 - s) + (1.0 - p) * g)
    } else {
        (p * s, p * s + (1.0 - p) * (1.0 - g))
    };
    if denom == 0.0 {
        return None;
    }
    let post = num / denom;
    Some(post + (1.0 - post) * t)
}

pub fn bkt_state(p: f64, t: f64, s: f64, g: f64) -> KnowledgeComponentState {
    KnowledgeComponentState::new(
        "k",
        vec![1.0],
        &BktParams {
            p_mastery: p,
            p_transit: t,
            p_slip: s,
            p_guess: g,
        },
    )
}

/// Every (p, t, s, g) on the 0.1 grid, both outcomes. Returns the number of
/// cases compared.
pub fn bkt_grid_check() -> Result<usize, String> {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut checked = 0;
    for &p in &grid {
        for &t in &grid {
            for &s in &grid {
                for &g in &grid {
                    for correct in [true, false] {
                        let outcome = if correct { Outcome::Correct } else { Outcome::Incorrect };
                        let got = bkt_update(&bkt_state(p, t, s, g), outcome);
                        let case = format!("p={p} t={t} s={s} g={g} correct={correct}");
                        match (bkt_closed_form(p, t, s, g, correct), got) {
                            (None, Err(BktError::Degenerate { .. })) => {}
                            (Some(want), Ok(up)) if (up.p_mastery - want).abs() <= 1e-12 => {}
                            (want, got) => return Err(format!("{case}: {got:?} vs {want:?}")),
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(checked)
}

const PREFERENCE: [MentorMove; 4] = [Scaffolding, Coaching, Articulation, Modeling];

fn least_used(candidates: &[MentorMove], usage: &HashMap<MentorMove, u32>) -> MentorMove {
    let rank = |m| PREFERENCE.iter().position(|x| *x == m).unwrap();
    let mut best = candidates[0];
    for &mv in candidates {
        let (u, b) = (
            usage.get(&mv).copied().unwrap_or(0),
            usage.get(&best).copied().unwrap_or(0),
        );
        if u < b || (u == b && rank(mv) < rank(best)) {
            best = mv;
        }
    }
    best
}

/// The move rules restated from scratch, at the default cut points.
pub fn expected_moves(
    domain: KnowledgeDomain,
    kind: KnowledgeKind,
    p: f64,
    index: usize,
    last: bool,
    usage: &HashMap<MentorMove, u32>,
) -> Vec<MentorMove> {
    let first = index <= 1;
    let fading = p > 0.5;
    let without_scaffold = |c: Vec<MentorMove>| -> Vec<MentorMove> {
        if fading {
            c.into_iter().filter(|m| *m != Scaffolding).collect()
        } else {
            c
        }
    };
    let programming = domain == KnowledgeDomain::ProgrammingRelated;
    let mut moves = if programming && kind == KnowledgeKind::Procedural {
        if p < 0.3 {
            vec![Scaffolding]
        } else if p <= 0.7 {
            vec![Scaffolding, Coaching]
        } else if first {
            vec![Modeling, Coaching]
        } else {
            vec![Coaching]
        }
    } else if first {
        vec![least_used(&without_scaffold(vec![Scaffolding, Modeling]), usage)]
    } else if programming {
        vec![least_used(&without_scaffold(vec![Scaffolding, Articulation]), usage)]
    } else {
        match least_used(&without_scaffold(vec![Scaffolding, Coaching, Articulation]), usage) {
            Coaching => vec![Coaching, Reflection],
            other => vec![other],
        }
    };
    if programming && last && !moves.contains(&Reflection) {
        moves.push(Reflection);
    }
    moves
}

/// All move histories up to `depth` long.
pub fn histories(depth: usize) -> Vec<Vec<MentorMove>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for h in &frontier {
            for mv in MentorMove::ALL {
                let mut longer: Vec<MentorMove> = h.clone();
                longer.push(mv);
                next.push(longer);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// p in {0, 0.05, .., 1} x index {0, 1, 2, 5} x histories of depth <= 4 x
/// every domain, kind and last-in-segment flag.
pub fn planner_exhaustive_check() -> Result<usize, String> {
    let thresholds = Thresholds::default();
    let mut checked = 0;
    for h in histories(4) {
        let mut usage: HashMap<MentorMove, u32> = HashMap::new();
        for mv in &h {
            *usage.entry(*mv).or_default() += 1;
        }
        for step in 0..=20 {
            let p = step as f64 / 20.0;
            for index in [0, 1, 2, 5] {
                for domain in [KnowledgeDomain::ConceptRelated, KnowledgeDomain::ProgrammingRelated] {
                    for kind in [KnowledgeKind::Declarative, KnowledgeKind::Procedural] {
                        for last in [false, true] {
                            let facts = ItemFacts {
                                kind,
                                domain,
                                appearance_index: index,
                                mastery: p,
                                last_in_segment: last,
                            };
                            let (got, _) = plan_item(&facts, |mv| usage.get(&mv).copied().unwrap_or(0), &thresholds);
                            let want = expected_moves(domain, kind, p, index, last, &usage);
                            if got != want {
                                return Err(format!(
                                    "{domain:?}/{kind:?} p={p} index={index} last={last} history={h:?}: {got:?} vs {want:?}"
                                ));
                            }
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(checked)
}

pub fn method_label(method: MentorMove) -> IntentLabel {
    IntentLabel {
        knowledge: KnowledgeKind::Procedural,
        method,
        interaction: Interaction::PlainText,
        intent: intent_of(method, Interaction::PlainText),
    }
}

/// Ten utterances: eight agree, one Coaching read as Scaffolding and one
/// Scaffolding read as Coaching.
pub fn hand_corpus() -> Vec<LabeledUtterance> {
    let truth = [
        Scaffolding,
        Scaffolding,
        Scaffolding,
        Scaffolding,
        Coaching,
        Coaching,
        Coaching,
        Articulation,
        Articulation,
        Reflection,
    ];
    let mut annotated = truth;
    annotated[0] = Coaching;
    annotated[4] = Scaffolding;
    truth
        .iter()
        .zip(annotated)
        .enumerate()
        .map(|(i, (t, a))| LabeledUtterance {
            utterance_id: format!("u{i}"),
            predicted: method_label(*t),
            annotated: method_label(a),
        })
        .collect()
}

/// Macro mean of the hand corpus: (3/4 + 2/3 + 1 + 1) / 4.
pub const HAND_MACRO: f64 = 41.0 / 48.0;

pub fn any_label() -> impl Strategy<Value = IntentLabel> {
    (
        prop::sample::select(vec![KnowledgeKind::Declarative, KnowledgeKind::Procedural]),
        prop::sample::select(MentorMove::ALL.to_vec()),
        prop::sample::select(Interaction::ALL.to_vec()),
    )
        .prop_map(|(knowledge, method, interaction)| IntentLabel {
            knowledge,
            method,
            interaction,
            intent: intent_of(method, interaction),
        })
}

pub fn any_corpus() -> impl Strategy<Value = Vec<LabeledUtterance>> {
    prop::collection::vec((any_label(), any_label()), 1..40).prop_map(|pairs| {
        pairs
            .into_iter()
            .enumerate()
            .map(|(i, (p, a))| LabeledUtterance {
                utterance_id: i.to_string(),
                predicted: p,
                annotated: a,
            })
            .collect()
    })
}

fn dsl_text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 ,.'_-]{0,40}",
        "\\PC{0,30}",
        Just("quote \" backslash \\ tab \t newline \n {knowledge}".to_string()),
    ]
}

fn dsl_action() -> impl Strategy<Value = DslAction> {
    (
        prop::sample::select(MentorMove::ALL.to_vec()),
        dsl_text(),
        dsl_text(),
        prop::sample::select(Interaction::ALL.to_vec()),
        prop::collection::vec("[a-z-]{1,12}", 0..3),
        any::<bool>(),
    )
        .prop_map(
            |(method, action, prompt, interaction, parameters, need_response)| DslAction {
                method,
                action,
                prompt,
                interaction,
                parameters,
                need_response,
            },
        )
}

pub fn any_dsl_document() -> impl Strategy<Value = DslDocument> {
    let entry = (dsl_text(), prop::collection::vec(dsl_action(), 0..4))
        .prop_map(|(knowledge, actions)| DslEntry { knowledge, actions });
    prop::collection::vec(
        ("[A-Za-z ]{1,20}", 0u32..2000, prop::collection::vec(entry, 0..4)),
        0..4,
    )
    .prop_map(|segs| {
        let mut segments = IndexMap::new();
        for (goal, start, entries) in segs {
            segments.insert(format!("{goal} - {start}"), entries);
        }
        DslDocument { segments }
    })
}
