//! Mentor-move planning per knowledge item.
//!
//! Three principles drive the choice: global before local (the first item of
//! a segment opens with Scaffolding or Modeling), increasing complexity
//! (mastery bands decide which moves are allowed) and increasing diversity
//! (among allowed moves the least used one for the goal wins).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::knowledge::{KnowledgeDomain, KnowledgeItem, KnowledgeKind};
use crate::student::Thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MentorMove {
    Modeling,
    Coaching,
    Scaffolding,
    Articulation,
    Reflection,
    Exploration,
}

impl MentorMove {
    pub const ALL: [MentorMove; 6] = [
        MentorMove::Modeling,
        MentorMove::Coaching,
        MentorMove::Scaffolding,
        MentorMove::Articulation,
        MentorMove::Reflection,
        MentorMove::Exploration,
    ];

    /// Moves an expert action set must supply templates for. Modeling plays
    /// the video clip and has a built-in template.
    pub const EXPERT_AUTHORED: [MentorMove; 4] = [
        MentorMove::Scaffolding,
        MentorMove::Coaching,
        MentorMove::Articulation,
        MentorMove::Reflection,
    ];

    /// Preference when usage counts tie.
    const TIE_ORDER: [MentorMove; 4] = [
        MentorMove::Scaffolding,
        MentorMove::Coaching,
        MentorMove::Articulation,
        MentorMove::Modeling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MentorMove::Modeling => "Modeling",
            MentorMove::Coaching => "Coaching",
            MentorMove::Scaffolding => "Scaffolding",
            MentorMove::Articulation => "Articulation",
            MentorMove::Reflection => "Reflection",
            MentorMove::Exploration => "Exploration",
        }
    }

    /// One-line definition used in prompts.
    pub fn definition(self) -> &'static str {
        match self {
            MentorMove::Modeling => "demonstrate how an expert performs the task so the student can observe it",
            MentorMove::Coaching => "observe the student's activities and provide guidance and feedback",
            MentorMove::Scaffolding => {
                "support the student while they work through the task, with gradual fading of such support"
            }
            MentorMove::Articulation => "encourage the student to verbalize their knowledge and thinking",
            MentorMove::Reflection => "enable the student to self-assess their own performance",
            MentorMove::Exploration => "let the student pursue their own questions beyond the video",
        }
    }
}

impl fmt::Display for MentorMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RationaleTag {
    GlobalFirst,
    Complexity,
    Diversity,
    FadeOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovePlan {
    pub knowledge_id: String,
    pub moves: Vec<MentorMove>,
    pub rationale_tags: BTreeSet<RationaleTag>,
}

/// Per-goal move usage counts, owned by the caller across segments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MoveHistory {
    pub counts: BTreeMap<String, BTreeMap<MentorMove, u32>>,
}

impl MoveHistory {
    pub fn count(&self, goal: &str, mv: MentorMove) -> u32 {
        self.counts.get(goal).and_then(|m| m.get(&mv)).copied().unwrap_or(0)
    }

    pub fn record(&mut self, goal: &str, mv: MentorMove) {
        *self.counts.entry(goal.to_string()).or_default().entry(mv).or_insert(0) += 1;
    }
}

/// Everything the rules look at for one item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemFacts {
    pub kind: KnowledgeKind,
    pub domain: KnowledgeDomain,
    /// 1-based position inside the segment; 0 is read as 1.
    pub appearance_index: usize,
    pub mastery: f64,
    pub last_in_segment: bool,
}

fn least_used(candidates: &[MentorMove], usage: impl Fn(MentorMove) -> u32) -> MentorMove {
    let rank = |mv: MentorMove| {
        MentorMove::TIE_ORDER
            .iter()
            .position(|m| *m == mv)
            .unwrap_or(usize::MAX)
    };
    *candidates
        .iter()
        .min_by_key(|mv| (usage(**mv), rank(**mv)))
        .expect("candidate set is never empty")
}

/// Moves for a single item. `usage` reports how often the goal already used a move.
pub fn plan_item(
    facts: &ItemFacts,
    usage: impl Fn(MentorMove) -> u32,
    thresholds: &Thresholds,
) -> (Vec<MentorMove>, BTreeSet<RationaleTag>) {
    use MentorMove::*;
    let p = if facts.mastery.is_nan() {
        0.0
    } else {
        facts.mastery.clamp(0.0, 1.0)
    };
    let first = facts.appearance_index <= 1;
    let faded = thresholds.is_faded(p);
    let mut tags = BTreeSet::new();

    let pick = |mut candidates: Vec<MentorMove>, tags: &mut BTreeSet<RationaleTag>| {
        if faded && candidates.len() > 1 && candidates.contains(&Scaffolding) {
            candidates.retain(|m| *m != Scaffolding);
            tags.insert(RationaleTag::FadeOut);
        }
        if candidates.len() > 1 {
            tags.insert(RationaleTag::Diversity);
        }
        least_used(&candidates, &usage)
    };

    let mut moves = match (facts.domain, facts.kind) {
        (KnowledgeDomain::ProgrammingRelated, KnowledgeKind::Procedural) => {
            tags.insert(RationaleTag::Complexity);
            if p < thresholds.weak {
                vec![Scaffolding]
            } else if p <= thresholds.strong {
                vec![Scaffolding, Coaching]
            } else {
                tags.insert(RationaleTag::FadeOut);
                if first {
                    tags.insert(RationaleTag::GlobalFirst);
                    vec![Modeling, Coaching]
                } else {
                    vec![Coaching]
                }
            }
        }
        _ if first => {
            tags.insert(RationaleTag::GlobalFirst);
            vec![pick(vec![Scaffolding, Modeling], &mut tags)]
        }
        (KnowledgeDomain::ProgrammingRelated, KnowledgeKind::Declarative) => {
            tags.insert(RationaleTag::Complexity);
            vec![pick(vec![Scaffolding, Articulation], &mut tags)]
        }
        (KnowledgeDomain::ConceptRelated, _) => {
            tags.insert(RationaleTag::Complexity);
            let mv = pick(vec![Scaffolding, Coaching, Articulation], &mut tags);
            if mv == Coaching {
                vec![Coaching, Reflection]
            } else {
                vec![mv]
            }
        }
    };
    if facts.domain == KnowledgeDomain::ProgrammingRelated
        && facts.last_in_segment
        && !moves.contains(&Reflection)
        && moves.len() < 3
    {
        moves.push(Reflection);
    }
    if first
        && facts.domain == KnowledgeDomain::ProgrammingRelated
        && facts.kind == KnowledgeKind::Procedural
        && matches!(moves.first(), Some(Scaffolding))
    {
        tags.insert(RationaleTag::GlobalFirst);
    }
    (moves, tags)
}

/// Plans an ordered list of items from one or more segments. Unknown ids in
/// `mastery` fall back to `default_mastery`.
pub fn plan(
    knowledge: &[KnowledgeItem],
    mastery: &HashMap<String, f64>,
    history: &mut MoveHistory,
    thresholds: &Thresholds,
    default_mastery: f64,
) -> Vec<MovePlan> {
    let mut out = Vec::with_capacity(knowledge.len());
    for (i, item) in knowledge.iter().enumerate() {
        let last_in_segment = knowledge
            .get(i + 1)
            .is_none_or(|next| next.segment_ref != item.segment_ref);
        let facts = ItemFacts {
            kind: item.kind,
            domain: item.domain,
            appearance_index: item.order_index + 1,
            mastery: mastery.get(&item.id).copied().unwrap_or(default_mastery),
            last_in_segment,
        };
        let (moves, rationale_tags) = plan_item(&facts, |mv| history.count(&item.goal, mv), thresholds);
        for mv in &moves {
            history.record(&item.goal, *mv);
        }
        out.push(MovePlan {
            knowledge_id: item.id.clone(),
            moves,
            rationale_tags,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub segment_ref: String,
    pub plans: Vec<MovePlan>,
    /// Items left out because the student already masters them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

/// Plans one segment's knowledge. With `skip_mastered`, items above the
/// strong threshold are dropped before planning.
pub fn plan_segment(
    segment_ref: &str,
    segment_knowledge: &[KnowledgeItem],
    mastery: &HashMap<String, f64>,
    history: &mut MoveHistory,
    thresholds: &Thresholds,
    default_mastery: f64,
    skip_mastered: bool,
) -> SegmentPlan {
    let mut items: Vec<KnowledgeItem> = segment_knowledge
        .iter()
        .filter(|k| k.segment_ref == segment_ref)
        .cloned()
        .collect();
    items.sort_by_key(|k| k.order_index);
    let mut skipped = Vec::new();
    if skip_mastered {
        items.retain(|k| {
            let p = mastery.get(&k.id).copied().unwrap_or(default_mastery);
            let keep = !thresholds.is_mastered(p);
            if !keep {
                skipped.push(k.id.clone());
            }
            keep
        });
    }
    SegmentPlan {
        segment_ref: segment_ref.to_string(),
        plans: plan(&items, mastery, history, thresholds, default_mastery),
        skipped,
    }
}
