#![allow(dead_code)]

pub mod crash;
pub mod oracles;

use std::collections::HashMap;
use std::path::PathBuf;

use apprentice_core::dsl::segment_key;
use apprentice_core::gateway::{LlmGateway, MockGateway, MockScript};
use apprentice_core::ingestion::{
    parse_code, parse_config, parse_transcript, CodeArtifact, ExpertConfig, TranscriptSentence,
};
use apprentice_core::knowledge::{KnowledgeDomain, KnowledgeItem, KnowledgeKind};
use apprentice_core::orchestrator::{EventEnvelope, InboundEvent, OutboundType, Phase, Session};
use apprentice_core::replay::{ReplayReport, TraceEntry};
use apprentice_core::segmentation::{SegmentLabel, VideoSegment};
use apprentice_core::student::{
    BktParams, KnowledgeComponentState, Observation, Outcome, StudentModel, DEFAULT_SIMILARITY_THRESHOLD,
};

/// Anchor the EDA student is seeded with, at `SEEDED_MASTERY`.
pub const SEEDED_ANCHOR: &str = "use 'fct_reorder'";
pub const SEEDED_MASTERY: f64 = 0.5;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_dir().join(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub struct Eda {
    pub config: ExpertConfig,
    pub transcript: Vec<TranscriptSentence>,
    pub code: CodeArtifact,
}

pub fn eda() -> Eda {
    let config = parse_config(&fixture("eda_config.json")).expect("config");
    let transcript = parse_transcript(&fixture("eda_transcript.json")).expect("transcript");
    let code = parse_code(&fixture("eda_code.Rmd"), config.video_type).expect("code");
    Eda {
        config,
        transcript,
        code,
    }
}

pub fn eda_gateway() -> MockGateway {
    MockGateway::new(MockScript::from_json(&fixture("eda_mock_script.json")).expect("mock script"))
}

pub fn eda_events() -> Vec<EventEnvelope> {
    serde_json::from_str(&fixture("eda_events.json")).expect("events")
}

pub fn eda_gold() -> Vec<SegmentLabel> {
    serde_json::from_str(&fixture("eda_gold_segments.json")).expect("gold segments")
}

/// A student who half knows `fct_reorder`, so one item gets practice.
pub fn seeded_student(id: &str, gateway: &dyn LlmGateway) -> StudentModel {
    let mut model = StudentModel::new(id, DEFAULT_SIMILARITY_THRESHOLD);
    let params = BktParams {
        p_mastery: SEEDED_MASTERY,
        ..BktParams::default()
    };
    let embedding = gateway.embed(SEEDED_ANCHOR).expect("mock embeddings");
    model
        .components
        .push(KnowledgeComponentState::new(SEEDED_ANCHOR, embedding, &params));
    model
}

pub const APPENDIX_GOAL: &str = "Visualize the data";

/// The four knowledge items behind the published "Visualize the data - 509"
/// document, in order.
pub fn appendix_items() -> Vec<KnowledgeItem> {
    let key = segment_key(APPENDIX_GOAL, 509.4);
    let texts = [
        (KnowledgeKind::Declarative, "The task is visualizing the distribution of median earnings across major categories using a box plot and enhancing readability by reordering categories and formatting axis labels.", "visualizing the distribution of median earnings across major categories"),
        (KnowledgeKind::Procedural, "To achieve a clear visualization of categorical data distributions, one must use 'geom_boxplot' on 'ggplot' in R because it effectively displays the spread and central tendency of the data.", "use 'geom_boxplot'"),
        (KnowledgeKind::Procedural, "To achieve an ordered factor level based on the 'Median', one must use 'fct_reorder' on 'Major_category', because it facilitates easier comparison across categories by sorting them from lowest to highest median earnings.", "use 'fct_reorder'"),
        (KnowledgeKind::Procedural, "To achieve improved readability of axis labels, one must use 'coord_flip' and 'scale_y_continuous' with 'dollar_format' on the plot because flipping the coordinates helps in reading long category names and dollar formatting makes the earnings data more interpretable.", "use 'coord_flip' and 'scale_y_continuous' with 'dollar_format'"),
    ];
    texts
        .iter()
        .enumerate()
        .map(|(i, (kind, text, anchor))| KnowledgeItem {
            id: format!("{key}#k{i}"),
            segment_ref: key.clone(),
            goal: APPENDIX_GOAL.into(),
            kind: *kind,
            domain: KnowledgeDomain::ProgrammingRelated,
            text: (*text).into(),
            anchor_span: (*anchor).into(),
            order_index: i,
        })
        .collect()
}

pub fn appendix_segment() -> VideoSegment {
    VideoSegment {
        goal_name: APPENDIX_GOAL.into(),
        start_s: 509.4,
        end_s: 535.9,
        summary: "David compares median earnings across major categories.".into(),
        sentence_range: [19, 23],
    }
}

/// The student of the published example: the second item is half known.
pub fn appendix_mastery() -> HashMap<String, f64> {
    HashMap::from([(appendix_items()[1].id.clone(), 0.5)])
}

/// Closed-form BKT step at the default parameters.
pub fn bkt_step(p: f64, correct: bool) -> f64 {
    let (s, g, t) = (0.1, 0.2, 0.1);
    let post = if correct {
        p * (1.0 - s) / (p * (1.0 - s) + (1.0 - p) * g)
    } else {
        p * s / (p * s + (1.0 - p) * (1.0 - g))
    };
    post + (1.0 - post) * t
}

/// Folds observations over the seeded student, one component per anchor.
pub fn composed_oracle(observed: &[(String, Outcome)]) -> Vec<(String, f64, u32)> {
    let mut out: Vec<(String, f64, u32)> = vec![(SEEDED_ANCHOR.to_string(), SEEDED_MASTERY, 0)];
    for (anchor, outcome) in observed {
        let correct = *outcome == Outcome::Correct;
        match out.iter_mut().find(|(a, _, _)| a == anchor) {
            Some(entry) => {
                entry.1 = bkt_step(entry.1, correct);
                entry.2 += 1;
            }
            None => out.push((anchor.clone(), bkt_step(0.1, correct), 1)),
        }
    }
    out
}

/// Anchors behind each observation, in order.
pub fn observed_anchors(session: &Session, observations: &[Observation]) -> Vec<(String, Outcome)> {
    observations
        .iter()
        .map(|o| {
            (
                session.context.knowledge[&o.knowledge_id].anchor_span.clone(),
                o.outcome,
            )
        })
        .collect()
}

/// Compares a model to the oracle to 1e-12.
pub fn model_matches(model: &StudentModel, oracle: &[(String, f64, u32)]) -> Result<(), String> {
    if model.components.len() != oracle.len() {
        return Err(format!(
            "{} components, oracle has {}",
            model.components.len(),
            oracle.len()
        ));
    }
    for (anchor, p, attempts) in oracle {
        let c = model
            .components
            .iter()
            .find(|c| &c.anchor_text == anchor)
            .ok_or_else(|| format!("no component for `{anchor}`"))?;
        if (c.p_mastery - p).abs() > 1e-12 || c.attempts != *attempts {
            return Err(format!(
                "`{anchor}`: {} after {} vs oracle {p} after {attempts}",
                c.p_mastery, c.attempts
            ));
        }
    }
    Ok(())
}

/// Structural checks on a replay trace: the queue only shrinks, nothing is
/// sent while the session waits, and only graded replies move the model.
pub fn check_trace(report: &ReplayReport) -> Result<(), String> {
    if !report.reached_done() {
        return Err(format!("ended in {:?}", report.final_phase));
    }
    let mut queue = report.initial_queue_len;
    let mut updates = 0;
    for (i, entry) in report.trace.iter().enumerate() {
        let next_is_event = matches!(report.trace.get(i + 1), None | Some(TraceEntry::Event { .. }));
        match entry {
            TraceEntry::Sent {
                message,
                from_phase,
                queue_len,
                model_updates,
            } => {
                if matches!(from_phase, Phase::AwaitingResponse | Phase::AwaitingVideo) {
                    return Err(format!("entry {i}: sent while {from_phase:?}"));
                }
                let waits = message.need_response || message.kind == OutboundType::PlayClip;
                if waits && !next_is_event {
                    return Err(format!("entry {i}: message {} did not block", message.seq));
                }
                if *queue_len > queue || *model_updates != updates {
                    return Err(format!("entry {i}: queue or model moved on a send"));
                }
                queue = *queue_len;
            }
            TraceEntry::Event {
                event,
                observation,
                queue_len,
                model_updates,
                ..
            } => {
                if *queue_len > queue {
                    return Err(format!("entry {i}: queue grew"));
                }
                queue = *queue_len;
                let graded_signal = matches!(
                    event.event,
                    InboundEvent::StudentResponse(_) | InboundEvent::CodeExecution { .. }
                );
                let step = model_updates - updates;
                if step != usize::from(observation.is_some()) || (step == 1 && !graded_signal) {
                    return Err(format!("entry {i}: {step} model updates on {}", event.event.name()));
                }
                updates = *model_updates;
            }
        }
    }
    if updates != report.observations.len() {
        return Err("update count differs from observations".into());
    }
    Ok(())
}
