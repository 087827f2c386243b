//! Offline preparation: segments, knowledge, plans and the DSL document,
//! then a ready-to-run [`Session`].

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{build_queue, compile, knowledge_queue_id, DslDocument, DslError};
use crate::gateway::LlmGateway;
use crate::ingestion::{
    load_code, load_transcript, CodeArtifact, ExpertConfig, FetchPolicy, IngestError, Source, TranscriptSentence,
    VideoType,
};
use crate::knowledge::{
    summarize_knowledge, KnowledgeDomain, KnowledgeError, KnowledgeItem, Rejection, SegmentContext,
};
use crate::orchestrator::{Session, SessionContext};
use crate::planner::{plan_segment, MoveHistory, SegmentPlan};
use crate::segmentation::{segment_video, SegmentationError, SegmentationRun, VideoSegment};
use crate::student::StudentModel;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Dsl(#[from] DslError),
}

/// Everything the pipeline produced, kept for inspection and the CLI.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub segmentation: SegmentationRun,
    pub knowledge: Vec<KnowledgeItem>,
    pub rejections: Vec<Rejection>,
    pub plans: Vec<SegmentPlan>,
    pub dsl: DslDocument,
}

impl Artifacts {
    pub fn warnings(&self) -> &[String] {
        &self.segmentation.warnings
    }
}

/// Resolves the transcript and code named by the config. Relative paths are
/// taken from `base`; an empty code source yields no cells.
pub fn load_inputs(
    config: &ExpertConfig,
    base: Option<&Path>,
    policy: FetchPolicy,
) -> Result<(Vec<TranscriptSentence>, CodeArtifact), IngestError> {
    let transcript = load_transcript(&Source::parse(&config.transcript_source, base), policy)?;
    let code = if config.code_source.trim().is_empty() {
        if config.video_type.includes_programming() {
            return Err(IngestError::EmptyCode);
        }
        CodeArtifact::default()
    } else {
        load_code(&Source::parse(&config.code_source, base), config.video_type, policy)?
    };
    Ok((transcript, code))
}

fn segment_domain(config: &ExpertConfig, goal: &str) -> Option<KnowledgeDomain> {
    if let Some(d) = config.goal(goal).and_then(|g| g.domain) {
        return Some(d);
    }
    match config.video_type {
        VideoType::Mixed => None,
        other => other.domains().first().copied(),
    }
}

/// Knowledge for every segment, in segment order.
pub fn extract_knowledge(
    config: &ExpertConfig,
    transcript: &[TranscriptSentence],
    segments: &[VideoSegment],
    code: &CodeArtifact,
    gateway: &dyn LlmGateway,
) -> Result<(Vec<KnowledgeItem>, Vec<Rejection>), PipelineError> {
    let mut items = Vec::new();
    let mut rejections = Vec::new();
    let code = (!code.is_empty()).then_some(code);
    for segment in segments {
        let key = segment.key();
        let text = segment.text(transcript);
        let ctx = SegmentContext {
            segment_ref: &key,
            goal: &segment.goal_name,
            text: &text,
            domain: segment_domain(config, &segment.goal_name),
            video_type_label: config.video_type.label(),
        };
        let outcome = summarize_knowledge(&ctx, code, config.options.max_knowledge_items, gateway)?;
        items.extend(outcome.items);
        rejections.extend(outcome.rejections);
    }
    Ok((items, rejections))
}

/// Current mastery per knowledge id, read from the student model.
pub fn mastery_map(
    knowledge: &[KnowledgeItem],
    model: &StudentModel,
    gateway: &dyn LlmGateway,
) -> HashMap<String, f64> {
    knowledge
        .iter()
        .filter_map(|k| model.mastery_of(&k.anchor_span, gateway).map(|p| (k.id.clone(), p)))
        .collect()
}

/// Plans every segment with one move history shared across the video.
pub fn plan_all(
    config: &ExpertConfig,
    segments: &[VideoSegment],
    knowledge: &[KnowledgeItem],
    mastery: &HashMap<String, f64>,
) -> Vec<SegmentPlan> {
    let mut history = MoveHistory::default();
    segments
        .iter()
        .map(|s| {
            plan_segment(
                &s.key(),
                knowledge,
                mastery,
                &mut history,
                &config.thresholds,
                config.bkt_defaults.p_mastery,
                config.options.skip_mastered,
            )
        })
        .collect()
}

/// Runs the whole offline pipeline for one student.
pub fn prepare(
    config: &ExpertConfig,
    transcript: &[TranscriptSentence],
    code: &CodeArtifact,
    model: &StudentModel,
    gateway: &dyn LlmGateway,
) -> Result<Artifacts, PipelineError> {
    config.validate()?;
    let segmentation = segment_video(transcript, config, gateway)?;
    let (knowledge, rejections) = extract_knowledge(config, transcript, &segmentation.segments, code, gateway)?;
    let mastery = mastery_map(&knowledge, model, gateway);
    let plans = plan_all(config, &segmentation.segments, &knowledge, &mastery);
    let flat: Vec<_> = plans.iter().flat_map(|p| p.plans.iter().cloned()).collect();
    let dsl = compile(&flat, &knowledge, &segmentation.segments, &config.action_set)?;
    Ok(Artifacts {
        segmentation,
        knowledge,
        rejections,
        plans,
        dsl,
    })
}

/// Keys knowledge by the queue id each DSL entry gets.
pub fn knowledge_by_queue_id(dsl: &DslDocument, knowledge: &[KnowledgeItem]) -> IndexMap<String, KnowledgeItem> {
    let mut out = IndexMap::new();
    for (key, entries) in &dsl.segments {
        for (i, entry) in entries.iter().enumerate() {
            if let Some(item) = knowledge
                .iter()
                .find(|k| &k.segment_ref == key && k.labeled_text() == entry.knowledge)
            {
                out.insert(knowledge_queue_id(key, i), item.clone());
            }
        }
    }
    out
}

pub fn session_context(config: &ExpertConfig, code: &CodeArtifact, artifacts: &Artifacts) -> SessionContext {
    SessionContext {
        topic: config.topic.clone(),
        video_type: config.video_type.label().to_string(),
        kernel_language: config.kernel_language.clone(),
        knowledge: knowledge_by_queue_id(&artifacts.dsl, &artifacts.knowledge),
        segments: artifacts
            .segmentation
            .segments
            .iter()
            .map(|s| (s.key(), s.clone()))
            .collect(),
        code: code.clone(),
        dsl: artifacts.dsl.clone(),
        bkt_defaults: config.bkt_defaults,
        seed: config.options.session_seed,
        history_budget: config.options.history_token_budget,
    }
}

/// Prepares the artifacts and opens a session over the compiled queue.
pub fn create_session(
    session_id: &str,
    config: &ExpertConfig,
    transcript: &[TranscriptSentence],
    code: &CodeArtifact,
    model: &StudentModel,
    gateway: &dyn LlmGateway,
) -> Result<(Session, Artifacts), PipelineError> {
    let artifacts = prepare(config, transcript, code, model, gateway)?;
    let context = session_context(config, code, &artifacts);
    let queue = build_queue(&artifacts.dsl);
    Ok((
        Session::new(session_id, model.student_id.clone(), context, queue),
        artifacts,
    ))
}
