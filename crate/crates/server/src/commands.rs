//! The offline pipeline stages as standalone steps. Each stage reads the
//! previous stage's JSON so runs can be inspected and resumed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use apprentice_core::dsl::{compile, DslDocument};
use apprentice_core::eval::{
    align, labels_from_dsl, report, segmentation_accuracy, IntentLabel, LabeledUtterance, MetricsTable,
};
use apprentice_core::gateway::{LiveConfig, LiveGateway, LlmGateway, MockGateway, MockScript};
use apprentice_core::ingestion::{load_config, CodeArtifact, ExpertConfig, FetchPolicy, TranscriptSentence};
use apprentice_core::knowledge::{KnowledgeItem, Rejection};
use apprentice_core::orchestrator::EventEnvelope;
use apprentice_core::pipeline::{self, load_inputs};
use apprentice_core::planner::SegmentPlan;
use apprentice_core::replay::{replay, ReplayReport};
use apprentice_core::segmentation::{segment_video, SegmentLabel, SegmentationRun, VideoSegment};
use apprentice_core::student::StudentModel;
use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Mock when a script is given, otherwise the live backend (optionally
/// configured from a JSON file).
pub fn gateway(mock: Option<&Path>, live: Option<&Path>) -> Result<Arc<dyn LlmGateway>> {
    if let Some(script) = mock {
        let script = MockScript::load(script).with_context(|| format!("loading mock script {}", script.display()))?;
        return Ok(Arc::new(MockGateway::new(script)));
    }
    let config: LiveConfig = match live {
        Some(path) => read_json(path)?,
        None => LiveConfig::default(),
    };
    Ok(Arc::new(LiveGateway::new(config)))
}

/// The config plus the directory its relative sources resolve against.
pub struct Inputs {
    pub config: ExpertConfig,
    pub base: Option<PathBuf>,
    pub fetch: FetchPolicy,
}

impl Inputs {
    pub fn load(config: &Path, offline: bool) -> Result<Self> {
        Ok(Self {
            config: load_config(config)?,
            base: config.parent().map(Path::to_path_buf),
            fetch: FetchPolicy { offline },
        })
    }

    pub fn transcript_and_code(&self) -> Result<(Vec<TranscriptSentence>, CodeArtifact)> {
        Ok(load_inputs(&self.config, self.base.as_deref(), self.fetch)?)
    }
}

pub fn segment(inputs: &Inputs, transcript: &[TranscriptSentence], gw: &dyn LlmGateway) -> Result<SegmentationRun> {
    inputs.config.validate()?;
    Ok(segment_video(transcript, &inputs.config, gw)?)
}

/// Segments as `segment` writes them, either the exported labels or the
/// full per-segment records.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SegmentsFile {
    Full(Vec<VideoSegment>),
    Labels(Vec<SegmentLabel>),
}

impl SegmentsFile {
    /// Labels carry no sentence range; it is recovered from the transcript by
    /// taking every sentence whose midpoint falls inside the segment.
    pub fn into_segments(self, transcript: &[TranscriptSentence]) -> Result<Vec<VideoSegment>> {
        let labels = match self {
            SegmentsFile::Full(segments) => return Ok(segments),
            SegmentsFile::Labels(labels) => labels,
        };
        labels
            .into_iter()
            .map(|label| {
                let inside: Vec<usize> = transcript
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| {
                        let mid = s.start_s + s.duration_s / 2.0;
                        mid >= label.start && mid <= label.end
                    })
                    .map(|(i, _)| i)
                    .collect();
                let (Some(&first), Some(&last)) = (inside.first(), inside.last()) else {
                    bail!(
                        "segment `{}` at {}..{} covers no transcript sentence",
                        label.category,
                        label.start,
                        label.end
                    );
                };
                Ok(VideoSegment {
                    goal_name: label.category,
                    start_s: label.start,
                    end_s: label.end,
                    summary: String::new(),
                    sentence_range: [first, last],
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentKnowledge {
    pub segment: VideoSegment,
    pub items: Vec<KnowledgeItem>,
}

/// Knowledge keyed by segment key, in segment order.
pub type KnowledgeFile = IndexMap<String, SegmentKnowledge>;

pub fn extract(
    inputs: &Inputs,
    transcript: &[TranscriptSentence],
    code: &CodeArtifact,
    segments: Vec<VideoSegment>,
    gw: &dyn LlmGateway,
) -> Result<(KnowledgeFile, Vec<Rejection>)> {
    let (items, rejections) = pipeline::extract_knowledge(&inputs.config, transcript, &segments, code, gw)?;
    let mut out = KnowledgeFile::new();
    for segment in segments {
        let key = segment.key();
        let mine = items.iter().filter(|k| k.segment_ref == key).cloned().collect();
        out.insert(key, SegmentKnowledge { segment, items: mine });
    }
    Ok((out, rejections))
}

fn flatten(knowledge: &KnowledgeFile) -> (Vec<VideoSegment>, Vec<KnowledgeItem>) {
    let segments = knowledge.values().map(|k| k.segment.clone()).collect();
    let items = knowledge.values().flat_map(|k| k.items.iter().cloned()).collect();
    (segments, items)
}

pub fn plan(
    config: &ExpertConfig,
    knowledge: &KnowledgeFile,
    student: &StudentModel,
    gw: &dyn LlmGateway,
) -> Vec<SegmentPlan> {
    let (segments, items) = flatten(knowledge);
    let mastery = pipeline::mastery_map(&items, student, gw);
    pipeline::plan_all(config, &segments, &items, &mastery)
}

pub fn compile_dsl(config: &ExpertConfig, plans: &[SegmentPlan], knowledge: &KnowledgeFile) -> Result<DslDocument> {
    let (segments, items) = flatten(knowledge);
    let flat: Vec<_> = plans.iter().flat_map(|p| p.plans.iter().cloned()).collect();
    Ok(compile(&flat, &items, &segments, &config.action_set)?)
}

/// Reads a stored student, or starts a fresh one named after the file.
pub fn load_student(path: Option<&Path>, config: &ExpertConfig) -> Result<StudentModel> {
    match path {
        Some(p) if p.exists() => read_json(p),
        Some(p) => {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("student");
            Ok(StudentModel::new(id, config.options.similarity_threshold))
        }
        None => Ok(StudentModel::new("student", config.options.similarity_threshold)),
    }
}

#[derive(Debug, Serialize)]
pub struct ReplayOutput {
    pub report: ReplayReport,
    pub model: StudentModel,
}

pub fn replay_session(
    inputs: &Inputs,
    events: &[EventEnvelope],
    mut model: StudentModel,
    gw: &dyn LlmGateway,
) -> Result<ReplayOutput> {
    let (transcript, code) = inputs.transcript_and_code()?;
    let (mut session, _) = pipeline::create_session("replay", &inputs.config, &transcript, &code, &model, gw)?;
    let report = replay(&mut session, &mut model, gw, events)?;
    Ok(ReplayOutput { report, model })
}

pub fn eval_segmentation(predicted: &[SegmentLabel], gold: &[SegmentLabel], margin_s: f64) -> serde_json::Value {
    serde_json::json!({
        "accuracy": segmentation_accuracy(predicted, gold, margin_s),
        "margin_s": margin_s,
        "labeled": gold.len(),
        "predicted": predicted.len(),
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct IdLabel {
    pub utterance_id: String,
    pub label: IntentLabel,
}

/// Accepted shapes for an intent label file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LabelFile {
    /// A DSL document; every action becomes one utterance.
    Dsl(DslDocument),
    Pairs(Vec<LabeledUtterance>),
    Labels(Vec<IdLabel>),
}

impl LabelFile {
    /// `predicted` side of paired files, or the labels themselves.
    fn labels(self, annotated_side: bool) -> Vec<(String, IntentLabel)> {
        match self {
            LabelFile::Dsl(doc) => labels_from_dsl(&doc),
            LabelFile::Pairs(pairs) => pairs
                .into_iter()
                .map(|u| (u.utterance_id, if annotated_side { u.annotated } else { u.predicted }))
                .collect(),
            LabelFile::Labels(labels) => labels.into_iter().map(|l| (l.utterance_id, l.label)).collect(),
        }
    }
}

pub fn eval_intents(name: &str, predicted: LabelFile, gold: LabelFile) -> Result<MetricsTable> {
    let pairs = align(&predicted.labels(false), &gold.labels(true))?;
    Ok(report(&[(name.to_string(), pairs)])?)
}
