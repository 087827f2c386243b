//! Loading and validation of transcripts, expert code and the expert
//! configuration file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dsl::ActionTemplate;
use crate::knowledge::KnowledgeDomain;
use crate::planner::MentorMove;
use crate::student::{BktParams, Thresholds};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source `{location}` is unreachable: {reason}")]
    Unreachable { location: String, reason: String },
    #[error("remote source `{0}` refused: offline mode")]
    RemoteDisabled(String),
    #[error("transcript entry {index}: {reason}")]
    MalformedEntry { index: usize, reason: String },
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("code source is empty but the video is programming related")]
    EmptyCode,
}

/// One caption entry of the video transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSentence {
    pub index: usize,
    pub text: String,
    pub start_s: f64,
    pub duration_s: f64,
}

impl TranscriptSentence {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoType {
    ConceptRelated,
    ProgrammingRelated,
    Mixed,
}

impl VideoType {
    pub fn domains(self) -> &'static [KnowledgeDomain] {
        match self {
            VideoType::ConceptRelated => &[KnowledgeDomain::ConceptRelated],
            VideoType::ProgrammingRelated => &[KnowledgeDomain::ProgrammingRelated],
            VideoType::Mixed => &[KnowledgeDomain::ConceptRelated, KnowledgeDomain::ProgrammingRelated],
        }
    }

    pub fn includes_programming(self) -> bool {
        !matches!(self, VideoType::ConceptRelated)
    }

    pub fn label(self) -> &'static str {
        match self {
            VideoType::ConceptRelated => "concept-related",
            VideoType::ProgrammingRelated => "programming-related",
            VideoType::Mixed => "programming and concept",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningGoalDef {
    pub name: String,
    /// One-shot definitional example handed to the summarizer.
    pub description: String,
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub order_hint: u32,
    /// Pins the knowledge domain of this goal's segments in a mixed video.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<KnowledgeDomain>,
}

fn default_true() -> bool {
    true
}

/// Tunables that the pipeline reads from the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub max_knowledge_items: usize,
    pub similarity_threshold: f64,
    pub retrieve_floor: f64,
    /// Pre-split long transcripts into windows of this many seconds.
    pub chunk_window_s: Option<f64>,
    pub history_token_budget: usize,
    pub session_seed: u64,
    /// Drop knowledge the student already masters from the plan.
    pub skip_mastered: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            max_knowledge_items: 4,
            similarity_threshold: 0.80,
            retrieve_floor: 0.60,
            chunk_window_s: None,
            history_token_budget: 3000,
            session_seed: 0,
            skip_mastered: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub topic: String,
    pub video_type: VideoType,
    pub kernel_language: String,
    pub transcript_source: String,
    #[serde(default)]
    pub code_source: String,
    pub goals: Vec<LearningGoalDef>,
    pub action_set: Vec<ActionTemplate>,
    #[serde(default)]
    pub bkt_defaults: BktParams,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub options: PipelineOptions,
}

impl ExpertConfig {
    pub fn enabled_goals(&self) -> impl Iterator<Item = &LearningGoalDef> {
        self.goals.iter().filter(|g| g.enabled)
    }

    pub fn goal(&self, name: &str) -> Option<&LearningGoalDef> {
        self.goals.iter().find(|g| g.name == name)
    }

    /// Every rule violation, not just the first.
    pub fn validate(&self) -> Result<(), IngestError> {
        let mut problems = Vec::new();

        let mut names = HashSet::new();
        for goal in &self.goals {
            if !names.insert(goal.name.as_str()) {
                problems.push(format!("duplicate goal name `{}`", goal.name));
            }
            if goal.enabled && goal.description.trim().is_empty() {
                problems.push(format!("enabled goal `{}` has no description", goal.name));
            }
        }
        if self.enabled_goals().next().is_none() {
            problems.push("at least one learning goal must be enabled".into());
        }

        let b = &self.bkt_defaults;
        for (name, p) in [
            ("p_mastery", b.p_mastery),
            ("p_transit", b.p_transit),
            ("p_slip", b.p_slip),
            ("p_guess", b.p_guess),
        ] {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!("bkt_defaults.{name} = {p} is not a probability"));
            }
        }
        if b.p_slip + b.p_guess >= 1.0 {
            problems.push("bkt_defaults: p_slip + p_guess must be below 1".into());
        }

        let t = &self.thresholds;
        for (name, p) in [("weak", t.weak), ("fade", t.fade), ("strong", t.strong)] {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!("thresholds.{name} = {p} is not a probability"));
            }
        }
        if !(t.weak < t.fade && t.fade < t.strong) {
            problems.push(format!(
                "thresholds must satisfy weak < fade < strong (got {} / {} / {})",
                t.weak, t.fade, t.strong
            ));
        }

        let o = &self.options;
        if o.max_knowledge_items == 0 {
            problems.push("options.max_knowledge_items must be positive".into());
        }
        for (name, v) in [
            ("similarity_threshold", o.similarity_threshold),
            ("retrieve_floor", o.retrieve_floor),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                problems.push(format!("options.{name} = {v} is not a cosine value"));
            }
        }
        if let Some(w) = o.chunk_window_s {
            if w.is_nan() || w <= 0.0 {
                problems.push("options.chunk_window_s must be positive".into());
            }
        }

        if self.action_set.is_empty() {
            problems.push("action_set is empty".into());
        }
        for template in &self.action_set {
            if let Err(e) = template.validate() {
                problems.push(e.to_string());
            }
        }
        for &domain in self.required_domains().iter() {
            for mv in MentorMove::EXPERT_AUTHORED {
                if !self.action_set.iter().any(|t| t.method == mv && t.domain == domain) {
                    problems.push(format!("action_set has no template for ({mv}, {})", domain.label()));
                }
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(IngestError::Config(problems))
        }
    }

    fn required_domains(&self) -> Vec<KnowledgeDomain> {
        let mut out: Vec<KnowledgeDomain> = Vec::new();
        for goal in self.enabled_goals() {
            let domains: Vec<KnowledgeDomain> = match goal.domain {
                Some(d) => vec![d],
                None => self.video_type.domains().to_vec(),
            };
            for d in domains {
                if !out.contains(&d) {
                    out.push(d);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeCell {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub cells: Vec<CodeCell>,
}

impl CodeArtifact {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn lines(&self) -> impl Iterator<Item = (usize, &str)> {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.text.lines().map(move |l| (i, l)))
    }
}

/// Where a transcript or code file comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Local(PathBuf),
    Remote(String),
}

impl Source {
    /// Relative local paths are resolved against `base` when given.
    pub fn parse(raw: &str, base: Option<&Path>) -> Source {
        let raw = raw.trim();
        if raw.starts_with("http://") || raw.starts_with("https://") {
            return Source::Remote(raw.to_string());
        }
        let path = PathBuf::from(raw.strip_prefix("file://").unwrap_or(raw));
        match base {
            Some(base) if path.is_relative() => Source::Local(base.join(path)),
            _ => Source::Local(path),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FetchPolicy {
    pub offline: bool,
}

pub fn read_source(source: &Source, policy: FetchPolicy) -> Result<String, IngestError> {
    match source {
        Source::Local(path) => fs::read_to_string(path).map_err(|e| IngestError::Unreachable {
            location: path.display().to_string(),
            reason: e.to_string(),
        }),
        Source::Remote(url) if policy.offline => Err(IngestError::RemoteDisabled(url.clone())),
        Source::Remote(url) => {
            let unreachable = |reason: String| IngestError::Unreachable {
                location: url.clone(),
                reason,
            };
            let mut response = ureq::get(url.as_str()).call().map_err(|e| unreachable(e.to_string()))?;
            response
                .body_mut()
                .read_to_string()
                .map_err(|e| unreachable(e.to_string()))
        }
    }
}

/// Parses a caption export: a JSON array of `{text, start, duration}`.
pub fn parse_transcript(payload: &str) -> Result<Vec<TranscriptSentence>, IngestError> {
    let raw: Value = serde_json::from_str(payload).map_err(|e| IngestError::Json(e.to_string()))?;
    let Value::Array(entries) = raw else {
        return Err(IngestError::Json("transcript must be a JSON array".into()));
    };

    let mut sentences = Vec::with_capacity(entries.len());
    for (index, entry) in entries.iter().enumerate() {
        let bad = |reason: &str| IngestError::MalformedEntry {
            index,
            reason: reason.to_string(),
        };
        let obj = entry.as_object().ok_or_else(|| bad("not an object"))?;
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing string field `text`"))?;
        let start = obj
            .get("start")
            .and_then(Value::as_f64)
            .ok_or_else(|| bad("missing numeric field `start`"))?;
        let duration = obj
            .get("duration")
            .and_then(Value::as_f64)
            .ok_or_else(|| bad("missing numeric field `duration`"))?;
        if !start.is_finite() || start < 0.0 {
            return Err(bad("`start` must be a non-negative number"));
        }
        if !duration.is_finite() || duration <= 0.0 {
            return Err(bad("`duration` must be positive"));
        }
        sentences.push(TranscriptSentence {
            index,
            text: text.to_string(),
            start_s: start,
            duration_s: duration,
        });
    }

    sentences.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    for (i, s) in sentences.iter_mut().enumerate() {
        s.index = i;
    }
    Ok(sentences)
}

pub fn load_transcript(source: &Source, policy: FetchPolicy) -> Result<Vec<TranscriptSentence>, IngestError> {
    parse_transcript(&read_source(source, policy)?)
}

pub fn parse_config(payload: &str) -> Result<ExpertConfig, IngestError> {
    let config: ExpertConfig = serde_json::from_str(payload).map_err(|e| IngestError::Config(vec![e.to_string()]))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExpertConfig, IngestError> {
    let payload = fs::read_to_string(path).map_err(|e| IngestError::Unreachable {
        location: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_config(&payload)
}

/// Splits code into cells. Fenced chunks (```` ``` ````) or `# %%` markers
/// win when present; otherwise blank lines separate cells.
pub fn parse_code(text: &str, video_type: VideoType) -> Result<CodeArtifact, IngestError> {
    let cells = if text.lines().any(|l| l.trim_start().starts_with("```")) {
        split_fenced(text)
    } else if text.lines().any(is_percent_marker) {
        split_percent(text)
    } else {
        split_blank_lines(text)
    };
    if cells.is_empty() && video_type.includes_programming() {
        return Err(IngestError::EmptyCode);
    }
    Ok(CodeArtifact { cells })
}

pub fn load_code(source: &Source, video_type: VideoType, policy: FetchPolicy) -> Result<CodeArtifact, IngestError> {
    parse_code(&read_source(source, policy)?, video_type)
}

fn is_percent_marker(line: &str) -> bool {
    line.trim_start().starts_with("# %%")
}

fn push_cell(cells: &mut Vec<CodeCell>, lines: &[&str], label: Option<String>) {
    let text = lines.join("\n");
    let text = text.trim_matches('\n');
    if !text.trim().is_empty() {
        cells.push(CodeCell {
            text: text.to_string(),
            label,
        });
    }
}

fn split_fenced(text: &str) -> Vec<CodeCell> {
    let mut cells = Vec::new();
    let mut current: Option<(Option<String>, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(info) = trimmed.strip_prefix("```") {
            match current.take() {
                Some((label, body)) => push_cell(&mut cells, &body, label),
                None => current = Some((fence_label(info), Vec::new())),
            }
        } else if let Some((_, body)) = current.as_mut() {
            body.push(line);
        }
    }
    if let Some((label, body)) = current {
        push_cell(&mut cells, &body, label);
    }
    cells
}

/// `{r label, echo=FALSE}` -> `label`.
fn fence_label(info: &str) -> Option<String> {
    let inner = info.trim().trim_start_matches('{').trim_end_matches('}');
    let mut parts = inner.split(',').next()?.split_whitespace();
    parts.next()?;
    parts.next().filter(|l| !l.contains('=')).map(str::to_string)
}

fn split_percent(text: &str) -> Vec<CodeCell> {
    let mut cells = Vec::new();
    let mut label = None;
    let mut body: Vec<&str> = Vec::new();
    for line in text.lines() {
        if is_percent_marker(line) {
            push_cell(&mut cells, &body, label.take());
            body.clear();
            let rest = line.trim_start().trim_start_matches("# %%").trim();
            label = (!rest.is_empty()).then(|| rest.to_string());
        } else {
            body.push(line);
        }
    }
    push_cell(&mut cells, &body, label);
    cells
}

fn split_blank_lines(text: &str) -> Vec<CodeCell> {
    let mut cells = Vec::new();
    let mut body: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            push_cell(&mut cells, &body, None);
            body.clear();
        } else {
            body.push(line);
        }
    }
    push_cell(&mut cells, &body, None);
    cells
}
