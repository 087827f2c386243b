//! Conversation DSL: expert action templates, the compiled document and the
//! message queue a session dequeues from.
//!
//! A document maps `"{goal} - {floor(start)}"` to a list of entries, one per
//! planned knowledge item; each entry lists one resolved action per planned
//! move. `{knowledge}` is inlined at compile time, every other placeholder is
//! bound when the message is sent.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::json::to_canonical_string;
use crate::knowledge::{KnowledgeDomain, KnowledgeItem, KnowledgeKind};
use crate::planner::{MentorMove, MovePlan};
use crate::segmentation::VideoSegment;

pub const KNOWLEDGE_PARAM: &str = "knowledge";
pub const VIDEO_CLIP_PARAM: &str = "video-clip";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Interaction {
    #[serde(rename = "plain-text", alias = "plain_text")]
    PlainText,
    #[serde(rename = "multiple-choice", alias = "multiple_choice")]
    MultipleChoice,
    #[serde(rename = "fill-in-blanks", alias = "fill_in_blanks")]
    FillInBlanks,
    #[serde(rename = "show-code", alias = "show_code")]
    ShowCode,
    #[serde(rename = "annotation")]
    Annotation,
}

impl Interaction {
    pub const ALL: [Interaction; 5] = [
        Interaction::PlainText,
        Interaction::MultipleChoice,
        Interaction::FillInBlanks,
        Interaction::ShowCode,
        Interaction::Annotation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Interaction::PlainText => "plain-text",
            Interaction::MultipleChoice => "multiple-choice",
            Interaction::FillInBlanks => "fill-in-blanks",
            Interaction::ShowCode => "show-code",
            Interaction::Annotation => "annotation",
        }
    }
}

impl fmt::Display for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("action_set has no template for ({method}, {domain})")]
    Coverage { method: MentorMove, domain: &'static str },
    #[error("template ({method}, {domain}): placeholder `{{{name}}}` is not listed in parameters")]
    UndeclaredPlaceholder {
        method: MentorMove,
        domain: &'static str,
        name: String,
    },
    #[error("plan refers to unknown knowledge `{0}`")]
    UnknownKnowledge(String),
    #[error("knowledge `{knowledge}` refers to unknown segment `{segment}`")]
    UnknownSegment { knowledge: String, segment: String },
    #[error("two segments share the key `{0}`")]
    DuplicateKey(String),
}

/// One expert-authored way to carry out a move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTemplate {
    #[serde(alias = "move")]
    pub method: MentorMove,
    pub domain: KnowledgeDomain,
    /// Restricts the template to one knowledge kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_kind: Option<KnowledgeKind>,
    pub action: String,
    pub interaction: Interaction,
    /// Empty means "Use <interaction> to <definition of the move>".
    #[serde(default)]
    pub prompt: String,
    /// Empty means "whatever the prompt's placeholders name".
    #[serde(default)]
    pub parameters: Vec<String>,
    #[serde(alias = "need-response")]
    pub need_response: bool,
}

impl ActionTemplate {
    pub fn validate(&self) -> Result<(), DslError> {
        if self.parameters.is_empty() {
            return Ok(());
        }
        for name in placeholders(&self.effective_prompt()) {
            if !self.parameters.contains(&name) {
                return Err(DslError::UndeclaredPlaceholder {
                    method: self.method,
                    domain: self.domain.label(),
                    name,
                });
            }
        }
        Ok(())
    }

    pub fn effective_prompt(&self) -> String {
        if self.prompt.trim().is_empty() {
            format!(
                "[Use {} to {} on the {{{KNOWLEDGE_PARAM}}}]",
                self.interaction,
                self.method.definition()
            )
        } else {
            self.prompt.clone()
        }
    }

    pub fn effective_parameters(&self) -> Vec<String> {
        if self.parameters.is_empty() {
            placeholders(&self.effective_prompt())
        } else {
            self.parameters.clone()
        }
    }
}

/// The play-clip template used for Modeling when the expert supplies none.
pub fn builtin_modeling(domain: KnowledgeDomain) -> ActionTemplate {
    ActionTemplate {
        method: MentorMove::Modeling,
        domain,
        knowledge_kind: None,
        action: "Play the video clip in which the expert performs the current step.".into(),
        interaction: Interaction::PlainText,
        prompt: format!("[Play the {{{VIDEO_CLIP_PARAM}}} and invite the student to watch how the expert works]"),
        parameters: vec![VIDEO_CLIP_PARAM.into()],
        need_response: false,
    }
}

/// Placeholder names in order of first appearance.
pub fn placeholders(prompt: &str) -> Vec<String> {
    static R: OnceLock<Regex> = OnceLock::new();
    let re = R.get_or_init(|| Regex::new(r"\{([A-Za-z0-9_-]+)\}").expect("static regex"));
    let mut seen = BTreeSet::new();
    re.captures_iter(prompt)
        .map(|c| c[1].to_string())
        .filter(|name| seen.insert(name.clone()))
        .collect()
}

/// A resolved action as it appears in a DSL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DslAction {
    pub method: MentorMove,
    pub action: String,
    pub prompt: String,
    pub interaction: Interaction,
    pub parameters: Vec<String>,
    #[serde(rename = "need-response", alias = "need_response")]
    pub need_response: bool,
}

/// Picks the template for (move, domain), preferring one written for the
/// item's knowledge kind and, when given, the requested interaction.
pub fn get_dsl(
    method: MentorMove,
    interaction: Option<Interaction>,
    domain: KnowledgeDomain,
    kind: Option<KnowledgeKind>,
    action_set: &[ActionTemplate],
) -> Result<DslAction, DslError> {
    let fits = |t: &&ActionTemplate| {
        t.method == method && t.domain == domain && interaction.is_none_or(|i| t.interaction == i)
    };
    let specific = action_set
        .iter()
        .filter(fits)
        .find(|t| t.knowledge_kind.is_some() && t.knowledge_kind == kind);
    let general = action_set.iter().filter(fits).find(|t| t.knowledge_kind.is_none());
    let builtin;
    let template = match specific.or(general) {
        Some(t) => t,
        None if method == MentorMove::Modeling => {
            builtin = builtin_modeling(domain);
            &builtin
        }
        None => {
            return Err(DslError::Coverage {
                method,
                domain: domain.label(),
            })
        }
    };
    template.validate()?;
    Ok(DslAction {
        method,
        action: template.action.clone(),
        prompt: template.effective_prompt(),
        interaction: template.interaction,
        parameters: template.effective_parameters(),
        need_response: template.need_response,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DslEntry {
    pub knowledge: String,
    pub actions: Vec<DslAction>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DslDocument {
    pub segments: IndexMap<String, Vec<DslEntry>>,
}

impl DslDocument {
    pub fn entry_count(&self) -> usize {
        self.segments.values().map(Vec::len).sum()
    }

    pub fn action_count(&self) -> usize {
        self.segments.values().flatten().map(|e| e.actions.len()).sum()
    }

    pub fn to_canonical(&self) -> String {
        to_canonical_string(self).expect("DSL documents always serialize")
    }

    pub fn from_json(payload: &str) -> serde_json::Result<Self> {
        serde_json::from_str(payload)
    }
}

pub fn segment_key(goal: &str, start_s: f64) -> String {
    format!("{goal} - {}", start_s.floor() as i64)
}

/// Builds the document for `plans`. Segments appear in time order, entries in
/// `order_index` order, actions in plan order.
pub fn compile(
    plans: &[MovePlan],
    knowledge: &[KnowledgeItem],
    segments: &[VideoSegment],
    action_set: &[ActionTemplate],
) -> Result<DslDocument, DslError> {
    let mut keys = BTreeSet::new();
    for s in segments {
        if !keys.insert(s.key()) {
            return Err(DslError::DuplicateKey(s.key()));
        }
    }
    let mut planned: Vec<(&VideoSegment, &KnowledgeItem, &MovePlan)> = Vec::new();
    for plan in plans {
        let item = knowledge
            .iter()
            .find(|k| k.id == plan.knowledge_id)
            .ok_or_else(|| DslError::UnknownKnowledge(plan.knowledge_id.clone()))?;
        let segment =
            segments
                .iter()
                .find(|s| s.key() == item.segment_ref)
                .ok_or_else(|| DslError::UnknownSegment {
                    knowledge: item.id.clone(),
                    segment: item.segment_ref.clone(),
                })?;
        planned.push((segment, item, plan));
    }
    planned.sort_by(|a, b| {
        a.0.start_s
            .total_cmp(&b.0.start_s)
            .then_with(|| a.0.goal_name.cmp(&b.0.goal_name))
            .then_with(|| a.1.order_index.cmp(&b.1.order_index))
    });

    let mut doc = DslDocument::default();
    for (segment, item, plan) in planned {
        let knowledge_text = item.labeled_text();
        let mut actions = Vec::with_capacity(plan.moves.len());
        for mv in &plan.moves {
            let mut action = get_dsl(*mv, None, item.domain, Some(item.kind), action_set)?;
            action.prompt = action
                .prompt
                .replace(&format!("{{{KNOWLEDGE_PARAM}}}"), &knowledge_text);
            actions.push(action);
        }
        doc.segments.entry(segment.key()).or_default().push(DslEntry {
            knowledge: knowledge_text,
            actions,
        });
    }
    Ok(doc)
}

/// A parameter value; `None` until the orchestrator binds it at send time.
pub type Binding = Option<String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueMessage {
    pub method: MentorMove,
    pub action: String,
    pub interaction: Interaction,
    pub prompt: String,
    pub parameters: IndexMap<String, Binding>,
    pub need_response: bool,
    /// `"{segment key}#{entry index}"`.
    pub knowledge_id: String,
    pub segment_key: String,
    pub knowledge: String,
}

impl QueueMessage {
    pub fn unresolved(&self) -> Vec<&str> {
        self.parameters
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

/// FIFO of pending messages; dequeue is destructive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageQueue {
    messages: VecDeque<QueueMessage>,
    dequeued: usize,
}

impl MessageQueue {
    pub fn dequeue(&mut self) -> Option<QueueMessage> {
        let head = self.messages.pop_front();
        if head.is_some() {
            self.dequeued += 1;
        }
        head
    }

    pub fn peek(&self) -> Option<&QueueMessage> {
        self.messages.front()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn dequeued(&self) -> usize {
        self.dequeued
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueMessage> {
        self.messages.iter()
    }
}

pub fn knowledge_queue_id(segment_key: &str, entry_index: usize) -> String {
    format!("{segment_key}#{entry_index}")
}

pub fn build_queue(document: &DslDocument) -> MessageQueue {
    let mut messages = VecDeque::new();
    for (key, entries) in &document.segments {
        for (i, entry) in entries.iter().enumerate() {
            for action in &entry.actions {
                let parameters = action
                    .parameters
                    .iter()
                    .map(|name| {
                        let value = (name == KNOWLEDGE_PARAM).then(|| entry.knowledge.clone());
                        (name.clone(), value)
                    })
                    .collect();
                messages.push_back(QueueMessage {
                    method: action.method,
                    action: action.action.clone(),
                    interaction: action.interaction,
                    prompt: action.prompt.clone(),
                    parameters,
                    need_response: action.need_response,
                    knowledge_id: knowledge_queue_id(key, i),
                    segment_key: key.clone(),
                    knowledge: entry.knowledge.clone(),
                });
            }
        }
    }
    MessageQueue { messages, dequeued: 0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(method: MentorMove, interaction: Interaction, prompt: &str, need: bool) -> ActionTemplate {
        ActionTemplate {
            method,
            domain: KnowledgeDomain::ProgrammingRelated,
            knowledge_kind: None,
            action: format!("{method} action"),
            interaction,
            prompt: prompt.into(),
            parameters: placeholders(prompt),
            need_response: need,
        }
    }

    #[test]
    fn coaching_fill_in_blanks() {
        let set = vec![template(
            MentorMove::Coaching,
            Interaction::FillInBlanks,
            "[Use one sentence to prompt the student to fill in the {code-line-with-blanks} below]",
            true,
        )];
        let a = get_dsl(
            MentorMove::Coaching,
            Some(Interaction::FillInBlanks),
            KnowledgeDomain::ProgrammingRelated,
            None,
            &set,
        )
        .unwrap();
        assert!(a.need_response);
        assert_eq!(a.parameters, vec!["code-line-with-blanks"]);
    }

    #[test]
    fn coverage_error_names_pair() {
        let err = get_dsl(
            MentorMove::Articulation,
            None,
            KnowledgeDomain::ConceptRelated,
            None,
            &[],
        )
        .unwrap_err();
        assert_eq!(
            err.to_string(),
            "action_set has no template for (Articulation, concept_related)"
        );
    }

    #[test]
    fn modeling_falls_back_to_clip() {
        let a = get_dsl(MentorMove::Modeling, None, KnowledgeDomain::ConceptRelated, None, &[]).unwrap();
        assert_eq!(a.parameters, vec![VIDEO_CLIP_PARAM]);
        assert!(!a.need_response);
    }

    #[test]
    fn zero_placeholders() {
        assert!(placeholders("Say hello").is_empty());
        assert_eq!(placeholders("{a} {b} {a}"), vec!["a", "b"]);
    }

    #[test]
    fn default_prompt_uses_interaction() {
        let mut t = template(MentorMove::Articulation, Interaction::PlainText, "", false);
        t.parameters.clear();
        assert!(t.effective_prompt().starts_with("[Use plain-text to encourage"));
        assert_eq!(t.effective_parameters(), vec![KNOWLEDGE_PARAM]);
    }

    #[test]
    fn undeclared_placeholder_rejected() {
        let mut t = template(MentorMove::Coaching, Interaction::PlainText, "{x} {y}", true);
        t.parameters = vec!["x".into()];
        assert!(matches!(t.validate(), Err(DslError::UndeclaredPlaceholder { .. })));
    }

    #[test]
    fn empty_inputs() {
        let doc = compile(&[], &[], &[], &[]).unwrap();
        assert_eq!(doc.entry_count(), 0);
        let mut q = build_queue(&doc);
        assert!(q.dequeue().is_none());
        assert!(q.dequeue().is_none());
    }

    #[test]
    fn key_floors_start() {
        assert_eq!(segment_key("Visualize the data", 509.9), "Visualize the data - 509");
    }
}
