//! Knowledge extraction into the four fixed sentence templates.
//!
//! | kind / domain            | template                                                          | anchor |
//! |--------------------------|-------------------------------------------------------------------|--------|
//! | declarative / concept    | `[subject] [verb phrase] that [clause]`                           | clause |
//! | procedural / concept     | `To achieve/understand [goal], one must [actions] [details] ...`  | actions |
//! | declarative / programming| `The task is [final goal] using [method] and [enhancement]`       | final goal |
//! | procedural / programming | `To achieve [goal], one must [action + tool] on [target] because ...` | action + tool |
//!
//! The anchor span keys the student model. An `&...&` pair marks the anchor
//! explicitly and is stripped from the stored text.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, GenerationRequest, LlmGateway, Stage};
use crate::ingestion::{CodeArtifact, CodeCell};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    Declarative,
    Procedural,
}

impl KnowledgeKind {
    pub fn label(self) -> &'static str {
        match self {
            KnowledgeKind::Declarative => "Declarative",
            KnowledgeKind::Procedural => "Procedural",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeDomain {
    ConceptRelated,
    ProgrammingRelated,
}

impl KnowledgeDomain {
    pub fn label(self) -> &'static str {
        match self {
            KnowledgeDomain::ConceptRelated => "concept_related",
            KnowledgeDomain::ProgrammingRelated => "programming_related",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub id: String,
    pub segment_ref: String,
    pub goal: String,
    pub kind: KnowledgeKind,
    pub domain: KnowledgeDomain,
    pub text: String,
    pub anchor_span: String,
    pub order_index: usize,
}

impl KnowledgeItem {
    /// `"Procedural knowledge: To achieve ..."`, the form used in DSL files.
    pub fn labeled_text(&self) -> String {
        format!("{} knowledge: {}", self.kind.label(), self.text)
    }
}

pub fn anchor_of(item: &KnowledgeItem) -> &str {
    &item.anchor_span
}

/// Slot layout of one template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnowledgeTemplate {
    pub kind: KnowledgeKind,
    pub domain: KnowledgeDomain,
    pub pattern: &'static [&'static str],
    pub anchored_slots: &'static [&'static str],
}

pub const TEMPLATES: [KnowledgeTemplate; 4] = [
    KnowledgeTemplate {
        kind: KnowledgeKind::Declarative,
        domain: KnowledgeDomain::ConceptRelated,
        pattern: &["[subject]", "[verb phrase]", "that", "[independent clause]"],
        anchored_slots: &["independent clause"],
    },
    KnowledgeTemplate {
        kind: KnowledgeKind::Procedural,
        domain: KnowledgeDomain::ConceptRelated,
        pattern: &[
            "To achieve/understand",
            "[specific goal/outcome]",
            "one must",
            "[actions/processes]",
            "[additional details]",
            "considering/using",
            "[relevant factors/tools]",
        ],
        anchored_slots: &["actions/processes"],
    },
    KnowledgeTemplate {
        kind: KnowledgeKind::Declarative,
        domain: KnowledgeDomain::ProgrammingRelated,
        pattern: &[
            "The task is",
            "[final goal]",
            "using",
            "[general method/tool]",
            "and",
            "[additional method/technique]",
        ],
        anchored_slots: &["final goal"],
    },
    KnowledgeTemplate {
        kind: KnowledgeKind::Procedural,
        domain: KnowledgeDomain::ProgrammingRelated,
        pattern: &[
            "To achieve",
            "[specific goal]",
            "one must",
            "[action/verb] [specific tool/method]",
            "on",
            "[object/target]",
            "because",
            "[reason/purpose]",
        ],
        anchored_slots: &["action/tool"],
    },
];

impl fmt::Display for KnowledgeTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}: {}",
            self.kind.label().to_lowercase(),
            self.domain.label(),
            self.pattern.join(" + ")
        )
    }
}

pub fn template_for(kind: KnowledgeKind, domain: KnowledgeDomain) -> &'static KnowledgeTemplate {
    TEMPLATES
        .iter()
        .find(|t| t.kind == kind && t.domain == domain)
        .expect("one template per (kind, domain)")
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("`{text}` does not fit the template; nearest is {nearest}")]
pub struct FormatRejection {
    pub text: String,
    pub nearest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedKnowledge {
    pub kind: KnowledgeKind,
    pub domain: KnowledgeDomain,
    /// Text with kind prefix and anchor markers removed.
    pub text: String,
    pub slots: Vec<(String, String)>,
    pub anchor_span: String,
}

struct Prepared {
    text: String,
    declared_kind: Option<KnowledgeKind>,
    marked: Option<String>,
}

/// Drops one pair of matching wrapping quotes.
fn unquote(s: &str) -> &str {
    let s = s.trim();
    for q in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return s[1..s.len() - 1].trim();
        }
    }
    s
}

fn prepare(raw: &str) -> Prepared {
    let mut text = unquote(raw).to_string();
    let mut declared_kind = None;
    for kind in [KnowledgeKind::Declarative, KnowledgeKind::Procedural] {
        let prefix = format!("{} knowledge:", kind.label());
        if text
            .get(..prefix.len())
            .is_some_and(|head| head.eq_ignore_ascii_case(&prefix))
        {
            text = text[prefix.len()..].trim().to_string();
            declared_kind = Some(kind);
        }
    }
    let text = unquote(&text).to_string();
    let mut marked = None;
    let mut clean = text.clone();
    if let (Some(open), Some(close)) = (text.find('&'), text.rfind('&')) {
        if open < close {
            marked = Some(text[open + 1..close].trim().to_string());
            clean = format!("{}{}{}", &text[..open], &text[open + 1..close], &text[close + 1..]);
        }
    }
    Prepared {
        text: clean,
        declared_kind,
        marked,
    }
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn task_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?is)^the task is\s+(?P<goal>.+?)\s+using\s+(?P<method>.+?)(?:\s+and\s+(?P<extra>.+?))?\.?$",
    )
}

fn procedural_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?is)^to\s+(?P<verb>achieve|understand)\s+(?P<goal>.+?),?\s+one\s+(?:must|needs?\s+to)\s+(?P<rest>.+?)\.?$",
    )
}

fn declarative_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"(?is)^(?P<subject>.+?)\s+that\s+(?P<clause>.+?)\.?$")
}

fn strip_period(s: &str) -> String {
    s.trim().trim_end_matches('.').trim().to_string()
}

fn split_at_any<'a>(text: &'a str, separators: &[&'a str]) -> (&'a str, Option<(&'a str, &'a str)>) {
    let found = separators
        .iter()
        .filter_map(|sep| text.find(sep).map(|i| (i, *sep)))
        .min_by_key(|(i, _)| *i);
    match found {
        Some((i, sep)) => (&text[..i], Some((sep, &text[i + sep.len()..]))),
        None => (text, None),
    }
}

fn parse_as(prepared: &Prepared, kind: KnowledgeKind, domain: KnowledgeDomain) -> Option<ParsedKnowledge> {
    let text = prepared.text.trim();
    let (slots, anchor) = match (kind, domain) {
        (KnowledgeKind::Declarative, KnowledgeDomain::ProgrammingRelated) => {
            let c = task_re().captures(text)?;
            let goal = c["goal"].trim().to_string();
            let mut slots = vec![
                ("final goal".to_string(), goal.clone()),
                ("general method/tool".to_string(), strip_period(&c["method"])),
            ];
            if let Some(extra) = c.name("extra") {
                slots.push(("additional method/technique".into(), strip_period(extra.as_str())));
            }
            (slots, goal)
        }
        (KnowledgeKind::Procedural, _) => {
            let c = procedural_re().captures(text)?;
            let goal = c["goal"].trim().to_string();
            let rest = c["rest"].trim();
            let mut slots = vec![
                ("verb".to_string(), c["verb"].to_lowercase()),
                ("specific goal".to_string(), goal),
            ];
            let anchor = if domain == KnowledgeDomain::ProgrammingRelated {
                let (action, tail) = split_at_any(rest, &[" on ", ", ", " because "]);
                let action = action.trim().to_string();
                slots.push(("action/tool".into(), action.clone()));
                if let Some((sep, tail)) = tail {
                    if sep == " on " {
                        let (target, reason) = split_at_any(tail, &[" because ", ", "]);
                        slots.push(("object/target".into(), target.trim().to_string()));
                        if let Some((_, reason)) = reason {
                            slots.push(("reason/purpose".into(), strip_period(reason)));
                        }
                    } else {
                        slots.push(("reason/purpose".into(), strip_period(tail)));
                    }
                }
                action
            } else {
                let (action, tail) = split_at_any(rest, &[", ", " considering ", " and consider ", " using "]);
                let action = strip_period(action);
                slots.push(("actions/processes".into(), action.clone()));
                if let Some((_, tail)) = tail {
                    slots.push(("additional details".into(), strip_period(tail)));
                }
                action
            };
            (slots, anchor)
        }
        (KnowledgeKind::Declarative, KnowledgeDomain::ConceptRelated) => {
            if task_re().is_match(text) || procedural_re().is_match(text) {
                return None;
            }
            let c = declarative_re().captures(text)?;
            let clause = strip_period(&c["clause"]);
            (
                vec![
                    ("subject + verb phrase".to_string(), c["subject"].trim().to_string()),
                    ("independent clause".to_string(), clause.clone()),
                ],
                clause,
            )
        }
    };
    let anchor = match &prepared.marked {
        Some(marked) if !marked.is_empty() && text.contains(marked.as_str()) => marked.clone(),
        _ => anchor,
    };
    if anchor.is_empty() || !text.contains(anchor.as_str()) {
        return None;
    }
    Some(ParsedKnowledge {
        kind,
        domain,
        text: text.to_string(),
        slots,
        anchor_span: anchor,
    })
}

fn nearest_template(text: &str) -> &'static KnowledgeTemplate {
    let lower = text.to_lowercase();
    let score = |t: &KnowledgeTemplate| -> usize {
        let keys: &[&str] = match (t.kind, t.domain) {
            (KnowledgeKind::Declarative, KnowledgeDomain::ConceptRelated) => &[" that "],
            (KnowledgeKind::Procedural, KnowledgeDomain::ConceptRelated) => &["to understand", "one must", "consider"],
            (KnowledgeKind::Declarative, KnowledgeDomain::ProgrammingRelated) => &["the task is", " using "],
            (KnowledgeKind::Procedural, KnowledgeDomain::ProgrammingRelated) => {
                &["to achieve", "one must", " on ", "because"]
            }
        };
        keys.iter().filter(|k| lower.contains(*k)).count()
    };
    TEMPLATES
        .iter()
        .min_by_key(|t| std::cmp::Reverse(score(t)))
        .unwrap_or(&TEMPLATES[0])
}

/// Checks `text` against the (kind, domain) template and extracts its slots.
pub fn validate_format(
    text: &str,
    kind: KnowledgeKind,
    domain: KnowledgeDomain,
) -> Result<ParsedKnowledge, FormatRejection> {
    let prepared = prepare(text);
    let kind_ok = prepared.declared_kind.is_none_or(|k| k == kind);
    match kind_ok.then(|| parse_as(&prepared, kind, domain)).flatten() {
        Some(parsed) => Ok(parsed),
        None => Err(FormatRejection {
            text: text.to_string(),
            nearest: nearest_template(&prepared.text).to_string(),
        }),
    }
}

/// Finds the template that fits `text` among the given domains. The kind is
/// taken from a `"<Kind> knowledge:"` prefix when present.
pub fn classify(text: &str, domains: &[KnowledgeDomain]) -> Result<ParsedKnowledge, FormatRejection> {
    let prepared = prepare(text);
    let looks_like_code =
        prepared.marked.as_deref().map(has_code_token).unwrap_or(false) || has_code_token(&prepared.text);
    let mut order: Vec<KnowledgeDomain> = domains.to_vec();
    if order.len() > 1 && looks_like_code {
        order.sort_by_key(|d| *d != KnowledgeDomain::ProgrammingRelated);
    } else if order.len() > 1 {
        order.sort_by_key(|d| *d != KnowledgeDomain::ConceptRelated);
    }
    for domain in order {
        for kind in [KnowledgeKind::Procedural, KnowledgeKind::Declarative] {
            if prepared.declared_kind.is_some_and(|k| k != kind) {
                continue;
            }
            if let Some(parsed) = parse_as(&prepared, kind, domain) {
                return Ok(parsed);
            }
        }
    }
    Err(FormatRejection {
        text: text.to_string(),
        nearest: nearest_template(&prepared.text).to_string(),
    })
}

/// Backticked or quoted identifiers, or a call such as `geom_boxplot(`.
pub fn has_code_token(text: &str) -> bool {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"`[^`]+`|'[A-Za-z_][A-Za-z0-9_.]*'|[A-Za-z_][A-Za-z0-9_.]*\(").is_match(text)
}

/// Splits a list-shaped reply into its items: a JSON array of strings, or
/// one item per line with brackets, bullets and quotes stripped.
pub fn parse_list_reply(reply: &str) -> Vec<String> {
    if let Ok(items) = serde_json::from_str::<Vec<String>>(reply.trim()) {
        return items.into_iter().filter(|s| !s.trim().is_empty()).collect();
    }
    static BULLET: OnceLock<Regex> = OnceLock::new();
    let bullet = re(&BULLET, r"^(?:[-*]\s+|\d+[.)]\s+)");
    reply
        .lines()
        .map(str::trim)
        .filter(|l| !matches!(*l, "" | "[" | "]" | "```" | "```json"))
        .map(|l| {
            let l = bullet.replace(l, "");
            let l = l.trim().trim_end_matches(',').trim();
            let l = l.strip_prefix('[').unwrap_or(l);
            let l = l.strip_suffix(']').unwrap_or(l).trim();
            unquote(l).to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeOutcome {
    pub items: Vec<KnowledgeItem>,
    pub rejections: Vec<Rejection>,
}

/// What the extractor needs to know about one segment.
#[derive(Debug, Clone)]
pub struct SegmentContext<'a> {
    pub segment_ref: &'a str,
    pub goal: &'a str,
    pub text: &'a str,
    /// Fixed domain, or `None` to classify each item (mixed videos).
    pub domain: Option<KnowledgeDomain>,
    pub video_type_label: &'a str,
}

/// Cells whose identifiers are mentioned in the segment text; all cells when
/// nothing overlaps.
pub fn relevant_cells<'a>(code: &'a CodeArtifact, segment_text: &str) -> Vec<&'a CodeCell> {
    let words: HashSet<String> = segment_text
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|w| w.len() > 2)
        .map(str::to_lowercase)
        .collect();
    let hits: Vec<&CodeCell> = code
        .cells
        .iter()
        .filter(|cell| {
            crate::orchestrator::identifiers(&cell.text)
                .iter()
                .any(|id| id.len() > 2 && words.contains(&id.to_lowercase()))
        })
        .collect();
    if hits.is_empty() {
        code.cells.iter().collect()
    } else {
        hits
    }
}

pub fn summarize_knowledge(
    segment: &SegmentContext<'_>,
    code: Option<&CodeArtifact>,
    max_items: usize,
    gateway: &dyn LlmGateway,
) -> Result<KnowledgeOutcome, KnowledgeError> {
    if segment.text.trim().is_empty() || max_items == 0 {
        return Ok(KnowledgeOutcome::default());
    }
    let cells = code.map(|c| relevant_cells(c, segment.text)).unwrap_or_default();
    let code_text = cells.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n\n");
    let domain_for_prompt = segment.domain.unwrap_or(if code_text.is_empty() {
        KnowledgeDomain::ConceptRelated
    } else {
        KnowledgeDomain::ProgrammingRelated
    });
    let prompt = prompts::knowledge_summarize(
        segment.video_type_label,
        segment.goal,
        domain_for_prompt,
        max_items,
        segment.text,
        &code_text,
    );
    let request = GenerationRequest::new(Stage::Knowledge, prompts::KNOWLEDGE_SYSTEM, prompt);
    let reply = gateway.generate(&request)?;

    let domains: Vec<KnowledgeDomain> = match segment.domain {
        Some(d) => vec![d],
        None => vec![KnowledgeDomain::ConceptRelated, KnowledgeDomain::ProgrammingRelated],
    };
    let mut outcome = KnowledgeOutcome::default();
    let mut parsed = Vec::new();
    for raw in parse_list_reply(&reply) {
        match classify(&raw, &domains) {
            Ok(p) => parsed.push(p),
            Err(e) => outcome.rejections.push(Rejection {
                text: raw,
                reason: format!("template mismatch; nearest is {}", e.nearest),
            }),
        }
    }

    let mut seen_concept_procedural = false;
    let mut seen_programming_declarative = false;
    for p in parsed {
        let limited = match (p.kind, p.domain) {
            (KnowledgeKind::Procedural, KnowledgeDomain::ConceptRelated) => {
                std::mem::replace(&mut seen_concept_procedural, true)
            }
            (KnowledgeKind::Declarative, KnowledgeDomain::ProgrammingRelated) => {
                std::mem::replace(&mut seen_programming_declarative, true)
            }
            _ => false,
        };
        if limited {
            outcome.rejections.push(Rejection {
                text: p.text,
                reason: format!(
                    "only one {} item allowed for {} segments",
                    p.kind.label().to_lowercase(),
                    p.domain.label()
                ),
            });
            continue;
        }
        if outcome.items.len() >= max_items {
            outcome.rejections.push(Rejection {
                text: p.text,
                reason: format!("more than {max_items} items"),
            });
            continue;
        }
        let order_index = outcome.items.len();
        outcome.items.push(KnowledgeItem {
            id: format!("{}#{}", segment.segment_ref, order_index),
            segment_ref: segment.segment_ref.to_string(),
            goal: segment.goal.to_string(),
            kind: p.kind,
            domain: p.domain,
            text: p.text,
            anchor_span: p.anchor_span,
            order_index,
        });
    }
    if segment.domain == Some(KnowledgeDomain::ConceptRelated) && !seen_concept_procedural {
        outcome.rejections.push(Rejection {
            text: String::new(),
            reason: "reply contained no procedural item".into(),
        });
    }
    Ok(outcome)
}
