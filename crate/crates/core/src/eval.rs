//! Evaluation machinery: segmentation accuracy within a time margin, and
//! per-layer intent precision/recall/F1 with macro averaging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{DslDocument, Interaction};
use crate::knowledge::KnowledgeKind;
use crate::planner::MentorMove;
use crate::segmentation::SegmentLabel;

pub const DEFAULT_MARGIN_S: f64 = 5.0;
const MARGIN_EPS: f64 = 1e-9;

/// Fraction of labeled segments matched by a predicted one with the same
/// goal whose start and end both lie within `margin_s`. Matching is greedy
/// and one-to-one in time order. An empty labeled list scores 1.0 when
/// nothing was predicted and 0.0 otherwise.
pub fn segmentation_accuracy(predicted: &[SegmentLabel], labeled: &[SegmentLabel], margin_s: f64) -> f64 {
    if labeled.is_empty() {
        return if predicted.is_empty() { 1.0 } else { 0.0 };
    }
    let mut used = vec![false; predicted.len()];
    let mut matches = 0usize;
    for gold in labeled {
        let hit = predicted.iter().enumerate().find(|(i, p)| {
            !used[*i]
                && p.category == gold.category
                && (p.start - gold.start).abs() <= margin_s + MARGIN_EPS
                && (p.end - gold.end).abs() <= margin_s + MARGIN_EPS
        });
        if let Some((i, _)) = hit {
            used[i] = true;
            matches += 1;
        }
    }
    matches as f64 / labeled.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Intent {
    TaskControl,
    Comprehension,
    CodeRunCode,
    Feedback,
}

/// The four annotation layers of one mentor utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentLabel {
    pub knowledge: KnowledgeKind,
    pub method: MentorMove,
    pub interaction: Interaction,
    pub intent: Intent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub utterance_id: String,
    pub predicted: IntentLabel,
    pub annotated: IntentLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Knowledge,
    Method,
    Action,
    Interaction,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Knowledge, Layer::Method, Layer::Action, Layer::Interaction];

    pub fn class_of(self, label: &IntentLabel) -> String {
        match self {
            Layer::Knowledge => label.knowledge.label().to_string(),
            Layer::Method => label.method.name().to_string(),
            Layer::Action => format!("{:?}", label.intent),
            Layer::Interaction => label.interaction.label().to_string(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("the corpus is empty")]
    EmptyCorpus,
    #[error("utterance ids do not align: {0}")]
    Misaligned(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Occurrences in the DSL-derived truth.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer: Layer,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from precision and recall, defined as 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-vs-rest metrics per class. The DSL-derived label (`predicted`) is the
/// truth and the human annotation is scored against it; the layer's scores
/// are unweighted means over every class seen on either side.
pub fn intent_metrics(pairs: &[LabeledUtterance], layer: Layer) -> Result<LayerMetrics, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    // (truth, scored)
    let observed: Vec<(String, String)> = pairs
        .iter()
        .map(|u| (layer.class_of(&u.predicted), layer.class_of(&u.annotated)))
        .collect();
    let classes: BTreeSet<&String> = observed.iter().flat_map(|(p, a)| [p, a]).collect();
    let mut per_class = BTreeMap::new();
    for class in classes {
        let tp = observed.iter().filter(|(t, s)| t == class && s == class).count();
        let scored = observed.iter().filter(|(_, s)| s == class).count();
        let actual = observed.iter().filter(|(t, _)| t == class).count();
        let precision = ratio(tp, scored);
        let recall = ratio(tp, actual);
        per_class.insert(
            class.clone(),
            ClassMetrics {
                precision,
                recall,
                f1: f1(precision, recall),
                support: actual,
            },
        );
    }
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.values().map(f).sum::<f64>() / n;
    Ok(LayerMetrics {
        layer,
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        per_class,
    })
}

/// Joins predicted and annotated labels by utterance id.
pub fn align(
    predicted: &[(String, IntentLabel)],
    annotated: &[(String, IntentLabel)],
) -> Result<Vec<LabeledUtterance>, EvalError> {
    let gold: BTreeMap<&str, &IntentLabel> = annotated.iter().map(|(id, l)| (id.as_str(), l)).collect();
    if gold.len() != predicted.len() {
        return Err(EvalError::Misaligned(format!(
            "{} predicted vs {} annotated",
            predicted.len(),
            gold.len()
        )));
    }
    predicted
        .iter()
        .map(|(id, p)| {
            let a = gold.get(id.as_str()).ok_or_else(|| EvalError::Misaligned(id.clone()))?;
            Ok(LabeledUtterance {
                utterance_id: id.clone(),
                predicted: *p,
                annotated: **a,
            })
        })
        .collect()
}

/// The conversational intent a DSL action is meant to produce.
pub fn intent_of(method: MentorMove, interaction: Interaction) -> Intent {
    match (method, interaction) {
        (MentorMove::Modeling, _) => Intent::TaskControl,
        (MentorMove::Coaching | MentorMove::Reflection, Interaction::ShowCode) => Intent::CodeRunCode,
        (MentorMove::Coaching, Interaction::FillInBlanks) => Intent::CodeRunCode,
        (MentorMove::Reflection, _) => Intent::Feedback,
        _ => Intent::Comprehension,
    }
}

/// Predicted labels for every action in a DSL document, with ids
/// `"{segment key}#{entry}#{action}"`.
pub fn labels_from_dsl(doc: &DslDocument) -> Vec<(String, IntentLabel)> {
    let mut out = Vec::new();
    for (key, entries) in &doc.segments {
        for (e, entry) in entries.iter().enumerate() {
            let knowledge = if entry.knowledge.starts_with("Declarative") {
                KnowledgeKind::Declarative
            } else {
                KnowledgeKind::Procedural
            };
            for (a, action) in entry.actions.iter().enumerate() {
                out.push((
                    format!("{key}#{e}#{a}"),
                    IntentLabel {
                        knowledge,
                        method: action.method,
                        interaction: action.interaction,
                        intent: intent_of(action.method, action.interaction),
                    },
                ));
            }
        }
    }
    out
}

/// Published "Total" row (precision, recall, F1) per layer, for side-by-side
/// display only.
pub const REFERENCE_TOTALS: [(Layer, f64, f64, f64); 4] = [
    (Layer::Knowledge, 0.791, 0.787, 0.789),
    (Layer::Method, 0.814, 0.809, 0.807),
    (Layer::Action, 0.902, 0.895, 0.896),
    (Layer::Interaction, 0.970, 0.968, 0.968),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    /// Per corpus name, the four layers in order.
    pub rows: Vec<(String, Vec<LayerMetrics>)>,
}

/// Metrics for each named corpus plus a pooled "Total" row.
pub fn report(corpora: &[(String, Vec<LabeledUtterance>)]) -> Result<MetricsTable, EvalError> {
    let mut rows = Vec::new();
    let mut pooled = Vec::new();
    for (name, pairs) in corpora {
        let layers = Layer::ALL
            .iter()
            .map(|l| intent_metrics(pairs, *l))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((name.clone(), layers));
        pooled.extend(pairs.iter().cloned());
    }
    let total = Layer::ALL
        .iter()
        .map(|l| intent_metrics(&pooled, *l))
        .collect::<Result<Vec<_>, _>>()?;
    rows.push(("Total".to_string(), total));
    Ok(MetricsTable { rows })
}

impl MetricsTable {
    pub fn render(&self, with_reference: bool) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "corpus");
        for layer in Layer::ALL {
            let _ = write!(out, " | {:<20}", format!("{layer:?} P/R/F1"));
        }
        out.push('\n');
        let mut line = |name: &str, cells: Vec<(f64, f64, f64)>| {
            let _ = write!(out, "{name:<16}");
            for (p, r, f) in cells {
                let _ = write!(out, " | {:<20}", format!("{p:.3}/{r:.3}/{f:.3}"));
            }
            out.push('\n');
        };
        for (name, layers) in &self.rows {
            line(name, layers.iter().map(|m| (m.precision, m.recall, m.f1)).collect());
        }
        if with_reference {
            line(
                "reference",
                REFERENCE_TOTALS.iter().map(|(_, p, r, f)| (*p, *r, *f)).collect(),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(category: &str, start: f64, end: f64) -> SegmentLabel {
        SegmentLabel {
            category: category.into(),
            start,
            end,
        }
    }

    #[test]
    fn margin_is_inclusive() {
        let gold = [seg("g", 10.0, 20.0)];
        assert_eq!(segmentation_accuracy(&[seg("g", 15.0, 25.0)], &gold, 5.0), 1.0);
        assert_eq!(segmentation_accuracy(&[seg("g", 16.0, 20.0)], &gold, 5.0), 0.0);
        assert_eq!(segmentation_accuracy(&[seg("h", 10.0, 20.0)], &gold, 5.0), 0.0);
    }

    #[test]
    fn matching_is_one_to_one() {
        let gold = [seg("g", 0.0, 10.0), seg("g", 1.0, 11.0)];
        assert_eq!(segmentation_accuracy(&[seg("g", 0.0, 10.0)], &gold, 5.0), 0.5);
    }

    #[test]
    fn f1_zero_is_defined() {
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(intent_metrics(&[], Layer::Method), Err(EvalError::EmptyCorpus));
    }
}
