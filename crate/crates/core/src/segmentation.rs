//! Video segmentation by learning goal: summarize, retrieve, rearrange.
//!
//! Summarize asks for `(goal, summary)` points in order of appearance.
//! Retrieve anchors each point to transcript sentences: a summary identical
//! to a sentence anchors directly, otherwise the gateway quotes the first and
//! last sentence of the part it summarizes and each quote is resolved by exact
//! substring, then by embedding similarity. Rearrange turns anchors into
//! time-ordered, non-overlapping segments.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dsl::segment_key;
use crate::gateway::{cosine, GatewayError, GenerationRequest, LlmGateway, Stage};
use crate::ingestion::{ExpertConfig, LearningGoalDef, TranscriptSentence};
use crate::prompts;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("could not parse the {stage} reply: {raw}")]
    Parse { stage: &'static str, raw: String },
    #[error("no transcript sentence anchors the summary for `{goal}`: {summary}")]
    UnresolvedAnchor { goal: String, summary: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub goal_name: String,
    pub summary: String,
    pub appearance_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedAnchor {
    pub goal_name: String,
    pub summary: String,
    pub sentence_text: String,
    pub matched_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSegment {
    pub goal_name: String,
    pub start_s: f64,
    pub end_s: f64,
    pub summary: String,
    pub sentence_range: [usize; 2],
}

impl VideoSegment {
    /// `"{goal} - {floor(start)}"`, also the segment's id.
    pub fn key(&self) -> String {
        segment_key(&self.goal_name, self.start_s)
    }

    pub fn text(&self, transcript: &[TranscriptSentence]) -> String {
        let [first, last] = self.sentence_range;
        transcript
            .get(first..=last.min(transcript.len().saturating_sub(1)))
            .unwrap_or_default()
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn label(&self) -> SegmentLabel {
        SegmentLabel {
            category: self.goal_name.clone(),
            start: self.start_s,
            end: self.end_s,
        }
    }
}

/// The exported segment form, `{category, start, end}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentLabel {
    pub category: String,
    pub start: f64,
    pub end: f64,
}

/// Per-stage artifacts of one run, for inspection and error attribution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRun {
    pub summaries: Vec<SegmentSummary>,
    pub anchors: Vec<RetrievedAnchor>,
    pub segments: Vec<VideoSegment>,
    pub warnings: Vec<String>,
}

impl SegmentationRun {
    pub fn labels(&self) -> Vec<SegmentLabel> {
        self.segments.iter().map(VideoSegment::label).collect()
    }
}

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_ellipsis(text: &str) -> &str {
    text.trim()
        .trim_end_matches('…')
        .trim_end_matches("...")
        .trim_start_matches('…')
        .trim_start_matches("...")
        .trim()
        .trim_matches('"')
        .trim()
}

/// Reads `("goal", "summary")` tuples, a JSON array of pairs, or a JSON array
/// of `{category|goal, summary}` objects.
pub fn parse_summary_reply(reply: &str) -> Option<Vec<(String, String)>> {
    let trimmed = reply
        .trim()
        .trim_start_matches("```json")
        .trim_start_matches("```")
        .trim_end_matches("```")
        .trim();
    if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(trimmed) {
        let mut out = Vec::new();
        for item in items {
            match item {
                Value::Array(pair) if pair.len() == 2 => {
                    out.push((pair[0].as_str()?.to_string(), pair[1].as_str()?.to_string()));
                }
                Value::Object(map) => {
                    let goal = map.get("category").or_else(|| map.get("goal"))?.as_str()?;
                    let summary = map.get("summary")?.as_str()?;
                    out.push((goal.to_string(), summary.to_string()));
                }
                _ => return None,
            }
        }
        return Some(out);
    }
    static TUPLE: OnceLock<Regex> = OnceLock::new();
    let re = TUPLE.get_or_init(|| {
        Regex::new(r#"^\(\s*(?:"([^"]*)"|'([^']*)')\s*,\s*(?:"(.*)"|'(.*)')\s*\)\s*,?$"#).expect("static regex")
    });
    let mut out = Vec::new();
    for line in trimmed.lines().map(str::trim) {
        if matches!(line, "" | "[" | "]" | "...") {
            continue;
        }
        let c = re.captures(line)?;
        let goal = c.get(1).or_else(|| c.get(2))?.as_str();
        let summary = c.get(3).or_else(|| c.get(4))?.as_str();
        out.push((goal.to_string(), summary.to_string()));
    }
    Some(out)
}

/// Step one: summary points per enabled goal, in order of appearance.
pub fn summarize(
    transcript: &[TranscriptSentence],
    goals: &[&LearningGoalDef],
    topic: &str,
    gateway: &dyn LlmGateway,
    warnings: &mut Vec<String>,
) -> Result<Vec<SegmentSummary>, SegmentationError> {
    if transcript.is_empty() || goals.is_empty() {
        return Ok(Vec::new());
    }
    let request = GenerationRequest::new(
        Stage::Segmentation,
        prompts::SEGMENT_SYSTEM,
        prompts::summarize(topic, goals, transcript),
    );
    let reply = gateway.generate(&request)?;
    let pairs = parse_summary_reply(&reply).ok_or_else(|| SegmentationError::Parse {
        stage: "summarize",
        raw: reply.clone(),
    })?;
    let mut out = Vec::new();
    for (goal, summary) in pairs {
        match goals.iter().find(|g| g.name.eq_ignore_ascii_case(goal.trim())) {
            Some(def) => out.push(SegmentSummary {
                goal_name: def.name.clone(),
                summary,
                appearance_index: out.len(),
            }),
            None => warnings.push(format!("summary for unknown or disabled goal `{goal}` dropped")),
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct QuoteReply {
    #[serde(alias = "goal")]
    #[allow(dead_code)]
    category: Option<String>,
    sentences: Vec<String>,
}

struct SentenceIndex<'a> {
    transcript: &'a [TranscriptSentence],
    normalized: Vec<String>,
    embeddings: Vec<Option<Vec<f64>>>,
}

impl<'a> SentenceIndex<'a> {
    fn new(transcript: &'a [TranscriptSentence]) -> Self {
        Self {
            transcript,
            normalized: transcript.iter().map(|s| normalize(&s.text)).collect(),
            embeddings: vec![None; transcript.len()],
        }
    }

    fn exact(&self, quote: &str, from: usize) -> Option<usize> {
        let quote = normalize(strip_ellipsis(quote));
        if quote.is_empty() {
            return None;
        }
        let order = (from..self.normalized.len()).chain(0..from.min(self.normalized.len()));
        let positions: Vec<usize> = order.collect();
        positions
            .iter()
            .copied()
            .find(|&i| self.normalized[i].contains(&quote))
            .or_else(|| {
                // A quote spanning several short captions starts with one of them.
                positions
                    .iter()
                    .copied()
                    .find(|&i| self.normalized[i].len() >= 12 && quote.starts_with(&self.normalized[i]))
            })
    }

    fn similar(
        &mut self,
        quote: &str,
        gateway: &dyn LlmGateway,
        floor: f64,
    ) -> Result<Option<(usize, f64)>, GatewayError> {
        let target = gateway.embed(strip_ellipsis(quote))?;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.transcript.len() {
            if self.embeddings[i].is_none() {
                self.embeddings[i] = Some(gateway.embed(&self.transcript[i].text)?);
            }
            let sim = cosine(self.embeddings[i].as_deref().unwrap_or_default(), &target);
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        Ok(best.filter(|(_, sim)| *sim >= floor))
    }
}

/// Nearest sentence to `text` by cosine; ties go to the earlier sentence.
pub fn nearest_sentence(
    text: &str,
    transcript: &[TranscriptSentence],
    gateway: &dyn LlmGateway,
) -> Result<Option<(usize, f64)>, GatewayError> {
    SentenceIndex::new(transcript).similar(text, gateway, f64::NEG_INFINITY)
}

/// Step two: transcript sentences behind each summary point.
pub fn retrieve(
    summaries: &[SegmentSummary],
    transcript: &[TranscriptSentence],
    gateway: &dyn LlmGateway,
    floor: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<RetrievedAnchor>, SegmentationError> {
    let mut index = SentenceIndex::new(transcript);
    let mut direct: Vec<Option<usize>> = Vec::with_capacity(summaries.len());
    for s in summaries {
        let wanted = normalize(&s.summary);
        direct.push(index.normalized.iter().position(|t| *t == wanted));
    }
    let pending: Vec<usize> = (0..summaries.len()).filter(|i| direct[*i].is_none()).collect();

    let mut quotes: Vec<Vec<String>> = vec![Vec::new(); summaries.len()];
    if !pending.is_empty() {
        let points: Vec<(String, String)> = pending
            .iter()
            .map(|&i| (summaries[i].goal_name.clone(), summaries[i].summary.clone()))
            .collect();
        let request = GenerationRequest::new(
            Stage::Segmentation,
            prompts::SEGMENT_SYSTEM,
            prompts::retrieve(&points, transcript),
        );
        let reply = gateway.generate(&request)?;
        let body = reply
            .trim()
            .trim_start_matches("```json")
            .trim_start_matches("```")
            .trim_end_matches("```");
        let parsed: Vec<QuoteReply> = serde_json::from_str(body.trim()).map_err(|_| SegmentationError::Parse {
            stage: "retrieve",
            raw: reply.clone(),
        })?;
        if parsed.len() != pending.len() {
            return Err(SegmentationError::Parse {
                stage: "retrieve",
                raw: reply,
            });
        }
        for (&i, q) in pending.iter().zip(parsed) {
            quotes[i] = q.sentences;
        }
    }

    let mut anchors = Vec::with_capacity(summaries.len());
    let mut cursor = 0;
    for (i, s) in summaries.iter().enumerate() {
        let mut matched = Vec::new();
        if let Some(j) = direct[i] {
            matched.push(j);
        }
        for quote in &quotes[i] {
            if let Some(j) = index.exact(quote, cursor) {
                matched.push(j);
                continue;
            }
            match index.similar(quote, gateway, floor)? {
                Some((j, sim)) => {
                    warnings.push(format!(
                        "`{}`: quote matched sentence {j} by similarity {sim:.3}",
                        s.goal_name
                    ));
                    matched.push(j);
                }
                None => warnings.push(format!("`{}`: quote not found in transcript: {quote}", s.goal_name)),
            }
        }
        matched.sort_unstable();
        matched.dedup();
        let Some(&first) = matched.first() else {
            return Err(SegmentationError::UnresolvedAnchor {
                goal: s.goal_name.clone(),
                summary: s.summary.clone(),
            });
        };
        cursor = first;
        anchors.push(RetrievedAnchor {
            goal_name: s.goal_name.clone(),
            summary: s.summary.clone(),
            sentence_text: transcript[first].text.clone(),
            matched_indices: matched,
        });
    }
    Ok(anchors)
}

fn make_segment(
    goal: &str,
    summary: &str,
    first: usize,
    last: usize,
    transcript: &[TranscriptSentence],
) -> VideoSegment {
    VideoSegment {
        goal_name: goal.to_string(),
        start_s: transcript[first].start_s,
        end_s: round_ms(transcript[last].end_s()),
        summary: summary.to_string(),
        sentence_range: [first, last],
    }
}

/// Step three: anchors to sorted segments. Same-goal anchors that touch merge;
/// a segment overlapped by a later one of another goal is cut at its start.
pub fn rearrange(
    anchors: &[RetrievedAnchor],
    transcript: &[TranscriptSentence],
    warnings: &mut Vec<String>,
) -> Vec<VideoSegment> {
    let mut spans: Vec<(String, String, usize, usize)> = anchors
        .iter()
        .filter_map(|a| {
            let first = *a.matched_indices.iter().min()?;
            let last = *a.matched_indices.iter().max()?;
            (last < transcript.len()).then(|| (a.goal_name.clone(), a.summary.clone(), first, last))
        })
        .collect();
    spans.sort_by(|a, b| a.2.cmp(&b.2).then(a.3.cmp(&b.3)).then(a.0.cmp(&b.0)));

    let mut merged: Vec<(String, String, usize, usize)> = Vec::new();
    for span in spans {
        if let Some(prev) = merged.last_mut() {
            if prev.0 == span.0 && span.2 <= prev.3 + 1 {
                prev.3 = prev.3.max(span.3);
                if !prev.1.contains(&span.1) {
                    prev.1 = format!("{} {}", prev.1, span.1);
                }
                continue;
            }
            if span.2 <= prev.3 {
                if span.2 <= prev.2 {
                    warnings.push(format!(
                        "segment `{}` at sentence {} is covered by `{}` and was dropped",
                        prev.0, prev.2, span.0
                    ));
                    merged.pop();
                } else {
                    warnings.push(format!(
                        "segment `{}` truncated at sentence {} where `{}` begins",
                        prev.0, span.2, span.0
                    ));
                    prev.3 = span.2 - 1;
                }
            }
        }
        merged.push(span);
    }
    merged
        .into_iter()
        .map(|(goal, summary, first, last)| make_segment(&goal, &summary, first, last, transcript))
        .collect()
}

/// Splits a transcript into windows of `window_s` seconds.
pub fn chunk_transcript(transcript: &[TranscriptSentence], window_s: f64) -> Vec<&[TranscriptSentence]> {
    let Some(first) = transcript.first() else {
        return Vec::new();
    };
    let mut chunks = Vec::new();
    let mut begin = 0;
    let mut window_end = first.start_s + window_s;
    for (i, s) in transcript.iter().enumerate() {
        if s.start_s >= window_end {
            chunks.push(&transcript[begin..i]);
            begin = i;
            while s.start_s >= window_end {
                window_end += window_s;
            }
        }
    }
    chunks.push(&transcript[begin..]);
    chunks
}

/// The full summarize, retrieve, rearrange pipeline.
pub fn segment_video(
    transcript: &[TranscriptSentence],
    config: &ExpertConfig,
    gateway: &dyn LlmGateway,
) -> Result<SegmentationRun, SegmentationError> {
    let goals: Vec<&LearningGoalDef> = config.enabled_goals().collect();
    let mut run = SegmentationRun::default();
    let windows = match config.options.chunk_window_s {
        Some(w) => chunk_transcript(transcript, w),
        None => vec![transcript],
    };
    for window in windows {
        let mut summaries = summarize(window, &goals, &config.topic, gateway, &mut run.warnings)?;
        let offset = window.first().map_or(0, |s| s.index);
        let mut anchors = retrieve(
            &summaries,
            window,
            gateway,
            config.options.retrieve_floor,
            &mut run.warnings,
        )?;
        for a in &mut anchors {
            for i in &mut a.matched_indices {
                *i += offset;
            }
        }
        for s in &mut summaries {
            s.appearance_index += run.summaries.len();
        }
        run.summaries.extend(summaries);
        run.anchors.extend(anchors);
    }
    run.segments = rearrange(&run.anchors, transcript, &mut run.warnings);
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockEntry, MockGateway, MockScript};

    fn sentence(index: usize, text: &str, start: f64, duration: f64) -> TranscriptSentence {
        TranscriptSentence {
            index,
            text: text.into(),
            start_s: start,
            duration_s: duration,
        }
    }

    fn transcript() -> Vec<TranscriptSentence> {
        vec![
            sentence(0, "we load the tidyverse first", 0.0, 2.0),
            sentence(1, "then read the csv file", 2.0, 3.0),
            sentence(2, "now a histogram of the median", 5.0, 4.0),
            sentence(3, "the bins look too wide", 9.0, 2.5),
        ]
    }

    fn anchor(goal: &str, idx: &[usize]) -> RetrievedAnchor {
        RetrievedAnchor {
            goal_name: goal.into(),
            summary: goal.into(),
            sentence_text: String::new(),
            matched_indices: idx.to_vec(),
        }
    }

    #[test]
    fn parses_tuple_list() {
        let reply = "[\n    (\"Load data\", \"They load the data.\"),\n    ('Visualize the data', \"A histogram, it's wide.\"),\n]";
        let pairs = parse_summary_reply(reply).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].1, "A histogram, it's wide.");
        assert!(parse_summary_reply("not a list").is_none());
        assert_eq!(
            parse_summary_reply(r#"[["a","b"]]"#).unwrap(),
            vec![("a".into(), "b".into())]
        );
    }

    #[test]
    fn single_sentence_segment() {
        let t = transcript();
        let segs = rearrange(&[anchor("Visualize", &[2])], &t, &mut Vec::new());
        assert_eq!(segs[0].start_s, 5.0);
        assert_eq!(segs[0].end_s, 9.0);
    }

    #[test]
    fn shuffled_anchors_sorted_and_merged() {
        let t = transcript();
        let mut w = Vec::new();
        let segs = rearrange(
            &[anchor("V", &[2, 3]), anchor("L", &[0]), anchor("L", &[1])],
            &t,
            &mut w,
        );
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].goal_name, "L");
        assert_eq!(segs[0].sentence_range, [0, 1]);
        assert!(w.is_empty());
    }

    #[test]
    fn overlap_truncates_earlier() {
        let t = transcript();
        let mut w = Vec::new();
        let segs = rearrange(&[anchor("L", &[0, 2]), anchor("V", &[2, 3])], &t, &mut w);
        assert_eq!(segs[0].sentence_range, [0, 1]);
        assert_eq!(segs[0].end_s, 5.0);
        assert_eq!(w.len(), 1);
        let segs = rearrange(&[anchor("L", &[2]), anchor("V", &[2, 3])], &t, &mut Vec::new());
        assert_eq!(segs.len(), 1);
    }

    #[test]
    fn verbatim_summary_skips_gateway() {
        let t = transcript();
        let gw = MockGateway::empty();
        let summaries = vec![SegmentSummary {
            goal_name: "V".into(),
            summary: "now a histogram of the median".into(),
            appearance_index: 0,
        }];
        let a = retrieve(&summaries, &t, &gw, 0.6, &mut Vec::new()).unwrap();
        assert_eq!(a[0].matched_indices, vec![2]);
        assert!(gw.calls().is_empty());
        assert_eq!(gw.embed_calls(), 0);
    }

    #[test]
    fn unresolved_anchor_errors() {
        let t = transcript();
        let gw = MockGateway::new(MockScript::new(vec![MockEntry::new(
            "Retrieve",
            r#"[{"category":"V","sentences":["quantum chromodynamics lattice"]}]"#,
        )]));
        let summaries = vec![SegmentSummary {
            goal_name: "V".into(),
            summary: "something".into(),
            appearance_index: 0,
        }];
        let err = retrieve(&summaries, &t, &gw, 0.99, &mut Vec::new()).unwrap_err();
        assert!(matches!(err, SegmentationError::UnresolvedAnchor { .. }));
    }

    #[test]
    fn chunking_by_time() {
        let t = transcript();
        let chunks = chunk_transcript(&t, 5.0);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1][0].index, 2);
        assert!(chunk_transcript(&[], 5.0).is_empty());
    }
}
