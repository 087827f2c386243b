//! Bayesian knowledge tracing over knowledge components keyed by anchor text.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{cosine, LlmGateway};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BktError {
    #[error("{name} = {value} is not a probability")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("posterior denominator is zero (p_mastery={p_mastery}, p_slip={p_slip}, p_guess={p_guess})")]
    Degenerate { p_mastery: f64, p_slip: f64, p_guess: f64 },
}

#[derive(Debug, Error)]
pub enum StudentError {
    #[error(transparent)]
    Bkt(#[from] BktError),
    #[error("anchor text is empty")]
    EmptyAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BktParams {
    pub p_mastery: f64,
    pub p_transit: f64,
    pub p_slip: f64,
    pub p_guess: f64,
}

impl Default for BktParams {
    fn default() -> Self {
        Self {
            p_mastery: 0.1,
            p_transit: 0.1,
            p_slip: 0.1,
            p_guess: 0.2,
        }
    }
}

/// Mastery cut points shared by the planner and the integration rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub weak: f64,
    pub fade: f64,
    pub strong: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            weak: 0.3,
            fade: 0.5,
            strong: 0.7,
        }
    }
}

impl Thresholds {
    pub fn is_weak(&self, p: f64) -> bool {
        p < self.weak
    }

    /// Scaffolding fades out above this level.
    pub fn is_faded(&self, p: f64) -> bool {
        p > self.fade
    }

    pub fn is_mastered(&self, p: f64) -> bool {
        p > self.strong
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Video,
    Response,
    Error,
    Help,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub kind: SignalKind,
    pub timestamp_ms: u64,
    /// Failing code for `Error`, the question for `Help`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Signal {
    pub fn now(kind: SignalKind, detail: Option<String>) -> Self {
        Self {
            kind,
            timestamp_ms: now_ms(),
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub outcome: Outcome,
    pub source_signal: Signal,
    pub knowledge_id: String,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn check(name: &'static str, value: f64) -> Result<(), BktError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(BktError::InvalidProbability { name, value })
    }
}

/// Conditions the mastery estimate on one observed answer.
pub fn posterior(p_mastery: f64, p_slip: f64, p_guess: f64, outcome: Outcome) -> Result<f64, BktError> {
    check("p_mastery", p_mastery)?;
    check("p_slip", p_slip)?;
    check("p_guess", p_guess)?;
    let (known, unknown) = match outcome {
        Outcome::Correct => (p_mastery * (1.0 - p_slip), (1.0 - p_mastery) * p_guess),
        Outcome::Incorrect => (p_mastery * p_slip, (1.0 - p_mastery) * (1.0 - p_guess)),
    };
    let denominator = known + unknown;
    if denominator == 0.0 {
        return Err(BktError::Degenerate {
            p_mastery,
            p_slip,
            p_guess,
        });
    }
    Ok((known / denominator).clamp(0.0, 1.0))
}

/// Learning step applied after conditioning.
pub fn transit(p: f64, p_transit: f64) -> f64 {
    (p + (1.0 - p) * p_transit).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeComponentState {
    #[serde(rename = "anchor")]
    pub anchor_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    pub embedding: Vec<f64>,
    pub p_mastery: f64,
    pub p_transit: f64,
    pub p_slip: f64,
    pub p_guess: f64,
    pub attempts: u32,
    #[serde(default)]
    pub last_updated: u64,
}

impl KnowledgeComponentState {
    pub fn new(anchor_text: impl Into<String>, embedding: Vec<f64>, params: &BktParams) -> Self {
        Self {
            anchor_text: anchor_text.into(),
            aliases: Vec::new(),
            embedding,
            p_mastery: params.p_mastery,
            p_transit: params.p_transit,
            p_slip: params.p_slip,
            p_guess: params.p_guess,
            attempts: 0,
            last_updated: now_ms(),
        }
    }

    fn answers_to(&self, anchor: &str) -> bool {
        self.anchor_text == anchor || self.aliases.iter().any(|a| a == anchor)
    }
}

/// Posterior followed by the transit step; `attempts` is incremented.
pub fn bkt_update(state: &KnowledgeComponentState, outcome: Outcome) -> Result<KnowledgeComponentState, BktError> {
    check("p_transit", state.p_transit)?;
    let conditioned = posterior(state.p_mastery, state.p_slip, state.p_guess, outcome)?;
    let mut next = state.clone();
    next.p_mastery = transit(conditioned, state.p_transit);
    next.attempts += 1;
    next.last_updated = now_ms();
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingObservation {
    pub anchor_text: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserveResult {
    Updated(usize),
    Created(usize),
    /// The embedding backend failed; the observation waits in `pending`.
    Deferred,
}

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub student_id: String,
    pub components: Vec<KnowledgeComponentState>,
    #[serde(default = "default_threshold")]
    pub similarity_threshold: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pending: Vec<PendingObservation>,
}

fn default_threshold() -> f64 {
    DEFAULT_SIMILARITY_THRESHOLD
}

impl StudentModel {
    pub fn new(student_id: impl Into<String>, similarity_threshold: f64) -> Self {
        Self {
            student_id: student_id.into(),
            components: Vec::new(),
            similarity_threshold,
            pending: Vec::new(),
        }
    }

    /// Index and cosine of the component closest to `embedding`.
    pub fn nearest(&self, embedding: &[f64]) -> Option<(usize, f64)> {
        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| (i, cosine(&c.embedding, embedding)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
    }

    fn locate(&self, anchor: &str, embedding: &[f64]) -> Option<usize> {
        if let Some(i) = self.components.iter().position(|c| c.answers_to(anchor)) {
            return Some(i);
        }
        self.nearest(embedding)
            .filter(|(_, sim)| *sim >= self.similarity_threshold)
            .map(|(i, _)| i)
    }

    /// Applies one observation, merging into a similar component when one
    /// exists and creating a component from `defaults` otherwise.
    pub fn observe(
        &mut self,
        anchor_text: &str,
        outcome: Outcome,
        embedder: &dyn LlmGateway,
        defaults: &BktParams,
    ) -> Result<ObserveResult, StudentError> {
        let anchor = anchor_text.trim();
        if anchor.is_empty() {
            return Err(StudentError::EmptyAnchor);
        }
        if !self.pending.is_empty() && self.flush_pending(embedder, defaults)? > 0 {
            // Still failing: keep arrival order by queueing behind the backlog.
            self.pending.push(PendingObservation {
                anchor_text: anchor.to_string(),
                outcome,
            });
            return Ok(ObserveResult::Deferred);
        }
        match self.apply(anchor, outcome, embedder, defaults) {
            Ok(result) => Ok(result),
            Err(ApplyError::Gateway) => {
                self.pending.push(PendingObservation {
                    anchor_text: anchor.to_string(),
                    outcome,
                });
                Ok(ObserveResult::Deferred)
            }
            Err(ApplyError::Bkt(e)) => Err(e.into()),
        }
    }

    /// Replays deferred observations in order; returns how many remain.
    pub fn flush_pending(&mut self, embedder: &dyn LlmGateway, defaults: &BktParams) -> Result<usize, StudentError> {
        while let Some(next) = self.pending.first().cloned() {
            match self.apply(&next.anchor_text, next.outcome, embedder, defaults) {
                Ok(_) => {
                    self.pending.remove(0);
                }
                Err(ApplyError::Gateway) => break,
                Err(ApplyError::Bkt(e)) => return Err(e.into()),
            }
        }
        Ok(self.pending.len())
    }

    fn apply(
        &mut self,
        anchor: &str,
        outcome: Outcome,
        embedder: &dyn LlmGateway,
        defaults: &BktParams,
    ) -> Result<ObserveResult, ApplyError> {
        let embedding = match self.components.iter().position(|c| c.answers_to(anchor)) {
            Some(i) => {
                let updated = bkt_update(&self.components[i], outcome).map_err(ApplyError::Bkt)?;
                self.components[i] = updated;
                return Ok(ObserveResult::Updated(i));
            }
            None => embedder.embed(anchor).map_err(|_| ApplyError::Gateway)?,
        };
        if let Some(i) = self.locate(anchor, &embedding) {
            let mut updated = bkt_update(&self.components[i], outcome).map_err(ApplyError::Bkt)?;
            if !updated.answers_to(anchor) {
                updated.aliases.push(anchor.to_string());
            }
            self.components[i] = updated;
            return Ok(ObserveResult::Updated(i));
        }
        let fresh = KnowledgeComponentState::new(anchor, embedding, defaults);
        let updated = bkt_update(&fresh, outcome).map_err(ApplyError::Bkt)?;
        self.components.push(updated);
        Ok(ObserveResult::Created(self.components.len() - 1))
    }

    /// Mastery of the component matching `anchor_text`, if any is within the
    /// similarity threshold. Embedding failures read as "absent".
    pub fn mastery_of(&self, anchor_text: &str, embedder: &dyn LlmGateway) -> Option<f64> {
        let anchor = anchor_text.trim();
        if self.components.is_empty() || anchor.is_empty() {
            return None;
        }
        if let Some(c) = self.components.iter().find(|c| c.answers_to(anchor)) {
            return Some(c.p_mastery);
        }
        let embedding = embedder.embed(anchor).ok()?;
        self.locate(anchor, &embedding).map(|i| self.components[i].p_mastery)
    }

    pub fn total_attempts(&self) -> u64 {
        self.components.iter().map(|c| u64::from(c.attempts)).sum()
    }
}

enum ApplyError {
    Gateway,
    Bkt(BktError),
}
