//! Drives a whole session from an event script and records a trace.
//!
//! Before each scripted event every sendable message is drained, so the
//! script only has to describe what the student does.

use serde::{Deserialize, Serialize};

use crate::gateway::LlmGateway;
use crate::orchestrator::{EventEnvelope, OutboundMessage, Phase, Session, SessionError, StepOutcome};
use crate::student::{Observation, StudentModel};

/// One send or one handled event, with the session state right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum TraceEntry {
    Sent {
        message: OutboundMessage,
        /// Phase before the send.
        from_phase: Phase,
        queue_len: usize,
        model_updates: usize,
    },
    Event {
        event: EventEnvelope,
        replies: Vec<OutboundMessage>,
        observation: Option<Observation>,
        queue_len: usize,
        model_updates: usize,
        phase: Phase,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub trace: Vec<TraceEntry>,
    pub final_phase: Phase,
    pub initial_queue_len: usize,
    pub observations: Vec<Observation>,
}

impl ReplayReport {
    pub fn messages(&self) -> impl Iterator<Item = &OutboundMessage> {
        self.trace.iter().filter_map(|t| match t {
            TraceEntry::Sent { message, .. } => Some(message),
            TraceEntry::Event { .. } => None,
        })
    }

    pub fn reached_done(&self) -> bool {
        self.final_phase == Phase::Done
    }
}

/// Sends until the session blocks or finishes. Bounded by the queue length
/// plus slack for clips and the farewell.
pub fn drain(session: &mut Session, gateway: &dyn LlmGateway, trace: &mut Vec<TraceEntry>) -> Result<(), SessionError> {
    let limit = 2 * session.queue.len() + 4;
    for _ in 0..limit {
        let from_phase = session.phase;
        match session.step(gateway)? {
            StepOutcome::Message(message) => trace.push(TraceEntry::Sent {
                message,
                from_phase,
                queue_len: session.queue.len(),
                model_updates: session.counters.model_updates,
            }),
            StepOutcome::Blocked(_) | StepOutcome::Done => return Ok(()),
        }
    }
    Ok(())
}

pub fn replay(
    session: &mut Session,
    model: &mut StudentModel,
    gateway: &dyn LlmGateway,
    script: &[EventEnvelope],
) -> Result<ReplayReport, SessionError> {
    let initial_queue_len = session.queue.len();
    let mut trace = Vec::new();
    let mut observations = Vec::new();
    for envelope in script {
        drain(session, gateway, &mut trace)?;
        let outcome = session.handle_event(&envelope.event, model, gateway)?;
        observations.extend(outcome.observation.clone());
        trace.push(TraceEntry::Event {
            event: envelope.clone(),
            replies: outcome.replies,
            observation: outcome.observation,
            queue_len: session.queue.len(),
            model_updates: session.counters.model_updates,
            phase: session.phase,
        });
    }
    drain(session, gateway, &mut trace)?;
    Ok(ReplayReport {
        trace,
        final_phase: session.phase,
        initial_queue_len,
        observations,
    })
}
