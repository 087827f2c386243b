//! The live tutoring loop.
//!
//! A [`Session`] owns its message queue. [`Session::step`] sends the head of
//! the queue, [`Session::handle_event`] reacts to what the client reports.
//! Only graded replies to a pending question touch the student model; code
//! failures and questions get an extra mentor message and leave the queue
//! where it was.

mod blank;
mod envelope;
mod grade;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blank::{anchor_tokens, blank_out, find_code_line, identifier_pool, identifiers, BlankError, BlankedLine};
pub use envelope::{BlankSlot, Clip, EventEnvelope, InboundEvent, OutboundMessage, OutboundType};
pub use grade::{grade, grade_blanks, grade_choice, parse_rubric, Answer, Expected};

use crate::dsl::{DslDocument, Interaction, MessageQueue, QueueMessage, KNOWLEDGE_PARAM, VIDEO_CLIP_PARAM};
use crate::gateway::{trim_history, ChatTurn, GatewayError, GenerationRequest, LlmGateway, Role, Stage};
use crate::ingestion::CodeArtifact;
use crate::knowledge::{relevant_cells, KnowledgeItem};
use crate::planner::MentorMove;
use crate::prompts;
use crate::segmentation::VideoSegment;
use crate::student::{BktParams, Observation, Outcome, Signal, SignalKind, StudentError, StudentModel};

pub const CODE_LINE_PARAM: &str = "code-line-with-blanks";
pub const CODE_BLOCK_PARAM: &str = "code-block";
pub const STUDENT_ANSWER_PARAM: &str = "student-answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingVideo,
    Sending,
    AwaitingResponse,
    Idle,
    Done,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("`{event}` is not accepted while the session is {phase:?}")]
    WrongPhase { event: &'static str, phase: Phase },
    #[error("parameter `{name}` of `{knowledge_id}` could not be resolved")]
    UnresolvedParameter { name: String, knowledge_id: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("malformed {what} reply: {raw}")]
    MalformedReply { what: &'static str, raw: String },
    #[error(transparent)]
    Student(#[from] StudentError),
}

/// Immutable inputs of a session, fixed when it is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionContext {
    pub topic: String,
    pub video_type: String,
    pub kernel_language: String,
    /// Keyed by queue knowledge id (`"{segment key}#{entry index}"`).
    pub knowledge: IndexMap<String, KnowledgeItem>,
    pub segments: IndexMap<String, VideoSegment>,
    pub code: CodeArtifact,
    pub dsl: DslDocument,
    pub bkt_defaults: BktParams,
    pub seed: u64,
    pub history_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuestion {
    pub knowledge_id: String,
    pub anchor: String,
    pub method: MentorMove,
    pub interaction: Interaction,
    pub expected: Expected,
}

/// How many of each thing happened; the liveness and gating checks read these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub dequeued: usize,
    pub blocking_sent: usize,
    pub responses: usize,
    pub extras: usize,
    pub model_updates: usize,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Message(OutboundMessage),
    Blocked(Phase),
    Done,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventOutcome {
    pub replies: Vec<OutboundMessage>,
    pub observation: Option<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub student_id: String,
    pub context: SessionContext,
    pub queue: MessageQueue,
    pub history: Vec<ChatTurn>,
    pub phase: Phase,
    pub pending: Option<PendingQuestion>,
    pub current_segment: Option<String>,
    pub counters: Counters,
    pub initial_queue_len: usize,
    seq: u64,
    farewell_sent: bool,
}

struct Prepared {
    envelope: OutboundMessage,
    history_text: String,
    pending: Option<PendingQuestion>,
    awaits_video: bool,
}

fn strip_fence(reply: &str) -> &str {
    reply
        .trim()
        .trim_start_matches("```json")
        .trim_start_matches("```")
        .trim_end_matches("```")
        .trim()
}

#[derive(Deserialize)]
struct McqReply {
    question: String,
    options: Vec<String>,
    answer: String,
}

impl Session {
    pub fn new(
        session_id: impl Into<String>,
        student_id: impl Into<String>,
        context: SessionContext,
        queue: MessageQueue,
    ) -> Self {
        let initial_queue_len = queue.len();
        Self {
            session_id: session_id.into(),
            student_id: student_id.into(),
            context,
            queue,
            history: Vec::new(),
            phase: Phase::Sending,
            pending: None,
            current_segment: None,
            counters: Counters::default(),
            initial_queue_len,
            seq: 0,
            farewell_sent: false,
        }
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn push_extra(&mut self, role: Role, text: impl Into<String>) {
        self.history.push(ChatTurn::new(role, text));
        self.counters.extras += 1;
    }

    fn anchor_for(&self, msg: &QueueMessage) -> String {
        self.context
            .knowledge
            .get(&msg.knowledge_id)
            .map(|k| k.anchor_span.clone())
            .unwrap_or_else(|| msg.knowledge.clone())
    }

    fn clip_of(&self, segment_key: &str) -> Option<Clip> {
        self.context.segments.get(segment_key).map(|s| Clip {
            start_s: s.start_s,
            end_s: s.end_s,
        })
    }

    fn current_knowledge(&self) -> String {
        self.pending
            .as_ref()
            .map(|p| p.knowledge_id.clone())
            .or_else(|| self.queue.peek().map(|m| m.knowledge_id.clone()))
            .and_then(|id| self.context.knowledge.get(&id).map(KnowledgeItem::labeled_text))
            .unwrap_or_default()
    }

    fn generate(&self, user_prompt: String, gateway: &dyn LlmGateway) -> Result<String, GatewayError> {
        let system = prompts::conversation_system(
            &self.context.topic,
            &self.context.video_type,
            &self.context.kernel_language,
        );
        let history = trim_history(&self.history, self.context.history_budget);
        gateway.generate(&GenerationRequest::new(Stage::Conversation, system, user_prompt).with_history(history))
    }

    /// Sends the next queue message, or reports why nothing can be sent.
    pub fn step(&mut self, gateway: &dyn LlmGateway) -> Result<StepOutcome, SessionError> {
        match self.phase {
            Phase::AwaitingVideo | Phase::AwaitingResponse => return Ok(StepOutcome::Blocked(self.phase)),
            Phase::Done if self.farewell_sent => return Ok(StepOutcome::Done),
            _ => {}
        }
        let Some(head) = self.queue.peek().cloned() else {
            self.phase = Phase::Done;
            self.farewell_sent = true;
            let seq = self.next_seq();
            return Ok(StepOutcome::Message(OutboundMessage::text(
                seq,
                "That's the end of the guided session. Feel free to ask me anything else about the video.",
            )));
        };

        let entering = self.current_segment.as_deref() != Some(head.segment_key.as_str());
        let head_is_clip = head.method == MentorMove::Modeling && head.parameters.contains_key(VIDEO_CLIP_PARAM);
        if entering {
            self.current_segment = Some(head.segment_key.clone());
            if !head_is_clip {
                if let Some(clip) = self.clip_of(&head.segment_key) {
                    self.phase = Phase::AwaitingVideo;
                    let seq = self.next_seq();
                    return Ok(StepOutcome::Message(OutboundMessage {
                        kind: OutboundType::PlayClip,
                        clip: Some(clip),
                        ..OutboundMessage::text(seq, format!("Watch this part of the video: {}", head.segment_key))
                    }));
                }
            }
        }

        let prepared = self.prepare(&head, gateway)?;
        let sent = self.queue.dequeue();
        debug_assert_eq!(sent.as_ref(), Some(&head));
        self.counters.dequeued += 1;
        self.history.push(ChatTurn::new(Role::Mentor, prepared.history_text));
        let mut envelope = prepared.envelope;
        envelope.seq = self.next_seq();
        if head.need_response {
            self.counters.blocking_sent += 1;
            self.phase = Phase::AwaitingResponse;
            self.pending = Some(prepared.pending.unwrap_or(PendingQuestion {
                knowledge_id: head.knowledge_id.clone(),
                anchor: self.anchor_for(&head),
                method: head.method,
                interaction: head.interaction,
                expected: Expected::interaction_default(head.interaction),
            }));
        } else if prepared.awaits_video {
            self.phase = Phase::AwaitingVideo;
        } else {
            self.phase = Phase::Sending;
        }
        Ok(StepOutcome::Message(envelope))
    }

    fn resolve(&self, msg: &QueueMessage) -> Result<(IndexMap<String, String>, Option<BlankedLine>), SessionError> {
        let anchor = self.anchor_for(msg);
        let unresolved = |name: &str| SessionError::UnresolvedParameter {
            name: name.to_string(),
            knowledge_id: msg.knowledge_id.clone(),
        };
        let segment_text = self
            .context
            .segments
            .get(&msg.segment_key)
            .map(|s| s.summary.clone())
            .unwrap_or_default();
        let code_line = || -> Option<(usize, String)> {
            if let Some((cell, line)) = find_code_line(&self.context.code, &anchor) {
                return Some((cell, line.to_string()));
            }
            let cells = relevant_cells(&self.context.code, &format!("{segment_text} {anchor}"));
            cells.iter().find_map(|c| {
                let idx = self.context.code.cells.iter().position(|x| std::ptr::eq(x, *c))?;
                c.text.lines().find(|l| l.contains('(')).map(|l| (idx, l.to_string()))
            })
        };

        let mut values = IndexMap::new();
        let mut blanked = None;
        for (name, bound) in &msg.parameters {
            let value = match (name.as_str(), bound) {
                (_, Some(v)) => v.clone(),
                (KNOWLEDGE_PARAM, None) => msg.knowledge.clone(),
                (CODE_LINE_PARAM, None) => {
                    let (_, line) = code_line().ok_or_else(|| unresolved(name))?;
                    let pool = identifier_pool(&self.context.code);
                    let b = blank_out(line.trim(), &anchor, &pool, self.context.seed).map_err(|_| unresolved(name))?;
                    let shown = b.display_line.clone();
                    blanked = Some(b);
                    shown
                }
                (CODE_BLOCK_PARAM, None) => match code_line() {
                    Some((cell, _)) => self.context.code.cells[cell].text.clone(),
                    None if !self.context.code.is_empty() => self
                        .context
                        .code
                        .cells
                        .iter()
                        .map(|c| c.text.as_str())
                        .collect::<Vec<_>>()
                        .join("\n\n"),
                    None => return Err(unresolved(name)),
                },
                (STUDENT_ANSWER_PARAM, None) => self
                    .history
                    .iter()
                    .rev()
                    .find(|t| t.role == Role::Student)
                    .map(|t| t.text.clone())
                    .ok_or_else(|| unresolved(name))?,
                (VIDEO_CLIP_PARAM, None) => {
                    let clip = self.clip_of(&msg.segment_key).ok_or_else(|| unresolved(name))?;
                    format!("{:.2}s-{:.2}s", clip.start_s, clip.end_s)
                }
                (other, None) => return Err(unresolved(other)),
            };
            values.insert(name.clone(), value);
        }
        Ok((values, blanked))
    }

    fn prepare(&self, msg: &QueueMessage, gateway: &dyn LlmGateway) -> Result<Prepared, SessionError> {
        let (values, blanked) = self.resolve(msg)?;
        let mut prompt = msg.prompt.clone();
        for (name, value) in &values {
            prompt = prompt.replace(&format!("{{{name}}}"), value);
        }

        if msg.method == MentorMove::Modeling && values.contains_key(VIDEO_CLIP_PARAM) {
            let clip = self.clip_of(&msg.segment_key);
            let body = format!(
                "Watch how this step is done in the video ({}).",
                values[VIDEO_CLIP_PARAM]
            );
            return Ok(Prepared {
                envelope: OutboundMessage {
                    kind: OutboundType::PlayClip,
                    clip,
                    method: Some(msg.method),
                    need_response: msg.need_response,
                    ..OutboundMessage::text(0, body.clone())
                },
                history_text: body,
                pending: None,
                awaits_video: clip.is_some(),
            });
        }

        let anchor = self.anchor_for(msg);
        let extra = if msg.interaction == Interaction::MultipleChoice {
            prompts::MCQ_FORMAT
        } else {
            ""
        };
        let user = prompts::mentor_message(&msg.knowledge, msg.method, &msg.action, &prompt, extra);
        let reply = self.generate(user, gateway)?;

        let base = OutboundMessage {
            method: Some(msg.method),
            need_response: msg.need_response,
            ..OutboundMessage::text(0, reply.trim())
        };
        let pending = |expected: Expected| PendingQuestion {
            knowledge_id: msg.knowledge_id.clone(),
            anchor: anchor.clone(),
            method: msg.method,
            interaction: msg.interaction,
            expected,
        };
        let prepared = match msg.interaction {
            Interaction::MultipleChoice => {
                let mcq: McqReply =
                    serde_json::from_str(strip_fence(&reply)).map_err(|_| SessionError::MalformedReply {
                        what: "multiple-choice",
                        raw: reply.clone(),
                    })?;
                let history_text = format!("{}\n{}", mcq.question, mcq.options.join("\n"));
                Prepared {
                    envelope: OutboundMessage {
                        kind: OutboundType::MultipleChoice,
                        body: mcq.question.clone(),
                        options: Some(mcq.options.clone()),
                        ..base
                    },
                    history_text,
                    pending: Some(pending(Expected::Choice {
                        answer: mcq.answer,
                        options: mcq.options,
                    })),
                    awaits_video: false,
                }
            }
            Interaction::FillInBlanks => {
                let (code, slots, expected) = match &blanked {
                    Some(b) => (
                        Some(b.display_line.clone()),
                        Some(
                            b.options
                                .iter()
                                .enumerate()
                                .map(|(i, o)| BlankSlot {
                                    index: i + 1,
                                    options: o.clone(),
                                })
                                .collect(),
                        ),
                        Expected::Blanks {
                            tokens: b.blanks.clone(),
                            line: b.display_line.clone(),
                        },
                    ),
                    None => (None, None, Expected::Ungraded),
                };
                Prepared {
                    history_text: format!("{}\n{}", base.body, code.clone().unwrap_or_default()),
                    envelope: OutboundMessage {
                        kind: OutboundType::FillInBlanks,
                        code,
                        blanks: slots,
                        ..base
                    },
                    pending: Some(pending(expected)),
                    awaits_video: false,
                }
            }
            Interaction::ShowCode => Prepared {
                history_text: base.body.clone(),
                envelope: OutboundMessage {
                    kind: OutboundType::ShowCode,
                    code: values.get(CODE_BLOCK_PARAM).cloned(),
                    ..base
                },
                pending: Some(pending(Expected::CodeRun)),
                awaits_video: false,
            },
            Interaction::PlainText | Interaction::Annotation => {
                let expected = if msg.method == MentorMove::Articulation && msg.interaction == Interaction::PlainText {
                    Expected::Rubric {
                        question: base.body.clone(),
                        knowledge: msg.knowledge.clone(),
                    }
                } else {
                    Expected::Ungraded
                };
                Prepared {
                    history_text: base.body.clone(),
                    envelope: base,
                    pending: Some(pending(expected)),
                    awaits_video: false,
                }
            }
        };
        Ok(prepared)
    }

    fn apply_outcome(
        &mut self,
        pending: &PendingQuestion,
        outcome: Outcome,
        detail: String,
        model: &mut StudentModel,
        gateway: &dyn LlmGateway,
    ) -> Result<Observation, SessionError> {
        model.observe(&pending.anchor, outcome, gateway, &self.context.bkt_defaults)?;
        self.counters.model_updates += 1;
        Ok(Observation {
            outcome,
            source_signal: Signal::now(SignalKind::Response, Some(detail)),
            knowledge_id: pending.knowledge_id.clone(),
        })
    }

    /// Reacts to one client event.
    pub fn handle_event(
        &mut self,
        event: &InboundEvent,
        model: &mut StudentModel,
        gateway: &dyn LlmGateway,
    ) -> Result<EventOutcome, SessionError> {
        let wrong_phase = |phase| SessionError::WrongPhase {
            event: event.name(),
            phase,
        };
        let mut outcome = EventOutcome::default();
        match event {
            InboundEvent::VideoFinished { .. } | InboundEvent::GoOn => match self.phase {
                Phase::AwaitingVideo => self.phase = Phase::Sending,
                Phase::AwaitingResponse => return Err(wrong_phase(self.phase)),
                _ => {}
            },
            InboundEvent::StudentResponse(answer) => {
                if self.phase != Phase::AwaitingResponse {
                    return Err(wrong_phase(self.phase));
                }
                let pending = self
                    .pending
                    .clone()
                    .expect("awaiting a response implies a pending question");
                self.history.push(ChatTurn::new(Role::Student, answer.display()));
                self.counters.responses += 1;
                let graded = grade(&pending.expected, answer, gateway)?;
                if let Some(result) = graded {
                    let obs = self.apply_outcome(&pending, result, answer.display(), model, gateway)?;
                    let text = feedback(&pending.expected, result);
                    self.push_extra(Role::Mentor, text.clone());
                    let seq = self.next_seq();
                    outcome.replies.push(OutboundMessage::text(seq, text));
                    outcome.observation = Some(obs);
                }
                self.pending = None;
                self.phase = Phase::Idle;
            }
            InboundEvent::CodeExecution { success, stderr, code } => {
                let awaiting_run = self.phase == Phase::AwaitingResponse
                    && matches!(self.pending.as_ref().map(|p| &p.expected), Some(Expected::CodeRun));
                if awaiting_run {
                    let pending = self.pending.clone().expect("checked above");
                    let report = if *success {
                        "code ran successfully".to_string()
                    } else {
                        format!("code failed: {}", stderr.as_deref().unwrap_or(""))
                    };
                    self.history.push(ChatTurn::new(Role::Student, report.clone()));
                    self.counters.responses += 1;
                    let result = if *success { Outcome::Correct } else { Outcome::Incorrect };
                    outcome.observation = Some(self.apply_outcome(&pending, result, report, model, gateway)?);
                    let text = if *success {
                        "Your code ran successfully. Nice work verifying it end to end.".to_string()
                    } else {
                        self.generate(
                            prompts::corrective(
                                stderr.as_deref().unwrap_or(""),
                                code.as_deref().unwrap_or(""),
                                &self.current_knowledge(),
                            ),
                            gateway,
                        )?
                    };
                    self.push_extra(Role::Mentor, text.clone());
                    let seq = self.next_seq();
                    outcome.replies.push(OutboundMessage::text(seq, text));
                    self.pending = None;
                    self.phase = Phase::Idle;
                } else if !*success {
                    let text = self.generate(
                        prompts::corrective(
                            stderr.as_deref().unwrap_or(""),
                            code.as_deref().unwrap_or(""),
                            &self.current_knowledge(),
                        ),
                        gateway,
                    )?;
                    self.push_extra(Role::Mentor, text.clone());
                    let seq = self.next_seq();
                    outcome.replies.push(OutboundMessage::text(seq, text));
                }
            }
            InboundEvent::Question { text } => {
                let prompt = if self.phase == Phase::Done {
                    prompts::explore(text)
                } else {
                    prompts::help(text, &self.current_knowledge())
                };
                let reply = self.generate(prompt, gateway)?;
                self.push_extra(Role::Student, text.clone());
                self.push_extra(Role::Mentor, reply.clone());
                let seq = self.next_seq();
                let mut msg = OutboundMessage::text(seq, reply);
                if self.phase == Phase::Done {
                    msg.method = Some(MentorMove::Exploration);
                }
                outcome.replies.push(msg);
            }
        }
        self.counters.events += 1;
        Ok(outcome)
    }
}

fn feedback(expected: &Expected, outcome: Outcome) -> String {
    match (expected, outcome) {
        (Expected::Choice { answer, .. }, Outcome::Correct) => format!("That's right: {answer}."),
        (Expected::Choice { answer, .. }, Outcome::Incorrect) => {
            format!("Not quite. The correct answer is: {answer}.")
        }
        (Expected::Blanks { tokens, .. }, Outcome::Correct) => {
            format!("All blanks are correct ({}).", tokens.join(", "))
        }
        (Expected::Blanks { tokens, .. }, Outcome::Incorrect) => {
            format!("Not quite. The blanks should be: {}.", tokens.join(", "))
        }
        (_, Outcome::Correct) => "Good explanation, that matches the key idea.".into(),
        (_, Outcome::Incorrect) => "Not quite there yet. Let's revisit the key idea together.".into(),
    }
}
