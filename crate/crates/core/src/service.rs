//! Transport-neutral service: session lifecycle, event ingestion, message
//! delivery and student-model inspection over a [`Store`].
//!
//! Events of one session are serialized by a per-session lock; model writes
//! of one student by a per-student lock (sessions first, then students).
//! Every observation is on disk before the event is acked.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::DslDocument;
use crate::gateway::LlmGateway;
use crate::ingestion::{CodeArtifact, ExpertConfig, TranscriptSentence};
use crate::orchestrator::{EventEnvelope, OutboundMessage, Phase, SessionError, StepOutcome};
use crate::pipeline::{self, PipelineError};
use crate::store::{recover, validate_id, SessionRecord, Store, StoreError};
use crate::student::{now_ms, Observation, StudentModel, DEFAULT_SIMILARITY_THRESHOLD};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` already exists")]
    SessionExists(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("pipeline failed: {0}")]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub student_id: String,
    pub created_at: u64,
    pub video_label: String,
    pub status: SessionStatus,
    pub queue_len: usize,
    pub phase: Phase,
}

impl SessionDescriptor {
    fn of(record: &SessionRecord) -> Self {
        let s = &record.session;
        Self {
            session_id: s.session_id.clone(),
            student_id: s.student_id.clone(),
            created_at: record.created_at,
            video_label: s.context.topic.clone(),
            status: if s.phase == Phase::Done {
                SessionStatus::Done
            } else {
                SessionStatus::Active
            },
            queue_len: s.queue.len(),
            phase: s.phase,
        }
    }
}

/// A session request: the expert config plus optional inline inputs. When
/// the transcript or code is absent it is loaded from the config's sources.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub student_id: String,
    pub config: ExpertConfig,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub transcript: Option<Vec<TranscriptSentence>>,
    #[serde(default)]
    pub code: Option<CodeArtifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAck {
    pub duplicate: bool,
    pub replies: Vec<OutboundMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Delivery {
    Message { message: OutboundMessage },
    Blocked { phase: Phase },
    Done,
}

type Slot<T> = Arc<Mutex<T>>;

pub struct TutorService {
    store: Arc<dyn Store>,
    gateway: Arc<dyn LlmGateway>,
    input_base: Option<std::path::PathBuf>,
    fetch: crate::ingestion::FetchPolicy,
    sessions: Mutex<HashMap<String, Slot<SessionRecord>>>,
    students: Mutex<HashMap<String, Arc<RwLock<()>>>>,
    creating: Mutex<()>,
}

impl TutorService {
    /// Opens the service and repairs any commit a crash interrupted.
    pub fn new(store: Arc<dyn Store>, gateway: Arc<dyn LlmGateway>) -> Result<Self, ServiceError> {
        recover(store.as_ref())?;
        Ok(Self {
            store,
            gateway,
            input_base: None,
            fetch: Default::default(),
            sessions: Mutex::new(HashMap::new()),
            students: Mutex::new(HashMap::new()),
            creating: Mutex::new(()),
        })
    }

    /// Directory that relative transcript/code sources are resolved against.
    pub fn with_inputs(mut self, base: Option<std::path::PathBuf>, fetch: crate::ingestion::FetchPolicy) -> Self {
        self.input_base = base;
        self.fetch = fetch;
        self
    }

    fn student_lock(&self, student_id: &str) -> Arc<RwLock<()>> {
        self.students
            .lock()
            .expect("student table")
            .entry(student_id.to_string())
            .or_default()
            .clone()
    }

    fn session_slot(&self, session_id: &str) -> Result<Slot<SessionRecord>, ServiceError> {
        validate_id(session_id).map_err(|_| ServiceError::UnknownSession(session_id.to_string()))?;
        let mut table = self.sessions.lock().expect("session table");
        if let Some(slot) = table.get(session_id) {
            return Ok(slot.clone());
        }
        let record = self
            .store
            .load_session(session_id)?
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        let slot = Arc::new(Mutex::new(record));
        table.insert(session_id.to_string(), slot.clone());
        Ok(slot)
    }

    fn load_model(&self, student_id: &str) -> Result<StudentModel, ServiceError> {
        Ok(self
            .store
            .load_model(student_id)?
            .unwrap_or_else(|| StudentModel::new(student_id, DEFAULT_SIMILARITY_THRESHOLD)))
    }

    fn next_session_id(&self) -> Result<String, ServiceError> {
        let mut n = self.store.session_ids()?.len() + 1;
        loop {
            let id = format!("sess-{n:04}");
            if self.store.load_session(&id)?.is_none() {
                return Ok(id);
            }
            n += 1;
        }
    }

    /// Runs the offline pipeline for the student and stores the new session.
    pub fn create_session(&self, request: CreateSession) -> Result<SessionDescriptor, ServiceError> {
        validate_id(&request.student_id)?;
        let config = request.config;
        let (transcript, code) = match (request.transcript, request.code) {
            (Some(t), Some(c)) => (t, c),
            (t, c) => {
                let (lt, lc) = pipeline::load_inputs(&config, self.input_base.as_deref(), self.fetch)
                    .map_err(PipelineError::from)?;
                (t.unwrap_or(lt), c.unwrap_or(lc))
            }
        };

        let _creating = self.creating.lock().expect("create lock");
        let session_id = match request.session_id {
            Some(id) => {
                validate_id(&id)?;
                if self.store.load_session(&id)?.is_some() {
                    return Err(ServiceError::SessionExists(id));
                }
                id
            }
            None => self.next_session_id()?,
        };

        let lock = self.student_lock(&request.student_id);
        let _guard = lock.write().expect("student lock");
        let model = match self.store.load_model(&request.student_id)? {
            Some(m) => m,
            None => {
                let fresh = StudentModel::new(&request.student_id, config.options.similarity_threshold);
                self.store.save_model(&fresh)?;
                fresh
            }
        };
        let (session, _) =
            pipeline::create_session(&session_id, &config, &transcript, &code, &model, self.gateway.as_ref())?;
        let record = SessionRecord {
            session,
            created_at: now_ms(),
            processed: Default::default(),
            model_snapshot: None,
        };
        self.store.save_session(&record)?;
        let descriptor = SessionDescriptor::of(&record);
        self.sessions
            .lock()
            .expect("session table")
            .insert(session_id, Arc::new(Mutex::new(record)));
        Ok(descriptor)
    }

    pub fn describe(&self, session_id: &str) -> Result<SessionDescriptor, ServiceError> {
        let slot = self.session_slot(session_id)?;
        let record = slot.lock().expect("session lock");
        Ok(SessionDescriptor::of(&record))
    }

    /// Delivers the next queued message, at most once.
    pub fn next_message(&self, session_id: &str) -> Result<Delivery, ServiceError> {
        let slot = self.session_slot(session_id)?;
        let mut record = slot.lock().expect("session lock");
        let mut next = record.clone();
        let outcome = next.session.step(self.gateway.as_ref())?;
        if let StepOutcome::Blocked(phase) = outcome {
            return Ok(Delivery::Blocked { phase });
        }
        if outcome != StepOutcome::Done {
            self.store.save_session(&next)?;
            *record = next;
        }
        Ok(match outcome {
            StepOutcome::Message(message) => Delivery::Message { message },
            StepOutcome::Blocked(phase) => Delivery::Blocked { phase },
            StepOutcome::Done => Delivery::Done,
        })
    }

    /// Applies one client event. A repeated event id returns the first ack.
    pub fn post_event(&self, session_id: &str, envelope: EventEnvelope) -> Result<EventAck, ServiceError> {
        let slot = self.session_slot(session_id)?;
        let mut record = slot.lock().expect("session lock");
        if let Some(replies) = envelope.event_id.as_ref().and_then(|id| record.processed.get(id)) {
            return Ok(EventAck {
                duplicate: true,
                replies: replies.clone(),
                observation: None,
                phase: record.session.phase,
            });
        }

        let lock = self.student_lock(&record.session.student_id);
        let _guard = lock.write().expect("student lock");
        let mut model = self.load_model(&record.session.student_id)?;
        let mut next = record.clone();
        let before = next.session.counters.model_updates;
        let outcome = next
            .session
            .handle_event(&envelope.event, &mut model, self.gateway.as_ref())?;
        let observed = next.session.counters.model_updates != before;
        if let Some(id) = &envelope.event_id {
            next.processed.insert(id.clone(), outcome.replies.clone());
        }
        if observed {
            next.model_snapshot = Some(model.clone());
        }
        self.store.save_session(&next)?;
        if observed {
            self.store.save_model(&model)?;
        }
        let ack = EventAck {
            duplicate: false,
            replies: outcome.replies,
            observation: outcome.observation,
            phase: next.session.phase,
        };
        *record = next;
        Ok(ack)
    }

    /// Read-only snapshot; unknown students get an empty model.
    pub fn get_student_model(&self, student_id: &str) -> Result<StudentModel, ServiceError> {
        validate_id(student_id)?;
        let lock = self.student_lock(student_id);
        let _guard = lock.read().expect("student lock");
        self.load_model(student_id)
    }

    pub fn get_dsl(&self, session_id: &str) -> Result<DslDocument, ServiceError> {
        let slot = self.session_slot(session_id)?;
        let record = slot.lock().expect("session lock");
        Ok(record.session.context.dsl.clone())
    }

    pub fn session_record(&self, session_id: &str) -> Result<SessionRecord, ServiceError> {
        let slot = self.session_slot(session_id)?;
        let record = slot.lock().expect("session lock");
        Ok(record.clone())
    }
}
