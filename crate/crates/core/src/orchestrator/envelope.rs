use serde::{Deserialize, Serialize};

use super::grade::Answer;
use crate::planner::MentorMove;
use crate::student::SignalKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutboundType {
    Text,
    MultipleChoice,
    FillInBlanks,
    ShowCode,
    PlayClip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlankSlot {
    pub index: usize,
    pub options: Vec<String>,
}

/// What the client renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutboundMessage {
    pub seq: u64,
    #[serde(rename = "type")]
    pub kind: OutboundType,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blanks: Option<Vec<BlankSlot>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<Clip>,
    pub need_response: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MentorMove>,
}

impl OutboundMessage {
    pub fn text(seq: u64, body: impl Into<String>) -> Self {
        Self {
            seq,
            kind: OutboundType::Text,
            body: body.into(),
            options: None,
            blanks: None,
            clip: None,
            need_response: false,
            code: None,
            method: None,
        }
    }
}

/// What the client reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InboundEvent {
    VideoFinished {
        #[serde(default)]
        segment_id: Option<String>,
    },
    StudentResponse(Answer),
    CodeExecution {
        success: bool,
        #[serde(default)]
        stderr: Option<String>,
        #[serde(default)]
        code: Option<String>,
    },
    Question {
        text: String,
    },
    GoOn,
}

impl InboundEvent {
    pub fn signal(&self) -> SignalKind {
        match self {
            InboundEvent::VideoFinished { .. } | InboundEvent::GoOn => SignalKind::Video,
            InboundEvent::StudentResponse(_) => SignalKind::Response,
            InboundEvent::CodeExecution { .. } => SignalKind::Error,
            InboundEvent::Question { .. } => SignalKind::Help,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InboundEvent::VideoFinished { .. } => "video_finished",
            InboundEvent::StudentResponse(_) => "student_response",
            InboundEvent::CodeExecution { .. } => "code_execution",
            InboundEvent::Question { .. } => "question",
            InboundEvent::GoOn => "go_on",
        }
    }
}

/// An event plus the client-chosen id used for idempotent delivery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<String>,
    #[serde(flatten)]
    pub event: InboundEvent,
}
