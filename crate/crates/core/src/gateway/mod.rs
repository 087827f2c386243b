//! Boundary for text generation and embeddings.
//!
//! Everything that talks to a language model goes through [`LlmGateway`].
//! Two backends exist: [`LiveGateway`] for an OpenAI-compatible HTTP API and
//! [`MockGateway`], a scripted stand-in used by every offline test.

mod live;
mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::{LiveConfig, LiveGateway, RetryPolicy, StageModels};
pub use mock::{mock_embedding, MockEntry, MockGateway, MockScript, RecordedCall, MOCK_EMBED_DIM};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status}")]
    Status { status: u16 },
    #[error("unexpected backend payload: {0}")]
    Decode(String),
    #[error("mock script exhausted; no entry matches prompt starting `{prompt_prefix}`")]
    MockExhausted { prompt_prefix: String },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding backend unavailable: {0}")]
    EmbeddingUnavailable(String),
}

/// Which pipeline stage issued a request; live backends pick a model per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Segmentation,
    Knowledge,
    Conversation,
    Grading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Mentor,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
}

impl ChatTurn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub stage: Stage,
    pub system_prompt: String,
    pub history: Vec<ChatTurn>,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenerationRequest {
    pub fn new(stage: Stage, system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            stage,
            system_prompt: system_prompt.into(),
            history: Vec::new(),
            user_prompt: user_prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 1024,
        }
    }

    pub fn with_history(mut self, history: Vec<ChatTurn>) -> Self {
        self.history = history;
        self
    }
}

pub trait LlmGateway: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError>;

    /// Delivers the reply incrementally when the backend can; the default
    /// hands over the whole reply as one chunk.
    fn generate_streaming(
        &self,
        request: &GenerationRequest,
        on_chunk: &mut dyn FnMut(&str),
    ) -> Result<String, GatewayError> {
        let text = self.generate(request)?;
        on_chunk(&text);
        Ok(text)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Whitespace-token approximation of the history size.
pub fn count_history_tokens(history: &[ChatTurn]) -> usize {
    history.iter().map(|t| t.text.split_whitespace().count()).sum()
}

/// Drops the oldest non-system turns until the history fits `budget`.
/// System turns are pinned and never dropped.
pub fn trim_history(history: &[ChatTurn], budget: usize) -> Vec<ChatTurn> {
    let mut kept: Vec<ChatTurn> = history.to_vec();
    let mut total = count_history_tokens(&kept);
    let mut i = 0;
    while total > budget && i < kept.len() {
        if kept[i].role == Role::System {
            i += 1;
            continue;
        }
        total -= kept[i].text.split_whitespace().count();
        kept.remove(i);
    }
    kept
}
