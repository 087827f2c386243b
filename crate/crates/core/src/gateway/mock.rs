use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{GatewayError, GenerationRequest, LlmGateway};

pub const MOCK_EMBED_DIM: usize = 256;

/// One scripted reply. `match` is a substring looked up in the system and
/// user prompt; absent, empty or `"*"` matches anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub reply: String,
}

impl MockEntry {
    pub fn new(pattern: &str, reply: impl Into<String>) -> Self {
        Self {
            pattern: Some(pattern.to_string()),
            reply: reply.into(),
        }
    }

    pub fn any(reply: impl Into<String>) -> Self {
        Self {
            pattern: None,
            reply: reply.into(),
        }
    }

    fn hits(&self, haystack: &str) -> bool {
        match self.pattern.as_deref() {
            None | Some("") | Some("*") => true,
            Some(p) => haystack.contains(p),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        Self { entries }
    }

    pub fn from_json(payload: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(payload)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let payload = std::fs::read_to_string(path)?;
        Self::from_json(&payload).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn extend(&mut self, other: MockScript) {
        self.entries.extend(other.entries);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub prompt: String,
    pub entry: usize,
}

#[derive(Debug, Default)]
struct ScriptState {
    consumed: Vec<bool>,
    calls: Vec<RecordedCall>,
    embeds: usize,
}

/// Scripted backend. Each call takes the first not-yet-used entry whose
/// pattern hits the prompt, so a script replays identically every run.
#[derive(Debug)]
pub struct MockGateway {
    script: MockScript,
    state: Mutex<ScriptState>,
    embeddings_down: AtomicBool,
}

impl MockGateway {
    pub fn new(script: MockScript) -> Self {
        let consumed = vec![false; script.entries.len()];
        Self {
            script,
            state: Mutex::new(ScriptState {
                consumed,
                ..Default::default()
            }),
            embeddings_down: AtomicBool::new(false),
        }
    }

    pub fn empty() -> Self {
        Self::new(MockScript::default())
    }

    /// Makes `embed` fail, for exercising deferred updates.
    pub fn set_embeddings_down(&self, down: bool) {
        self.embeddings_down.store(down, Ordering::SeqCst);
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.state.lock().unwrap().calls.clone()
    }

    pub fn embed_calls(&self) -> usize {
        self.state.lock().unwrap().embeds
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().consumed.iter().filter(|c| !**c).count()
    }
}

impl LlmGateway for MockGateway {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let haystack = format!("{}\n{}", request.system_prompt, request.user_prompt);
        let mut state = self.state.lock().unwrap();
        let hit = self
            .script
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| !state.consumed[*i] && e.hits(&haystack))
            .map(|(i, _)| i);
        match hit {
            Some(i) => {
                state.consumed[i] = true;
                state.calls.push(RecordedCall {
                    prompt: request.user_prompt.clone(),
                    entry: i,
                });
                Ok(self.script.entries[i].reply.clone())
            }
            None => Err(GatewayError::MockExhausted {
                prompt_prefix: request.user_prompt.chars().take(80).collect(),
            }),
        }
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        if self.embeddings_down.load(Ordering::SeqCst) {
            return Err(GatewayError::EmbeddingUnavailable("mock embeddings disabled".into()));
        }
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        self.state.lock().unwrap().embeds += 1;
        Ok(mock_embedding(text))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn add_feature(vec: &mut [f64], feature: &str, weight: f64) {
    let h = fnv1a(feature.as_bytes());
    let slot = (h % vec.len() as u64) as usize;
    let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
    vec[slot] += sign * weight;
}

/// Deterministic feature-hashed embedding: lowercase word unigrams plus
/// character trigrams, L2-normalised. Identical texts embed identically and
/// texts sharing words land close together.
pub fn mock_embedding(text: &str) -> Vec<f64> {
    let mut vec = vec![0.0; MOCK_EMBED_DIM];
    let lower = text.to_lowercase();
    for word in lower
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|w| !w.is_empty())
    {
        add_feature(&mut vec, &format!("w:{word}"), 1.0);
        let padded: Vec<char> = format!("#{word}#").chars().collect();
        for tri in padded.windows(3) {
            let tri: String = tri.iter().collect();
            add_feature(&mut vec, &format!("t:{tri}"), 0.5);
        }
    }
    let norm = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut vec {
            *x /= norm;
        }
    }
    vec
}
