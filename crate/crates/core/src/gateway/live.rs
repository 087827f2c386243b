use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GatewayError, GenerationRequest, LlmGateway, Role, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << attempt.min(16)))
    }
}

/// Model name per pipeline stage. Segmentation reads whole transcripts and
/// defaults to the long-context model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageModels {
    pub segmentation: String,
    pub knowledge: String,
    pub conversation: String,
    pub grading: String,
}

impl Default for StageModels {
    fn default() -> Self {
        Self {
            segmentation: "gpt-4-32k".into(),
            knowledge: "gpt-4".into(),
            conversation: "gpt-4".into(),
            grading: "gpt-4".into(),
        }
    }
}

impl StageModels {
    pub fn for_stage(&self, stage: Stage) -> &str {
        match stage {
            Stage::Segmentation => &self.segmentation,
            Stage::Knowledge => &self.knowledge,
            Stage::Conversation => &self.conversation,
            Stage::Grading => &self.grading,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub models: StageModels,
    pub embedding_model: String,
    pub retry: RetryPolicy,
    pub timeout_s: u64,
    /// Minimum spacing between two requests.
    pub min_interval_ms: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            models: StageModels::default(),
            embedding_model: "text-embedding-3-small".into(),
            retry: RetryPolicy::default(),
            timeout_s: 120,
            min_interval_ms: 0,
        }
    }
}

/// OpenAI-compatible chat-completions and embeddings client.
pub struct LiveGateway {
    config: LiveConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
}

impl LiveGateway {
    pub fn new(config: LiveConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: LiveConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
            last_request: Mutex::new(None),
        }
    }

    fn pace(&self) {
        let mut last = self.last_request.lock().unwrap();
        let gap = Duration::from_millis(self.config.min_interval_ms);
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < gap {
                thread::sleep(gap - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let attempts = self.config.retry.attempts.max(1);
        let mut last_error = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.config.retry.delay(attempt - 1));
            }
            self.pace();
            let mut request = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            match request.send_json(body) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    if status == 429 || status >= 500 {
                        last_error = Some(GatewayError::Status { status });
                        continue;
                    }
                    if status >= 400 {
                        return Err(GatewayError::Status { status });
                    }
                    return response
                        .body_mut()
                        .read_json::<Value>()
                        .map_err(|e| GatewayError::Decode(e.to_string()));
                }
                Err(e) => {
                    last_error = Some(GatewayError::Transport {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Err(match last_error {
            Some(GatewayError::Transport { message, .. }) => GatewayError::Transport { attempts, message },
            Some(other) => other,
            None => GatewayError::Transport {
                attempts,
                message: "no attempt made".into(),
            },
        })
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::Mentor => "assistant",
        Role::Student => "user",
    }
}

impl LlmGateway for LiveGateway {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for turn in &request.history {
            messages.push(json!({"role": role_name(turn.role), "content": turn.text}));
        }
        messages.push(json!({"role": "user", "content": request.user_prompt}));
        let body = json!({
            "model": self.config.models.for_stage(request.stage),
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let reply = self.post("chat/completions", &body)?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Decode("missing choices[0].message.content".into()))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let body = json!({"model": self.config.embedding_model, "input": text});
        let reply = self.post("embeddings", &body)?;
        reply["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| GatewayError::Decode("missing data[0].embedding".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| GatewayError::Decode("non-numeric embedding".into()))
            })
            .collect()
    }
}
