//! OpenAI-compatible chat-completions client.
//!
//! POSTs `{base_url}/chat/completions` with `{model, messages, temperature,
//! max_tokens}` and reads `choices[0].message.content` plus optional
//! `usage.{prompt_tokens, completion_tokens}`. Transport failures and 5xx
//! responses are retried at most twice with 0.5s then 2s backoff. The API
//! key is never logged; the `Debug` impl redacts it.

use std::fmt;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{approx_tokens, ChatProvider, ChatRequest, ChatResponse};
use crate::error::{Error, Result};

/// Environment variables read by [`HttpProvider::from_env`].
pub const ENV_BASE_URL: &str = "COLACARE_LLM_BASE_URL";
pub const ENV_MODEL: &str = "COLACARE_LLM_MODEL";
pub const ENV_API_KEY: &str = "COLACARE_LLM_API_KEY";

const BACKOFFS: [Duration; 2] = [Duration::from_millis(500), Duration::from_secs(2)];

pub struct HttpProvider {
    base_url: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
    /// Test hook: skip the real backoff sleeps.
    pub(crate) sleep_on_retry: bool,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpProvider {
    pub fn new(base_url: &str, model: &str, api_key: &str) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpProvider {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: api_key.to_string(),
            client,
            sleep_on_retry: true,
        })
    }

    /// Reads endpoint, model, and key from `COLACARE_LLM_*` env vars.
    pub fn from_env() -> Result<Self> {
        let need = |name: &str| {
            std::env::var(name)
                .map_err(|_| Error::Config(format!("environment variable {name} is not set")))
        };
        Self::new(&need(ENV_BASE_URL)?, &need(ENV_MODEL)?, &need(ENV_API_KEY)?)
    }

    fn attempt(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, Attempt> {
        let started = Instant::now();
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Attempt::Retryable(format!("transport: {e}")))?;

        let status = resp.status();
        if status.is_server_error() {
            return Err(Attempt::Retryable(format!("server returned {status}")));
        }
        let text = resp
            .text()
            .map_err(|e| Attempt::Retryable(format!("reading body: {e}")))?;
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::Transport(format!(
                "server returned {status}: {}",
                truncate(&text, 300)
            ))));
        }
        let parsed: CompletionsBody = serde_json::from_str(&text).map_err(|e| {
            Attempt::Fatal(Error::Protocol(format!(
                "non-JSON chat completion body ({e}): {}",
                truncate(&text, 300)
            )))
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message)
            .map(|m| m.content)
            .ok_or_else(|| {
                Attempt::Fatal(Error::Protocol("completion body has no choices".to_string()))
            })?;
        let (input_tokens, output_tokens, reported) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens, true),
            None => (
                approx_tokens(&request.system_prompt) + approx_tokens(&request.user_prompt),
                approx_tokens(&content),
                false,
            ),
        };
        Ok(ChatResponse {
            text: content,
            input_tokens,
            output_tokens,
            provider_reported: reported,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

enum Attempt {
    Retryable(String),
    Fatal(Error),
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let mut last = String::new();
        for retry in 0..=BACKOFFS.len() {
            if retry > 0 {
                log::warn!(
                    "retrying chat completion (attempt {}): {last}",
                    retry + 1
                );
                if self.sleep_on_retry {
                    std::thread::sleep(BACKOFFS[retry - 1]);
                }
            }
            match self.attempt(request) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) => last = msg,
            }
        }
        Err(Error::Transport(format!("retries exhausted: {last}")))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Deserialize)]
struct CompletionsBody {
    #[serde(default)]
    choices: Vec<Choice>,
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: Option<Message>,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct UsageBody {
    prompt_tokens: u64,
    completion_tokens: u64,
}
