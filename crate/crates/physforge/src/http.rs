//! OpenAI-compatible HTTP prover client and endpoint construction.

use std::path::Path;
use std::thread::sleep;
use std::time::Duration;

use anyhow::{Context, Result};
use log::{debug, warn};
use rayon::prelude::*;
use serde_json::{json, Value};

use physforge_core::prompt::{PromptStyle, RenderedPrompt, Role};
use physforge_core::source::{Completion, CompletionSource, MockSource, SlotResults, SourceError, TokenLogprob};

use crate::config::{EndpointConfig, EndpointKind, Wire};

/// Retries after the first try, for transport errors and 5xx replies.
pub const MAX_RETRIES: u32 = 3;

/// Rounds spent topping up servers that return fewer than `n` choices.
const MAX_ROUNDS: usize = 4;

pub struct HttpSource {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    backoff: Duration,
    pool: rayon::ThreadPool,
}

enum Failure {
    Retryable(String),
    Fatal(SourceError),
}

impl HttpSource {
    /// Reads the API key from the configured environment variable now, so a
    /// missing key is reported before any request.
    pub fn new(cfg: EndpointConfig) -> Result<Self, SourceError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| SourceError::Config(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.request_timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.max_in_flight.max(1))
            .build()
            .map_err(|e| SourceError::Config(e.to_string()))?;
        Ok(HttpSource { cfg, agent, api_key, backoff: Duration::from_millis(500), pool })
    }

    /// First retry delay; later retries double it.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn url(&self) -> String {
        let base = self.cfg.base_url.trim_end_matches('/');
        match self.cfg.wire {
            Wire::Chat => format!("{base}/chat/completions"),
            Wire::Completions => format!("{base}/completions"),
        }
    }

    fn body(&self, prompt: &RenderedPrompt, n: usize, logprobs: bool) -> Value {
        let mut body = json!({
            "model": self.cfg.model_id,
            "n": n,
            "max_tokens": self.cfg.max_new_tokens,
            "temperature": self.cfg.temperature,
        });
        if let Some(p) = self.cfg.top_p {
            body["top_p"] = json!(p);
        }
        match self.cfg.wire {
            Wire::Chat => {
                let messages: Vec<Value> = prompt
                    .messages
                    .iter()
                    .map(|m| {
                        let role = match m.role {
                            Role::System => "system",
                            Role::User => "user",
                            Role::Assistant => "assistant",
                        };
                        json!({ "role": role, "content": m.content })
                    })
                    .collect();
                body["messages"] = json!(messages);
                if prompt.continues_assistant() {
                    body["continue_final_message"] = json!(true);
                    body["add_generation_prompt"] = json!(false);
                }
                if logprobs {
                    body["logprobs"] = json!(true);
                }
            }
            Wire::Completions => {
                body["prompt"] = json!(prompt.text);
                if logprobs {
                    body["logprobs"] = json!(1);
                }
            }
        }
        body
    }

    fn post_once(&self, body: &Value) -> Result<Value, Failure> {
        let mut req = self.agent.post(self.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => resp.body_mut().read_json::<Value>().map_err(|e| Failure::Retryable(format!("bad reply body: {e}"))),
            401 | 403 => Err(Failure::Fatal(SourceError::Auth {
                env_var: self.cfg.api_key_env.clone().unwrap_or_else(|| "(no api_key_env configured)".into()),
            })),
            500..=599 => Err(Failure::Retryable(format!("HTTP {status}"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                Err(Failure::Fatal(SourceError::Capability(format!("HTTP {status}: {}", text.trim()))))
            }
        }
    }

    fn post(&self, body: &Value) -> Result<Value, SourceError> {
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..=MAX_RETRIES {
            if attempt > 0 {
                debug!("{}: retry {attempt} after {last}", self.cfg.name);
                sleep(delay);
                delay *= 2;
            }
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(why)) => last = why,
            }
        }
        warn!("{}: giving up after {} retries: {last}", self.cfg.name, MAX_RETRIES);
        Err(SourceError::Transport(last))
    }
}

fn parse_logprobs(choice: &Value, wire: Wire) -> Option<Vec<TokenLogprob>> {
    let lp = choice.get("logprobs")?;
    match wire {
        Wire::Chat => Some(
            lp.get("content")?
                .as_array()?
                .iter()
                .filter_map(|t| {
                    Some(TokenLogprob { token: t.get("token")?.as_str()?.to_string(), logprob: t.get("logprob")?.as_f64()? })
                })
                .collect(),
        ),
        Wire::Completions => {
            let tokens = lp.get("tokens")?.as_array()?;
            let values = lp.get("token_logprobs")?.as_array()?;
            Some(
                tokens
                    .iter()
                    .zip(values)
                    .filter_map(|(t, v)| Some(TokenLogprob { token: t.as_str()?.to_string(), logprob: v.as_f64()? }))
                    .collect(),
            )
        }
    }
}

/// Choices of a reply in `index` order.
pub fn parse_choices(reply: &Value, wire: Wire) -> Vec<Completion> {
    let mut choices: Vec<&Value> = reply.get("choices").and_then(Value::as_array).map(|a| a.iter().collect()).unwrap_or_default();
    choices.sort_by_key(|c| c.get("index").and_then(Value::as_u64).unwrap_or(0));
    choices
        .into_iter()
        .map(|c| {
            let text = match wire {
                Wire::Chat => c.pointer("/message/content"),
                Wire::Completions => c.get("text"),
            };
            Completion {
                text: text.and_then(Value::as_str).unwrap_or_default().to_string(),
                finish_reason: c.get("finish_reason").and_then(Value::as_str).unwrap_or("unknown").to_string(),
                logprobs: parse_logprobs(c, wire),
            }
        })
        .collect()
}

impl CompletionSource for HttpSource {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn style(&self) -> PromptStyle {
        self.cfg.style
    }

    fn supports_logprobs(&self) -> bool {
        self.cfg.supports_logprobs
    }

    fn complete(&self, prompt: &RenderedPrompt, n: usize, logprobs: bool) -> SlotResults {
        let mut got: Vec<Result<Completion, SourceError>> = Vec::with_capacity(n);
        for _ in 0..MAX_ROUNDS {
            if got.len() >= n {
                break;
            }
            match self.post(&self.body(prompt, n - got.len(), logprobs)) {
                Ok(reply) => {
                    let choices = parse_choices(&reply, self.cfg.wire);
                    if choices.is_empty() {
                        break;
                    }
                    got.extend(choices.into_iter().map(Ok));
                }
                Err(SourceError::Transport(why)) => {
                    got.extend((got.len()..n).map(|_| Err(SourceError::Transport(why.clone()))));
                }
                Err(e) => return Err(e),
            }
        }
        got.truncate(n);
        while got.len() < n {
            got.push(Err(SourceError::Transport("server returned fewer samples than requested".into())));
        }
        Ok(got)
    }

    fn complete_many(&self, prompts: &[RenderedPrompt], n: usize, logprobs: bool) -> Vec<SlotResults> {
        self.pool.install(|| prompts.par_iter().with_max_len(1).map(|p| self.complete(p, n, logprobs)).collect())
    }
}

/// Builds the source an endpoint entry describes. Mock files are resolved
/// against `base_dir`.
pub fn open_endpoint(cfg: &EndpointConfig, base_dir: &Path) -> Result<Box<dyn CompletionSource + Send + Sync>> {
    match cfg.kind {
        EndpointKind::Http => {
            let src = HttpSource::new(cfg.clone()).map_err(|e| anyhow::anyhow!("endpoint {}: {e}", cfg.name))?;
            Ok(Box::new(src))
        }
        EndpointKind::Mock => {
            let file = cfg.mock_file.as_ref().context("mock endpoint without mock_file")?;
            let path = base_dir.join(file);
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut mock: MockSource = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            mock.name = cfg.name.clone();
            mock.style = cfg.style;
            mock.supports_logprobs = cfg.supports_logprobs;
            Ok(Box::new(mock))
        }
    }
}
