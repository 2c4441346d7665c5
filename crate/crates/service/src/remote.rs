//! Provider backed by an OpenAI-style chat-completions endpoint.

use std::time::{Duration, Instant};

use peer_agent_core::provider::{
    Capability, Provider, ProviderError, ProviderRequest, ProviderResponse, ResponseBody, ResponseSource,
};
use serde_json::{json, Value};
use tracing::{debug, warn};

pub const ENV_URL: &str = "PROVIDER_URL";
pub const ENV_KEY: &str = "PROVIDER_KEY";
pub const ENV_MODEL: &str = "PROVIDER_MODEL";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl RemoteConfig {
    pub fn from_env() -> Result<Self, String> {
        let var = |name: &str| std::env::var(name).map_err(|_| format!("{name} is not set"));
        Ok(Self {
            url: var(ENV_URL)?,
            api_key: std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty()),
            model: var(ENV_MODEL)?,
        })
    }
}

pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
        Self { config, agent }
    }

    fn instructions(capability: Capability) -> String {
        let task = match capability {
            Capability::GenerateThoughts => {
                "You are the inner voice of a peer discussing a moral dilemma with two players. Propose \
                 candidate thoughts the peer could voice next: `general` ones that are casual reactions and \
                 `strategic` ones tagged with a talk move. Strategic thoughts must argue for the peer's \
                 position. Respect the requested budget."
            }
            Capability::ClassifyValues => {
                "Tag the utterance with the Schwartz basic values it appeals to and the talk moves it makes."
            }
            Capability::DetectPersuasion => {
                "Rate from 0 to 1 how strongly the utterance argues against the agent's position. \
                 An utterance from a speaker who shares that position scores 0."
            }
            Capability::ClassifyAssertiveness => {
                "Rate from 0 (hedging, unsure) to 1 (emphatic, certain) how assertive the utterance is."
            }
            Capability::ScoreThought => {
                "Score the candidate thought from 0 to 1 on relevance to the triggering utterance, on how \
                 much new information it adds to the discussion, and on its expected impact on the players."
            }
            Capability::Paraphrase => {
                "Rewrite the text. For a peer utterance, speak as the persona: short, casual, one or two \
                 sentences. For a memory summary, compress it to one short sentence."
            }
        };
        format!(
            "{task}\nReply with one JSON object and nothing else. It must satisfy this JSON Schema:\n{}",
            capability.result_schema()
        )
    }

    fn post(&self, messages: &[Value], request: &ProviderRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": 0,
            "seed": request.seed,
            "response_format": {"type": "json_object"},
        });
        let mut call = self
            .agent
            .post(&self.config.url)
            .config()
            .timeout_global(Some(request.timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| map_error(e, request.timeout))?;
        let status = response.status();
        let text = response.body_mut().read_to_string().map_err(|e| map_error(e, request.timeout))?;
        if !status.is_success() {
            return Err(ProviderError::Transport(format!("endpoint returned {status}")));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::MalformedOutput(format!("response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::MalformedOutput("no message content in response".into()))
    }
}

fn map_error(err: ureq::Error, timeout: Duration) -> ProviderError {
    match err {
        ureq::Error::Timeout(_) => ProviderError::Timeout(timeout),
        ureq::Error::Io(e) if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            ProviderError::Timeout(timeout)
        }
        other => ProviderError::Transport(other.to_string()),
    }
}

/// Accepts bare JSON or JSON inside a fenced code block.
fn parse_content(capability: Capability, content: &str) -> Result<ResponseBody, String> {
    let trimmed = content.trim();
    let inner = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed);
    let value: Value = serde_json::from_str(inner.trim()).map_err(|e| format!("not JSON: {e}"))?;
    ResponseBody::parse(capability, value)
}

impl Provider for RemoteProvider {
    /// One request, plus a single repair round when the reply does not fit
    /// the capability's schema. The deadline covers both rounds.
    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let started = Instant::now();
        let capability = request.capability();
        let payload = serde_json::to_value(&request.payload).expect("payloads serialize");
        let mut messages = vec![
            json!({"role": "system", "content": Self::instructions(capability)}),
            json!({"role": "user", "content": payload.to_string()}),
        ];
        let mut last_error = String::new();
        for round in 0..2 {
            let remaining = request.timeout.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                return Err(ProviderError::Timeout(request.timeout));
            }
            let scoped = ProviderRequest { timeout: remaining, ..request.clone() };
            let content = self.post(&messages, &scoped).map_err(|e| match e {
                ProviderError::Timeout(_) => ProviderError::Timeout(request.timeout),
                other => other,
            })?;
            match parse_content(capability, &content) {
                Ok(body) => {
                    debug!(trace_id = %request.trace_id, %capability, round, "remote call succeeded");
                    return Ok(ProviderResponse { body, latency: started.elapsed(), source: ResponseSource::Remote });
                }
                Err(err) => {
                    warn!(trace_id = %request.trace_id, %capability, round, %err, "remote reply rejected");
                    messages.push(json!({"role": "assistant", "content": content}));
                    messages.push(json!({
                        "role": "user",
                        "content": format!("That reply was invalid ({err}). Reply again with only the JSON object."),
                    }));
                    last_error = err;
                }
            }
        }
        Err(ProviderError::MalformedOutput(last_error))
    }

    fn name(&self) -> &str {
        "remote"
    }
}
