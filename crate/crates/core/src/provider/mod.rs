//! Boundary for every model-backed capability.
//!
//! Requests and results are structured and validated on the way back in;
//! nothing downstream parses free text. [`MockProvider`] answers from the
//! offline fixtures, [`FaultInjectingProvider`] fails on purpose, and live
//! backends implement [`Provider`] elsewhere.

mod fault;
mod mock;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use fault::{FaultInjectingProvider, FaultKind, FaultPlan};
pub use mock::MockProvider;

use crate::agent::AgentPersona;
use crate::context::{SchwartzValue, ValueClassification};
use crate::domain::Stance;
use crate::evaluator::{HeuristicInputs, SubScores};
use crate::thought::{DeliberationContext, RawThought, TalkMoveTag, Thought, ThoughtBudget, ThoughtKind};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed provider output: {0}")]
    MalformedOutput(String),
    #[error("transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Capability {
    GenerateThoughts,
    ClassifyValues,
    DetectPersuasion,
    ClassifyAssertiveness,
    ScoreThought,
    Paraphrase,
}

impl Capability {
    pub const ALL: [Capability; 6] = [
        Capability::GenerateThoughts,
        Capability::ClassifyValues,
        Capability::DetectPersuasion,
        Capability::ClassifyAssertiveness,
        Capability::ScoreThought,
        Capability::Paraphrase,
    ];

    /// JSON Schema every result for this capability must satisfy.
    pub fn result_schema(self) -> Value {
        let unit = json!({"type": "number", "minimum": 0, "maximum": 1});
        let values: Vec<Value> = SchwartzValue::ALL.iter().map(|v| json!(v)).collect();
        let moves: Vec<Value> = TalkMoveTag::ALL.iter().map(|m| json!(m)).collect();
        match self {
            Capability::GenerateThoughts => json!({
                "type": "object",
                "required": ["thoughts"],
                "properties": {"thoughts": {"type": "array", "items": {
                    "type": "object",
                    "required": ["kind", "content"],
                    "properties": {
                        "kind": {"oneOf": [
                            {"const": "general"},
                            {"type": "object", "required": ["strategic"],
                             "properties": {"strategic": {"enum": moves}}}
                        ]},
                        "content": {"type": "string", "minLength": 1},
                        "value_tags": {"type": "array", "items": {"enum": values}},
                        "target": {"type": ["string", "null"]},
                        "stance": {"enum": ["Agree", "Disagree", null]}
                    }
                }}}
            }),
            Capability::ClassifyValues => json!({
                "type": "object",
                "required": ["value_tags", "talk_moves"],
                "properties": {
                    "value_tags": {"type": "array", "items": {"enum": values}},
                    "talk_moves": {"type": "array", "items": {"enum": moves}}
                }
            }),
            Capability::DetectPersuasion | Capability::ClassifyAssertiveness => json!({
                "type": "object",
                "required": ["score"],
                "properties": {"score": unit}
            }),
            Capability::ScoreThought => json!({
                "type": "object",
                "required": ["relevance", "information_gap", "expected_impact"],
                "properties": {"relevance": unit, "information_gap": unit, "expected_impact": unit}
            }),
            Capability::Paraphrase => json!({
                "type": "object",
                "required": ["text"],
                "properties": {"text": {"type": "string", "minLength": 1}}
            }),
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParaphraseStyle {
    /// Render a thought as the agent's next utterance.
    PeerUtterance,
    /// Condense a player utterance for long-term memory.
    MemorySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "capability", content = "payload")]
pub enum RequestPayload {
    GenerateThoughts {
        context: Box<DeliberationContext>,
        budget: ThoughtBudget,
    },
    ClassifyValues {
        text: String,
    },
    DetectPersuasion {
        text: String,
        agent_position: Stance,
        speaker_stance: Option<Stance>,
    },
    ClassifyAssertiveness {
        text: String,
    },
    ScoreThought {
        thought: Box<Thought>,
        inputs: HeuristicInputs,
        dilemma: String,
        trigger_text: Option<String>,
    },
    Paraphrase {
        style: ParaphraseStyle,
        text: String,
        kind: Option<ThoughtKind>,
        persona: Option<AgentPersona>,
        dilemma: Option<String>,
    },
}

impl RequestPayload {
    pub fn capability(&self) -> Capability {
        match self {
            RequestPayload::GenerateThoughts { .. } => Capability::GenerateThoughts,
            RequestPayload::ClassifyValues { .. } => Capability::ClassifyValues,
            RequestPayload::DetectPersuasion { .. } => Capability::DetectPersuasion,
            RequestPayload::ClassifyAssertiveness { .. } => Capability::ClassifyAssertiveness,
            RequestPayload::ScoreThought { .. } => Capability::ScoreThought,
            RequestPayload::Paraphrase { .. } => Capability::Paraphrase,
        }
    }
}

/// Per-call settings threaded through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallOptions {
    pub seed: u64,
    pub timeout: Duration,
    pub trace_id: String,
}

impl CallOptions {
    pub fn new(seed: u64, timeout: Duration, trace_id: impl Into<String>) -> Self {
        Self { seed, timeout, trace_id: trace_id.into() }
    }

    pub fn for_tests() -> Self {
        Self::new(0, Duration::from_secs(5), "test")
    }

    /// Same seed and timeout, with a sub-trace id.
    pub fn child(&self, suffix: &str) -> Self {
        Self {
            seed: self.seed,
            timeout: self.timeout,
            trace_id: format!("{}/{}", self.trace_id, suffix),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub payload: RequestPayload,
    pub timeout: Duration,
    pub trace_id: String,
    pub seed: u64,
}

impl ProviderRequest {
    pub fn new(payload: RequestPayload, opts: &CallOptions) -> Self {
        Self {
            payload,
            timeout: opts.timeout,
            trace_id: opts.trace_id.clone(),
            seed: opts.seed,
        }
    }

    pub fn capability(&self) -> Capability {
        self.payload.capability()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtsResult {
    pub thoughts: Vec<RawThought>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseResult {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "capability", content = "result")]
pub enum ResponseBody {
    GenerateThoughts(ThoughtsResult),
    ClassifyValues(ValueClassification),
    DetectPersuasion(ScoreResult),
    ClassifyAssertiveness(ScoreResult),
    ScoreThought(SubScores),
    Paraphrase(ParaphraseResult),
}

fn unit_interval(name: &str, v: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} {v} outside [0,1]"))
    }
}

impl ResponseBody {
    pub fn capability(&self) -> Capability {
        match self {
            ResponseBody::GenerateThoughts(_) => Capability::GenerateThoughts,
            ResponseBody::ClassifyValues(_) => Capability::ClassifyValues,
            ResponseBody::DetectPersuasion(_) => Capability::DetectPersuasion,
            ResponseBody::ClassifyAssertiveness(_) => Capability::ClassifyAssertiveness,
            ResponseBody::ScoreThought(_) => Capability::ScoreThought,
            ResponseBody::Paraphrase(_) => Capability::Paraphrase,
        }
    }

    /// Parses a bare result object (as described by
    /// [`Capability::result_schema`]) and validates it.
    pub fn parse(capability: Capability, value: Value) -> Result<Self, String> {
        fn de<T: for<'de> Deserialize<'de>>(value: Value) -> Result<T, String> {
            serde_json::from_value(value).map_err(|e| e.to_string())
        }
        let body = match capability {
            Capability::GenerateThoughts => ResponseBody::GenerateThoughts(de(value)?),
            Capability::ClassifyValues => ResponseBody::ClassifyValues(de(value)?),
            Capability::DetectPersuasion => ResponseBody::DetectPersuasion(de(value)?),
            Capability::ClassifyAssertiveness => ResponseBody::ClassifyAssertiveness(de(value)?),
            Capability::ScoreThought => ResponseBody::ScoreThought(de(value)?),
            Capability::Paraphrase => ResponseBody::Paraphrase(de(value)?),
        };
        body.validate()?;
        Ok(body)
    }

    /// The result object alone, in the shape of the capability's schema.
    pub fn result_value(&self) -> Value {
        let value = serde_json::to_value(self).expect("response bodies serialize");
        value.get("result").cloned().unwrap_or(Value::Null)
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ResponseBody::GenerateThoughts(r) => {
                for (i, t) in r.thoughts.iter().enumerate() {
                    if t.content.trim().is_empty() {
                        return Err(format!("thought {i} has empty content"));
                    }
                }
                Ok(())
            }
            ResponseBody::ClassifyValues(_) => Ok(()),
            ResponseBody::DetectPersuasion(s) | ResponseBody::ClassifyAssertiveness(s) => {
                unit_interval("score", s.score)
            }
            ResponseBody::ScoreThought(s) => s.validate().map_err(|e| e.to_string()),
            ResponseBody::Paraphrase(p) => {
                if p.text.trim().is_empty() {
                    Err("empty paraphrase".into())
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub body: ResponseBody,
    pub latency: Duration,
    pub source: ResponseSource,
}

pub trait Provider: Send + Sync {
    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;

    fn name(&self) -> &str;
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        (**self).call(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Typed wrappers over [`Provider::call`] that check the result matches the
/// request's capability and validates it.
pub trait ProviderExt {
    fn call_checked(&self, payload: RequestPayload, opts: &CallOptions) -> Result<ResponseBody, ProviderError>;

    fn classify_values(&self, text: &str, opts: &CallOptions) -> Result<ValueClassification, ProviderError> {
        match self.call_checked(RequestPayload::ClassifyValues { text: text.to_string() }, opts)? {
            ResponseBody::ClassifyValues(c) => Ok(c),
            _ => unreachable!("capability checked"),
        }
    }

    fn detect_persuasion(
        &self,
        text: &str,
        agent_position: Stance,
        speaker_stance: Option<Stance>,
        opts: &CallOptions,
    ) -> Result<f64, ProviderError> {
        let payload = RequestPayload::DetectPersuasion { text: text.to_string(), agent_position, speaker_stance };
        match self.call_checked(payload, opts)? {
            ResponseBody::DetectPersuasion(s) => Ok(s.score),
            _ => unreachable!("capability checked"),
        }
    }

    fn classify_assertiveness(&self, text: &str, opts: &CallOptions) -> Result<f64, ProviderError> {
        match self.call_checked(RequestPayload::ClassifyAssertiveness { text: text.to_string() }, opts)? {
            ResponseBody::ClassifyAssertiveness(s) => Ok(s.score),
            _ => unreachable!("capability checked"),
        }
    }

    fn generate_thoughts(
        &self,
        ctx: &DeliberationContext,
        budget: ThoughtBudget,
        opts: &CallOptions,
    ) -> Result<Vec<RawThought>, ProviderError> {
        let payload = RequestPayload::GenerateThoughts { context: Box::new(ctx.clone()), budget };
        match self.call_checked(payload, opts)? {
            ResponseBody::GenerateThoughts(r) => Ok(r.thoughts),
            _ => unreachable!("capability checked"),
        }
    }

    fn score_thought(
        &self,
        thought: &Thought,
        ctx: &DeliberationContext,
        inputs: &HeuristicInputs,
        opts: &CallOptions,
    ) -> Result<SubScores, ProviderError> {
        let payload = RequestPayload::ScoreThought {
            thought: Box::new(thought.clone()),
            inputs: inputs.clone(),
            dilemma: ctx.dilemma.prompt.clone(),
            trigger_text: ctx.trigger().map(|u| u.text.clone()),
        };
        match self.call_checked(payload, opts)? {
            ResponseBody::ScoreThought(s) => Ok(s),
            _ => unreachable!("capability checked"),
        }
    }

    fn paraphrase_thought(
        &self,
        thought: &Thought,
        persona: &AgentPersona,
        ctx: &DeliberationContext,
        opts: &CallOptions,
    ) -> Result<String, ProviderError> {
        let payload = RequestPayload::Paraphrase {
            style: ParaphraseStyle::PeerUtterance,
            text: thought.content.clone(),
            kind: Some(thought.kind),
            persona: Some(persona.clone()),
            dilemma: Some(ctx.dilemma.prompt.clone()),
        };
        match self.call_checked(payload, opts)? {
            ResponseBody::Paraphrase(p) => Ok(p.text),
            _ => unreachable!("capability checked"),
        }
    }

    fn summarize(&self, text: &str, opts: &CallOptions) -> Result<String, ProviderError> {
        let payload = RequestPayload::Paraphrase {
            style: ParaphraseStyle::MemorySummary,
            text: text.to_string(),
            kind: None,
            persona: None,
            dilemma: None,
        };
        match self.call_checked(payload, opts)? {
            ResponseBody::Paraphrase(p) => Ok(p.text),
            _ => unreachable!("capability checked"),
        }
    }
}

impl<P: Provider + ?Sized> ProviderExt for P {
    fn call_checked(&self, payload: RequestPayload, opts: &CallOptions) -> Result<ResponseBody, ProviderError> {
        let request = ProviderRequest::new(payload, opts);
        let response = self.call(&request)?;
        if response.body.capability() != request.capability() {
            return Err(ProviderError::MalformedOutput(format!(
                "expected {} result, got {}",
                request.capability(),
                response.body.capability()
            )));
        }
        response.body.validate().map_err(ProviderError::MalformedOutput)?;
        Ok(response.body)
    }
}
