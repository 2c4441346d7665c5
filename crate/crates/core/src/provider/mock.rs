use std::sync::Arc;
use std::time::Duration;

use crate::agent::{truncate_summary, SUMMARY_CHARS};
use crate::articulator::render_template;
use crate::context::ValueClassification;
use crate::evaluator::heuristic_subscores;
use crate::fixtures::Fixtures;
use crate::seed::keyed_hash;
use crate::thought::{template_thoughts, ThoughtKind};

use super::{
    ParaphraseResult, ParaphraseStyle, Provider, ProviderError, ProviderRequest, ProviderResponse, RequestPayload,
    ResponseBody, ResponseSource, ScoreResult, ThoughtsResult,
};

/// Offline provider answering from versioned fixtures.
///
/// Responses depend only on the request payload, its seed, and the fixture
/// set: no clock, no network, no shared mutable state.
#[derive(Debug, Clone)]
pub struct MockProvider {
    fixtures: Arc<Fixtures>,
    version: String,
}

impl MockProvider {
    pub fn new(fixtures: Fixtures) -> Self {
        let version = fixtures.version();
        Self { fixtures: Arc::new(fixtures), version }
    }

    pub fn builtin() -> Self {
        Self::new(Fixtures::builtin())
    }

    pub fn fixtures(&self) -> &Fixtures {
        &self.fixtures
    }

    pub fn fixture_version(&self) -> &str {
        &self.version
    }

    fn respond(&self, request: &ProviderRequest) -> ResponseBody {
        let fx = &self.fixtures;
        match &request.payload {
            RequestPayload::GenerateThoughts { context, budget } => {
                let seed = keyed_hash(request.seed, &self.version);
                ResponseBody::GenerateThoughts(ThoughtsResult {
                    thoughts: template_thoughts(context, &fx.templates, seed, *budget),
                })
            }
            RequestPayload::ClassifyValues { text } => ResponseBody::ClassifyValues(ValueClassification {
                value_tags: fx.lexicon.classify(text),
                talk_moves: fx.cues.talk_moves(text),
            }),
            RequestPayload::DetectPersuasion { text, agent_position, speaker_stance } => {
                // Players already on the agent's side are not arguing against it.
                let score = if *speaker_stance == Some(*agent_position) { 0.0 } else { fx.persuasion.score(text) };
                ResponseBody::DetectPersuasion(ScoreResult { score })
            }
            RequestPayload::ClassifyAssertiveness { text } => {
                ResponseBody::ClassifyAssertiveness(ScoreResult { score: fx.cues.assertiveness(text) })
            }
            RequestPayload::ScoreThought { inputs, .. } => ResponseBody::ScoreThought(heuristic_subscores(inputs)),
            RequestPayload::Paraphrase { style, text, kind, .. } => {
                let text = match style {
                    ParaphraseStyle::PeerUtterance => {
                        render_template(kind.unwrap_or(ThoughtKind::General), text, &fx.articulation)
                    }
                    ParaphraseStyle::MemorySummary => truncate_summary(text, SUMMARY_CHARS),
                };
                ResponseBody::Paraphrase(ParaphraseResult { text })
            }
        }
    }
}

impl Provider for MockProvider {
    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        Ok(ProviderResponse {
            body: self.respond(request),
            latency: Duration::ZERO,
            source: ResponseSource::Mock,
        })
    }

    fn name(&self) -> &str {
        "mock"
    }
}
