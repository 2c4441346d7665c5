//! Picks at most one evaluated thought per trigger and renders it as a
//! peer-toned utterance.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::agent::AgentPersona;
use crate::evaluator::EvaluatedThought;
use crate::fixtures::{ArticulationTemplates, CLAUSE_CONCESSION, CLAUSE_OPINION_SHIFT};
use crate::provider::{CallOptions, Provider, ProviderExt};
use crate::seed;
use crate::thought::{DeliberationContext, OpinionShift, Thought, ThoughtId, ThoughtKind};

#[derive(Debug, Error, PartialEq)]
pub enum ArticulationError {
    #[error("threshold {0} outside [1,5]")]
    InvalidThreshold(f64),
    #[error("general-thought probability {0} outside [0,1]")]
    InvalidProbability(f64),
    #[error("thought {0} has no content to articulate")]
    EmptyThought(ThoughtId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArticulationPolicy {
    /// Minimum motivation for a strategic thought to be voiced.
    pub threshold: f64,
    /// Chance of voicing the best general thought when no strategic one qualifies.
    pub p_general: f64,
    pub rng_seed: u64,
}

impl Default for ArticulationPolicy {
    fn default() -> Self {
        Self { threshold: 3.5, p_general: 0.6, rng_seed: 0 }
    }
}

impl ArticulationPolicy {
    pub fn validate(&self) -> Result<(), ArticulationError> {
        if !(1.0..=5.0).contains(&self.threshold) {
            return Err(ArticulationError::InvalidThreshold(self.threshold));
        }
        if !(0.0..=1.0).contains(&self.p_general) {
            return Err(ArticulationError::InvalidProbability(self.p_general));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilenceReason {
    NoCandidates,
    BelowThreshold,
}

impl SilenceReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SilenceReason::NoCandidates => "no candidates",
            SilenceReason::BelowThreshold => "below threshold",
        }
    }
}

/// Which thought, if any, to voice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Speak(ThoughtId),
    Silence(SilenceReason),
}

/// A selection together with its rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionOutcome {
    Speak { thought_id: ThoughtId, rendered_text: String },
    Silence { reason: SilenceReason },
}

fn by_motivation_then_id(a: &EvaluatedThought, b: &EvaluatedThought) -> std::cmp::Ordering {
    a.breakdown
        .motivation
        .total_cmp(&b.breakdown.motivation)
        .then_with(|| b.thought.id.cmp(&a.thought.id))
}

/// The highest-motivation ungated strategic thought at or above the
/// threshold wins. Otherwise a seeded coin with probability `p_general`
/// decides whether to voice the best general thought.
pub fn select_thought(evaluated: &[EvaluatedThought], policy: &ArticulationPolicy) -> Selection {
    if evaluated.is_empty() {
        return Selection::Silence(SilenceReason::NoCandidates);
    }
    let strategic = evaluated
        .iter()
        .filter(|e| e.thought.kind.is_strategic() && !e.breakdown.gated && e.breakdown.motivation >= policy.threshold)
        .max_by(|a, b| by_motivation_then_id(a, b));
    if let Some(best) = strategic {
        return Selection::Speak(best.thought.id);
    }
    let speak = seed::rng(policy.rng_seed).random_bool(policy.p_general.clamp(0.0, 1.0));
    let general = evaluated
        .iter()
        .filter(|e| e.thought.kind == ThoughtKind::General)
        .max_by(|a, b| by_motivation_then_id(a, b));
    match general {
        Some(best) if speak => Selection::Speak(best.thought.id),
        _ => Selection::Silence(SilenceReason::BelowThreshold),
    }
}

/// Deterministic template rendering used offline and as the provider fallback.
pub fn render_offline(thought: &Thought, templates: &ArticulationTemplates) -> String {
    render_template(thought.kind, &thought.content, templates)
}

pub fn render_template(kind: ThoughtKind, content: &str, templates: &ArticulationTemplates) -> String {
    let content = content.trim();
    match kind {
        ThoughtKind::General => {
            let content = content.trim_end_matches(['.', '!', '?', ',', ';']);
            templates.general.replace("{content}", content)
        }
        ThoughtKind::Strategic(_) => templates.strategic.replace("{content}", content),
    }
}

/// Clause that must open the agent's next turn after its stance weakened.
pub fn acknowledgment_clause(shift: Option<OpinionShift>, templates: &ArticulationTemplates) -> Option<&str> {
    match shift? {
        OpinionShift::Adjusted => Some(templates.clause(CLAUSE_OPINION_SHIFT)),
        OpinionShift::Conceded => Some(templates.clause(CLAUSE_CONCESSION)),
    }
}

/// Turns the selected thought into the agent's utterance. The provider
/// paraphrases in the persona's voice; on failure the offline template is
/// used. Any pending stance shift is acknowledged up front either way.
pub fn articulate(
    thought: &Thought,
    persona: &AgentPersona,
    ctx: &DeliberationContext,
    provider: &dyn Provider,
    opts: &CallOptions,
    templates: &ArticulationTemplates,
) -> Result<String, ArticulationError> {
    if thought.content.trim().is_empty() {
        return Err(ArticulationError::EmptyThought(thought.id));
    }
    let body = match provider.paraphrase_thought(thought, persona, ctx, opts) {
        Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
        Ok(_) => render_offline(thought, templates),
        Err(err) => {
            warn!(trace_id = %opts.trace_id, %err, "paraphrase failed, using template");
            render_offline(thought, templates)
        }
    };
    Ok(match acknowledgment_clause(ctx.pending_shift, templates) {
        Some(clause) if !body.starts_with(clause) => format!("{clause} {body}"),
        _ => body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{MotivationBreakdown, ScoreSource};
    use crate::fixtures::Fixtures;
    use crate::provider::{FaultInjectingProvider, MockProvider};
    use crate::thought::{Grounding, TalkMoveTag};

    fn ev(index: u32, kind: ThoughtKind, motivation: f64, gated: bool) -> EvaluatedThought {
        EvaluatedThought {
            thought: Thought {
                id: ThoughtId { trigger: 1, attempt: 0, index },
                kind,
                content: format!("thought {index}"),
                motivation: Some(motivation),
                grounding: Grounding::default(),
                target: None,
                template_id: None,
            },
            breakdown: MotivationBreakdown {
                relevance: 0.0,
                information_gap: 0.0,
                expected_impact: 0.0,
                motivation,
                gated,
                gate_reason: gated.then(|| "gated".to_string()),
                source: ScoreSource::Heuristic,
            },
        }
    }

    const S: ThoughtKind = ThoughtKind::Strategic(TalkMoveTag::JustificationRequest);
    const G: ThoughtKind = ThoughtKind::General;

    fn policy(threshold: f64, p_general: f64, rng_seed: u64) -> ArticulationPolicy {
        ArticulationPolicy { threshold, p_general, rng_seed }
    }

    fn id(index: u32) -> ThoughtId {
        ThoughtId { trigger: 1, attempt: 0, index }
    }

    #[test]
    fn highest_strategic_above_threshold_wins() {
        let cands = [ev(0, S, 3.8, false), ev(1, S, 4.2, false), ev(2, G, 2.5, false)];
        assert_eq!(select_thought(&cands, &policy(3.5, 0.6, 1)), Selection::Speak(id(1)));
        let cands = [ev(0, S, 4.2, false), ev(1, S, 3.8, false), ev(2, G, 2.5, false)];
        assert_eq!(select_thought(&cands, &policy(3.5, 0.6, 1)), Selection::Speak(id(0)));
    }

    #[test]
    fn degenerate_probabilities() {
        let cands = [ev(0, S, 3.0, false), ev(1, G, 2.0, false), ev(2, G, 2.5, false)];
        for seed in 0..50 {
            assert_eq!(select_thought(&cands, &policy(3.5, 1.0, seed)), Selection::Speak(id(2)));
            assert_eq!(select_thought(&cands, &policy(3.5, 0.0, seed)), Selection::Silence(SilenceReason::BelowThreshold));
        }
    }

    #[test]
    fn gated_strategic_is_excluded() {
        let cands = [ev(0, S, 4.0, true), ev(1, G, 2.0, false)];
        assert_eq!(select_thought(&cands, &policy(3.5, 0.0, 0)), Selection::Silence(SilenceReason::BelowThreshold));
    }

    #[test]
    fn empty_list_is_silence() {
        assert_eq!(select_thought(&[], &policy(3.5, 1.0, 0)), Selection::Silence(SilenceReason::NoCandidates));
    }

    #[test]
    fn threshold_is_inclusive_and_ties_take_lowest_id() {
        let cands = [ev(0, S, 3.0, false), ev(1, S, 3.5, false), ev(2, S, 3.5, false)];
        assert_eq!(select_thought(&cands, &policy(3.5, 0.0, 0)), Selection::Speak(id(1)));
    }

    #[test]
    fn speak_frequency_matches_probability() {
        let cands = [ev(0, S, 2.0, false), ev(1, G, 2.0, false)];
        let speaks = (0..10_000u64)
            .filter(|s| matches!(select_thought(&cands, &policy(3.5, 0.6, *s)), Selection::Speak(_)))
            .count();
        let freq = speaks as f64 / 10_000.0;
        assert!((freq - 0.6).abs() <= 0.02, "speak frequency {freq}");
    }

    #[test]
    fn policy_validation() {
        assert!(policy(0.5, 0.5, 0).validate().is_err());
        assert!(policy(3.5, 1.5, 0).validate().is_err());
        assert!(ArticulationPolicy::default().validate().is_ok());
    }

    #[test]
    fn general_template_golden() {
        let templates = Fixtures::builtin().articulation;
        let mut t = ev(0, G, 2.0, false).thought;
        t.content = "that tradeoff seems underexplored".into();
        assert_eq!(render_offline(&t, &templates), "Hmm, I feel like that tradeoff seems underexplored.");
    }

    #[test]
    fn acknowledgment_after_shift() {
        let templates = Fixtures::builtin().articulation;
        let mut ctx = crate::thought::tests::ctx_with(&[], crate::domain::Stance::Agree);
        let t = ev(0, S, 4.0, false).thought;
        let persona = AgentPersona::default_peer();
        let opts = CallOptions::for_tests();
        let plain = articulate(&t, &persona, &ctx, &MockProvider::builtin(), &opts, &templates).unwrap();
        assert_eq!(plain, "thought 0");

        ctx.pending_shift = Some(OpinionShift::Conceded);
        for provider in [&MockProvider::builtin() as &dyn Provider, &FaultInjectingProvider::always_failing()] {
            let text = articulate(&t, &persona, &ctx, provider, &opts, &templates).unwrap();
            assert!(text.starts_with(templates.clause(CLAUSE_CONCESSION)), "{text}");
        }
        ctx.pending_shift = Some(OpinionShift::Adjusted);
        let text = articulate(&t, &persona, &ctx, &MockProvider::builtin(), &opts, &templates).unwrap();
        assert!(text.contains(templates.clause(CLAUSE_OPINION_SHIFT)));
    }

    #[test]
    fn empty_thought_is_an_error() {
        let templates = Fixtures::builtin().articulation;
        let ctx = crate::thought::tests::ctx_with(&[], crate::domain::Stance::Agree);
        let mut t = ev(3, G, 2.0, false).thought;
        t.content = " ".into();
        let err = articulate(&t, &AgentPersona::default_peer(), &ctx, &MockProvider::builtin(), &CallOptions::for_tests(), &templates);
        assert_eq!(err, Err(ArticulationError::EmptyThought(id(3))));
    }
}
