//! Motivation scoring and rule-based gating of strategic thoughts.
//!
//! Each candidate gets three sub-scores in [0,1] (relevance, information gap,
//! expected impact) that map affinely onto the 1-5 motivation scale. Strategic
//! thoughts are then checked against a phase and player-strength rule table;
//! gated thoughts stay in the trace but can never be selected.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::context::{Phase, PlayerStrengthEstimate, SchwartzValue};
use crate::exec::{map_ordered, Execution};
use crate::provider::{CallOptions, Provider, ProviderExt};
use crate::thought::{DeliberationContext, TalkMoveTag, Thought, ThoughtKind};

#[derive(Debug, Error, PartialEq)]
pub enum EvaluatorError {
    #[error("weights must be non-negative and sum to 1, got {0:?}")]
    InvalidWeights(Weights),
    #[error("sub-score {name} = {value} outside [0,1]")]
    InvalidSubScore { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub relevance: f64,
    pub information_gap: f64,
    pub expected_impact: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            relevance: 1.0 / 3.0,
            information_gap: 1.0 / 3.0,
            expected_impact: 1.0 / 3.0,
        }
    }
}

impl Weights {
    pub fn new(relevance: f64, information_gap: f64, expected_impact: f64) -> Result<Self, EvaluatorError> {
        let w = Self { relevance, information_gap, expected_impact };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), EvaluatorError> {
        let parts = [self.relevance, self.information_gap, self.expected_impact];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(EvaluatorError::InvalidWeights(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub relevance: f64,
    pub information_gap: f64,
    pub expected_impact: f64,
}

impl SubScores {
    pub fn validate(&self) -> Result<(), EvaluatorError> {
        for (name, value) in [
            ("relevance", self.relevance),
            ("information_gap", self.information_gap),
            ("expected_impact", self.expected_impact),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(EvaluatorError::InvalidSubScore { name, value });
            }
        }
        Ok(())
    }
}

/// `1 + 4 * (weighted sum of sub-scores)`.
pub fn motivation(sub: &SubScores, w: &Weights) -> f64 {
    1.0 + 4.0 * (w.relevance * sub.relevance + w.information_gap * sub.information_gap + w.expected_impact * sub.expected_impact)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Provider,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotivationBreakdown {
    pub relevance: f64,
    pub information_gap: f64,
    pub expected_impact: f64,
    pub motivation: f64,
    pub gated: bool,
    pub gate_reason: Option<String>,
    pub source: ScoreSource,
}

/// What the offline heuristics need to know about a thought and its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicInputs {
    pub thought_tags: BTreeSet<SchwartzValue>,
    pub trigger_tags: BTreeSet<SchwartzValue>,
    pub voiced_tags: BTreeSet<SchwartzValue>,
    pub agent_strength: f64,
    pub mean_player_estimate: Option<f64>,
}

impl HeuristicInputs {
    pub fn new(thought: &Thought, ctx: &DeliberationContext) -> Self {
        Self {
            thought_tags: thought.grounding.value_tags.clone(),
            trigger_tags: ctx.trigger_tags(),
            voiced_tags: ctx.voiced_tags(),
            agent_strength: ctx.agent.opinion_strength,
            mean_player_estimate: ctx.mean_player_estimate(),
        }
    }
}

/// Lexical sub-scores:
/// relevance is the share of the trigger's value tags the thought touches,
/// information gap is the share of the thought's tags nobody has voiced yet,
/// and expected impact is the strength gap between agent and players over 4.
pub fn heuristic_subscores(inputs: &HeuristicInputs) -> SubScores {
    let relevance = if inputs.trigger_tags.is_empty() {
        0.0
    } else {
        inputs.thought_tags.intersection(&inputs.trigger_tags).count() as f64 / inputs.trigger_tags.len() as f64
    };
    let information_gap = if inputs.thought_tags.is_empty() {
        0.0
    } else {
        1.0 - inputs.thought_tags.intersection(&inputs.voiced_tags).count() as f64 / inputs.thought_tags.len() as f64
    };
    let expected_impact = inputs
        .mean_player_estimate
        .map(|mean| ((inputs.agent_strength - mean).abs() / 4.0).clamp(0.0, 1.0))
        .unwrap_or(0.0);
    SubScores { relevance, information_gap, expected_impact }
}

pub const DEFAULT_COLLAPSED_FLOOR: f64 = 1.5;

pub const REASON_CONFRONTATION_EARLY: &str = "confrontational move before Early/Late boundary";
pub const REASON_CONVERGENCE_EARLY: &str = "convergence move before Early/Late boundary";
pub const REASON_COLLAPSED_TARGET: &str = "avoid piling on a collapsed position";

/// Phase part of the gate table. `None` means the move may be voiced.
pub fn phase_rule(talk_move: TalkMoveTag, phase: Phase) -> Option<&'static str> {
    use TalkMoveTag::*;
    match (talk_move, phase) {
        (ConcessionAcknowledgment, _) => None,
        (Challenge | CounterArgument, Phase::Early) => Some(REASON_CONFRONTATION_EARLY),
        (ConsensusProbe | Integration, Phase::Early) => Some(REASON_CONVERGENCE_EARLY),
        (JustificationRequest | Extension | PerspectiveTaking, _) => None,
        (_, Phase::Late) => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateDecision {
    pub gated: bool,
    pub reason: Option<String>,
}

impl GateDecision {
    fn open() -> Self {
        Self { gated: false, reason: None }
    }

    fn closed(reason: &str) -> Self {
        Self { gated: true, reason: Some(reason.to_string()) }
    }
}

/// Applies the gate table to a thought. General thoughts always pass, as do
/// concession acknowledgments.
pub fn gate_strategic(
    thought: &Thought,
    phase: Phase,
    player_estimates: &[PlayerStrengthEstimate],
    collapsed_floor: f64,
) -> GateDecision {
    let ThoughtKind::Strategic(talk_move) = thought.kind else {
        return GateDecision::open();
    };
    if talk_move == TalkMoveTag::ConcessionAcknowledgment {
        return GateDecision::open();
    }
    if let Some(reason) = phase_rule(talk_move, phase) {
        return GateDecision::closed(reason);
    }
    let collapsed = thought.target.as_ref().is_some_and(|target| {
        player_estimates
            .iter()
            .any(|e| &e.player_id == target && e.estimate <= collapsed_floor)
    });
    if collapsed {
        return GateDecision::closed(REASON_COLLAPSED_TARGET);
    }
    GateDecision::open()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub weights: Weights,
    pub collapsed_strength_floor: f64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            collapsed_strength_floor: DEFAULT_COLLAPSED_FLOOR,
        }
    }
}

/// Sub-scores from the provider, or the lexical heuristics when it fails.
pub fn score_thought(
    thought: &Thought,
    ctx: &DeliberationContext,
    provider: &dyn Provider,
    opts: &CallOptions,
    weights: &Weights,
) -> MotivationBreakdown {
    let inputs = HeuristicInputs::new(thought, ctx);
    let (sub, source) = match provider.score_thought(thought, ctx, &inputs, opts) {
        Ok(sub) => (sub, ScoreSource::Provider),
        Err(err) => {
            warn!(trace_id = %opts.trace_id, thought = %thought.id, %err, "scoring failed, using heuristics");
            (heuristic_subscores(&inputs), ScoreSource::Heuristic)
        }
    };
    MotivationBreakdown {
        relevance: sub.relevance,
        information_gap: sub.information_gap,
        expected_impact: sub.expected_impact,
        motivation: motivation(&sub, weights).clamp(1.0, 5.0),
        gated: false,
        gate_reason: None,
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedThought {
    pub thought: Thought,
    pub breakdown: MotivationBreakdown,
}

/// Scores every thought and gates the strategic ones. Output order matches input.
pub fn evaluate_all(
    thoughts: &[Thought],
    ctx: &DeliberationContext,
    provider: &dyn Provider,
    opts: &CallOptions,
    config: &EvaluatorConfig,
    exec: Execution,
) -> Vec<EvaluatedThought> {
    map_ordered(thoughts, exec, |thought| {
        let opts = opts.child(&thought.id.to_string());
        let mut breakdown = score_thought(thought, ctx, provider, &opts, &config.weights);
        let gate = gate_strategic(thought, ctx.phase, &ctx.player_estimates, config.collapsed_strength_floor);
        breakdown.gated = gate.gated;
        breakdown.gate_reason = gate.reason;
        let mut thought = thought.clone();
        thought.motivation = Some(breakdown.motivation);
        EvaluatedThought { thought, breakdown }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PlayerId;
    use crate::provider::{FaultInjectingProvider, MockProvider};
    use crate::thought::{Grounding, ThoughtId};
    use proptest::prelude::*;

    fn thought(kind: ThoughtKind, target: Option<&str>) -> Thought {
        Thought {
            id: ThoughtId { trigger: 1, attempt: 0, index: 0 },
            kind,
            content: "x".into(),
            motivation: None,
            grounding: Grounding::default(),
            target: target.map(PlayerId::new),
            template_id: None,
        }
    }

    fn sub(r: f64, g: f64, i: f64) -> SubScores {
        SubScores { relevance: r, information_gap: g, expected_impact: i }
    }

    #[test]
    fn affine_examples() {
        let w = Weights::default();
        assert!((motivation(&sub(1.0, 1.0, 1.0), &w) - 5.0).abs() < 1e-12);
        assert!((motivation(&sub(0.0, 0.0, 0.0), &w) - 1.0).abs() < 1e-12);
        assert!((motivation(&sub(0.5, 0.25, 0.75), &w) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn weight_validation() {
        assert!(Weights::new(0.5, 0.5, 0.0).is_ok());
        assert!(Weights::new(0.5, 0.6, 0.0).is_err());
        assert!(Weights::new(-0.1, 0.6, 0.5).is_err());
        assert!(Weights::default().validate().is_ok());
    }

    #[test]
    fn gate_examples() {
        let ch = thought(ThoughtKind::Strategic(TalkMoveTag::Challenge), None);
        let d = gate_strategic(&ch, Phase::Early, &[], DEFAULT_COLLAPSED_FLOOR);
        assert_eq!(d, GateDecision::closed(REASON_CONFRONTATION_EARLY));

        let jr = thought(ThoughtKind::Strategic(TalkMoveTag::JustificationRequest), None);
        assert!(!gate_strategic(&jr, Phase::Early, &[], DEFAULT_COLLAPSED_FLOOR).gated);

        let cp = thought(ThoughtKind::Strategic(TalkMoveTag::ConsensusProbe), None);
        assert!(gate_strategic(&cp, Phase::Early, &[], DEFAULT_COLLAPSED_FLOOR).gated);
        assert!(!gate_strategic(&cp, Phase::Late, &[], DEFAULT_COLLAPSED_FLOOR).gated);

        let ca = thought(ThoughtKind::Strategic(TalkMoveTag::CounterArgument), Some("p1"));
        let est = [PlayerStrengthEstimate::new(PlayerId::new("p1"), 1.5)];
        assert_eq!(
            gate_strategic(&ca, Phase::Late, &est, DEFAULT_COLLAPSED_FLOOR),
            GateDecision::closed(REASON_COLLAPSED_TARGET)
        );
        let est = [PlayerStrengthEstimate::new(PlayerId::new("p1"), 1.75)];
        assert!(!gate_strategic(&ca, Phase::Late, &est, DEFAULT_COLLAPSED_FLOOR).gated);
    }

    #[test]
    fn concession_acknowledgment_bypasses_everything() {
        let t = thought(ThoughtKind::Strategic(TalkMoveTag::ConcessionAcknowledgment), Some("p1"));
        let est = [PlayerStrengthEstimate::new(PlayerId::new("p1"), 1.0)];
        for phase in [Phase::Early, Phase::Late] {
            assert!(!gate_strategic(&t, phase, &est, DEFAULT_COLLAPSED_FLOOR).gated);
        }
    }

    #[test]
    fn gate_table_is_total() {
        let mut gated = 0;
        for m in TalkMoveTag::ALL {
            for phase in [Phase::Early, Phase::Late] {
                let d = gate_strategic(&thought(ThoughtKind::Strategic(m), None), phase, &[], DEFAULT_COLLAPSED_FLOOR);
                assert_eq!(d.gated, d.reason.is_some());
                assert_eq!(d.reason.as_deref(), phase_rule(m, phase));
                gated += d.gated as usize;
            }
        }
        assert_eq!(gated, 4);
    }

    #[test]
    fn general_thoughts_never_gated() {
        let t = thought(ThoughtKind::General, Some("p1"));
        let est = [PlayerStrengthEstimate::new(PlayerId::new("p1"), 1.0)];
        assert!(!gate_strategic(&t, Phase::Early, &est, DEFAULT_COLLAPSED_FLOOR).gated);
    }

    #[test]
    fn heuristics_follow_definitions() {
        let tags = |v: &[SchwartzValue]| v.iter().copied().collect::<BTreeSet<_>>();
        use SchwartzValue::*;
        let s = heuristic_subscores(&HeuristicInputs {
            thought_tags: tags(&[Security, Universalism]),
            trigger_tags: tags(&[Security, Power]),
            voiced_tags: tags(&[Security, Power]),
            agent_strength: 4.5,
            mean_player_estimate: Some(2.5),
        });
        assert_eq!(s, sub(0.5, 0.5, 0.5));
        let s = heuristic_subscores(&HeuristicInputs {
            thought_tags: tags(&[]),
            trigger_tags: tags(&[]),
            voiced_tags: tags(&[]),
            agent_strength: 3.0,
            mean_player_estimate: None,
        });
        assert_eq!(s, sub(0.0, 0.0, 0.0));
    }

    #[test]
    fn evaluate_all_preserves_order_and_gates_only_strategic() {
        let ctx = crate::thought::tests::ctx_with(&[SchwartzValue::Security], crate::domain::Stance::Disagree);
        assert!(evaluate_all(&[], &ctx, &MockProvider::builtin(), &CallOptions::for_tests(), &EvaluatorConfig::default(), Execution::Sequential).is_empty());

        let mut a = thought(ThoughtKind::Strategic(TalkMoveTag::Challenge), None);
        a.id.index = 0;
        let mut b = thought(ThoughtKind::General, None);
        b.id.index = 1;
        for exec in [Execution::Sequential, Execution::Parallel] {
            let out = evaluate_all(&[a.clone(), b.clone()], &ctx, &MockProvider::builtin(), &CallOptions::for_tests(), &EvaluatorConfig::default(), exec);
            assert_eq!(out.len(), 2);
            assert_eq!(out[0].thought.id, a.id);
            assert!(out[0].breakdown.gated);
            assert!(!out[1].breakdown.gated);
            assert!(out.iter().all(|e| e.thought.motivation == Some(e.breakdown.motivation)));
        }
    }

    #[test]
    fn provider_failure_falls_back_to_heuristics() {
        let ctx = crate::thought::tests::ctx_with(&[SchwartzValue::Security], crate::domain::Stance::Disagree);
        let t = thought(ThoughtKind::General, None);
        let b = score_thought(&t, &ctx, &FaultInjectingProvider::always_failing(), &CallOptions::for_tests(), &Weights::default());
        assert_eq!(b.source, ScoreSource::Heuristic);
        let expected = heuristic_subscores(&HeuristicInputs::new(&t, &ctx));
        assert_eq!(b.relevance, expected.relevance);
    }

    proptest! {
        #[test]
        fn affine_map_in_range(r in 0.0f64..=1.0, g in 0.0f64..=1.0, i in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            let w = Weights { relevance: a, information_gap: b - a, expected_impact: 1.0 - b };
            let m = motivation(&sub(r, g, i), &w);
            prop_assert!((m - (1.0 + 4.0 * (a * r + (b - a) * g + (1.0 - b) * i))).abs() < 1e-9);
            prop_assert!((1.0 - 1e-12..=5.0 + 1e-12).contains(&m));
        }

        #[test]
        fn monotone_in_each_subscore(r in 0.0f64..=1.0, g in 0.0f64..=1.0, i in 0.0f64..=1.0, bump in 0.0f64..=1.0, which in 0usize..3) {
            let w = Weights::default();
            let base = sub(r, g, i);
            let mut up = base;
            match which {
                0 => up.relevance = (r + bump).min(1.0),
                1 => up.information_gap = (g + bump).min(1.0),
                _ => up.expected_impact = (i + bump).min(1.0),
            }
            prop_assert!(motivation(&up, &w) >= motivation(&base, &w));
        }
    }
}
