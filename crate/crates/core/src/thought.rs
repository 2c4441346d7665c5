//! Candidate inner thoughts and their generation.
//!
//! General thoughts are everyday conversational reactions. Strategic thoughts
//! implement a transactive talk move aimed at deepening the discussion and
//! always argue for the agent's own side (or acknowledge a shift in it).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::agent::{AgentState, MemoryEntry};
use crate::context::{Phase, PlayerStrengthEstimate, SchwartzValue, Utterance};
use crate::domain::{DilemmaCard, PlayerId, Stance};
use crate::fixtures::{TemplateKind, TemplateSet, ThoughtTemplate};
use crate::provider::{CallOptions, Provider, ProviderError, ProviderExt};
use crate::seed::keyed_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TalkMoveTag {
    Challenge,
    CounterArgument,
    JustificationRequest,
    Extension,
    Integration,
    PerspectiveTaking,
    ConsensusProbe,
    ConcessionAcknowledgment,
}

impl TalkMoveTag {
    pub const ALL: [TalkMoveTag; 8] = [
        TalkMoveTag::Challenge,
        TalkMoveTag::CounterArgument,
        TalkMoveTag::JustificationRequest,
        TalkMoveTag::Extension,
        TalkMoveTag::Integration,
        TalkMoveTag::PerspectiveTaking,
        TalkMoveTag::ConsensusProbe,
        TalkMoveTag::ConcessionAcknowledgment,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThoughtKind {
    General,
    Strategic(TalkMoveTag),
}

impl ThoughtKind {
    pub fn talk_move(self) -> Option<TalkMoveTag> {
        match self {
            ThoughtKind::General => None,
            ThoughtKind::Strategic(m) => Some(m),
        }
    }

    pub fn is_strategic(self) -> bool {
        matches!(self, ThoughtKind::Strategic(_))
    }
}

/// Identifies a thought by the utterance that triggered it, the generation
/// attempt for that trigger, and its position in the candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ThoughtId {
    pub trigger: u64,
    pub attempt: u32,
    pub index: u32,
}

impl fmt::Display for ThoughtId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}.{}.{}", self.trigger, self.attempt, self.index)
    }
}

impl FromStr for ThoughtId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed thought id {s:?}");
        let mut parts = s.strip_prefix('t').ok_or_else(bad)?.split('.');
        let mut next = || parts.next().and_then(|p| p.parse::<u64>().ok()).ok_or_else(bad);
        let id = ThoughtId {
            trigger: next()?,
            attempt: u32::try_from(next()?).map_err(|_| bad())?,
            index: u32::try_from(next()?).map_err(|_| bad())?,
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(id)
    }
}

impl From<ThoughtId> for String {
    fn from(id: ThoughtId) -> Self {
        id.to_string()
    }
}

impl TryFrom<String> for ThoughtId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grounding {
    pub memory_seqs: Vec<u64>,
    pub value_tags: BTreeSet<SchwartzValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thought {
    pub id: ThoughtId,
    pub kind: ThoughtKind,
    pub content: String,
    pub motivation: Option<f64>,
    pub grounding: Grounding,
    /// Player the thought is addressed to, if any.
    pub target: Option<PlayerId>,
    /// Offline template the content came from.
    pub template_id: Option<String>,
}

/// Why the agent's stance has to be acknowledged next time it speaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpinionShift {
    Adjusted,
    Conceded,
}

/// Everything the thought pipeline sees for one trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliberationContext {
    pub dilemma: DilemmaCard,
    pub transcript_window: Vec<Utterance>,
    pub agent: AgentState,
    pub phase: Phase,
    pub player_estimates: Vec<PlayerStrengthEstimate>,
    pub retrieved_memories: Vec<MemoryEntry>,
    pub triggering_seq: u64,
    #[serde(default)]
    pub attempt: u32,
    /// Strongest stance shift since the agent last spoke.
    pub pending_shift: Option<OpinionShift>,
}

impl DeliberationContext {
    pub fn trigger(&self) -> Option<&Utterance> {
        self.transcript_window.iter().find(|u| u.seq == self.triggering_seq)
    }

    pub fn trigger_tags(&self) -> BTreeSet<SchwartzValue> {
        self.trigger().map(|u| u.value_tags.clone()).unwrap_or_default()
    }

    /// Every value tag voiced anywhere in the window.
    pub fn voiced_tags(&self) -> BTreeSet<SchwartzValue> {
        self.transcript_window.iter().flat_map(|u| u.value_tags.iter().copied()).collect()
    }

    pub fn mean_player_estimate(&self) -> Option<f64> {
        if self.player_estimates.is_empty() {
            return None;
        }
        Some(self.player_estimates.iter().map(|e| e.estimate).sum::<f64>() / self.player_estimates.len() as f64)
    }

    pub fn estimate_for(&self, player: &PlayerId) -> Option<f64> {
        self.player_estimates.iter().find(|e| &e.player_id == player).map(|e| e.estimate)
    }

    pub fn may_acknowledge_shift(&self) -> bool {
        self.pending_shift.is_some() || self.agent.conceded
    }
}

/// A thought as returned by a provider, before ids and grounding are assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawThought {
    pub kind: ThoughtKind,
    pub content: String,
    #[serde(default)]
    pub value_tags: BTreeSet<SchwartzValue>,
    #[serde(default)]
    pub target: Option<PlayerId>,
    #[serde(default)]
    pub template_id: Option<String>,
    /// Stance the content argues for, when known.
    #[serde(default)]
    pub stance: Option<Stance>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ThoughtError {
    #[error("at least one thought must be requested")]
    EmptyBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThoughtBudget {
    pub general: usize,
    pub strategic: usize,
}

impl Default for ThoughtBudget {
    fn default() -> Self {
        Self { general: 3, strategic: 3 }
    }
}

/// Asks the provider for candidate thoughts and keeps the valid ones.
///
/// Timeouts and malformed output get one retry; after that, or on any other
/// provider failure, the result is empty and the agent stays silent.
pub fn generate_thoughts(
    ctx: &DeliberationContext,
    provider: &dyn Provider,
    opts: &CallOptions,
    budget: ThoughtBudget,
) -> Result<Vec<Thought>, ThoughtError> {
    if budget.general + budget.strategic == 0 {
        return Err(ThoughtError::EmptyBudget);
    }
    let mut raw = None;
    for attempt in 0..2 {
        match provider.generate_thoughts(ctx, budget, opts) {
            Ok(thoughts) => {
                raw = Some(thoughts);
                break;
            }
            Err(err @ (ProviderError::Timeout(_) | ProviderError::MalformedOutput(_))) if attempt == 0 => {
                warn!(trace_id = %opts.trace_id, %err, "thought generation failed, retrying");
            }
            Err(err) => {
                warn!(trace_id = %opts.trace_id, %err, "thought generation failed, staying silent");
                break;
            }
        }
    }
    Ok(accept_thoughts(ctx, raw.unwrap_or_default(), budget))
}

/// Drops invalid or off-stance candidates, enforces the budget and assigns ids.
pub fn accept_thoughts(ctx: &DeliberationContext, raw: Vec<RawThought>, budget: ThoughtBudget) -> Vec<Thought> {
    let mut general = 0;
    let mut strategic = 0;
    let mut out = Vec::new();
    for r in raw {
        let content = r.content.trim();
        if content.is_empty() {
            continue;
        }
        match r.kind {
            ThoughtKind::General => {
                if general == budget.general {
                    continue;
                }
                general += 1;
            }
            ThoughtKind::Strategic(m) => {
                if strategic == budget.strategic {
                    continue;
                }
                if m == TalkMoveTag::ConcessionAcknowledgment && !ctx.may_acknowledge_shift() {
                    continue;
                }
                if r.stance.is_some_and(|s| s != ctx.agent.position) {
                    continue;
                }
                strategic += 1;
            }
        }
        let memory_seqs = ctx
            .retrieved_memories
            .iter()
            .filter(|m| !m.value_tags.is_disjoint(&r.value_tags))
            .map(|m| m.seq)
            .collect();
        out.push(Thought {
            id: ThoughtId {
                trigger: ctx.triggering_seq,
                attempt: ctx.attempt,
                index: out.len() as u32,
            },
            kind: r.kind,
            content: content.to_string(),
            motivation: None,
            grounding: Grounding { memory_seqs, value_tags: r.value_tags },
            target: r.target,
            template_id: r.template_id,
        });
    }
    out
}

/// Deterministic template-based generation used by the offline provider.
pub fn template_thoughts(
    ctx: &DeliberationContext,
    templates: &TemplateSet,
    seed: u64,
    budget: ThoughtBudget,
) -> Vec<RawThought> {
    let trigger_tags = ctx.trigger_tags();
    let target = ctx.trigger().and_then(|u| u.speaker.player().cloned());
    let eligible = |t: &ThoughtTemplate| {
        t.stance.is_none_or(|s| s == ctx.agent.position)
            && t.required_value_tags.iter().all(|v| trigger_tags.contains(v))
            && (!t.uses_value() || !trigger_tags.is_empty())
            && (!t.uses_player() || target.is_some())
            && (t.talk_move != Some(TalkMoveTag::ConcessionAcknowledgment) || ctx.may_acknowledge_shift())
    };
    let mut pool: Vec<&ThoughtTemplate> = templates.templates.iter().filter(|t| eligible(t)).collect();
    pool.sort_by_key(|t| {
        let acknowledges = t.talk_move == Some(TalkMoveTag::ConcessionAcknowledgment) && ctx.pending_shift.is_some();
        (!acknowledges, t.required_value_tags.is_empty(), keyed_hash(seed, &t.template_id))
    });

    let general: Vec<&ThoughtTemplate> =
        pool.iter().copied().filter(|t| t.kind == TemplateKind::General).take(budget.general).collect();

    let strategic_pool: Vec<&ThoughtTemplate> =
        pool.iter().copied().filter(|t| t.kind == TemplateKind::Strategic).collect();
    let mut strategic: Vec<&ThoughtTemplate> = Vec::new();
    let mut moves = BTreeSet::new();
    for t in &strategic_pool {
        if strategic.len() < budget.strategic && moves.insert(t.talk_move) {
            strategic.push(t);
        }
    }
    for t in &strategic_pool {
        if strategic.len() < budget.strategic && !strategic.iter().any(|s| s.template_id == t.template_id) {
            strategic.push(t);
        }
    }

    general
        .into_iter()
        .chain(strategic)
        .map(|t| instantiate(t, &trigger_tags, target.as_ref()))
        .collect()
}

fn instantiate(t: &ThoughtTemplate, trigger_tags: &BTreeSet<SchwartzValue>, target: Option<&PlayerId>) -> RawThought {
    let focus = t.required_value_tags.first().copied().or_else(|| trigger_tags.iter().next().copied());
    let mut text = t.text_pattern.clone();
    let mut value_tags: BTreeSet<SchwartzValue> =
        t.required_value_tags.iter().chain(&t.raises_value_tags).copied().collect();
    if t.uses_value() {
        if let Some(v) = focus {
            text = text.replace("{value}", v.label());
            value_tags.insert(v);
        }
    }
    if let Some(p) = target {
        text = text.replace("{player}", p.as_str());
    }
    RawThought {
        kind: match t.talk_move {
            Some(m) if t.kind == TemplateKind::Strategic => ThoughtKind::Strategic(m),
            _ => ThoughtKind::General,
        },
        content: text,
        value_tags,
        target: if t.kind == TemplateKind::Strategic { target.cloned() } else { None },
        template_id: Some(t.template_id.clone()),
        stance: t.stance,
    }
}
