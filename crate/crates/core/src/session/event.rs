use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::agent::{AgentPersona, AgentState, OpinionAdjustment};
use crate::articulator::Selection;
use crate::config::EngineConfig;
use crate::context::{Phase, PlayerStrengthEstimate, Utterance};
use crate::domain::{AgentPositioning, DilemmaCard, OpinionState, PlayerId, Stance};
use crate::evaluator::EvaluatedThought;
use crate::thought::{OpinionShift, ThoughtId};

/// One line of the event log: `{"seq", "ts", "type", "payload"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl SessionEvent {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }

    /// Same event with the timestamp zeroed, for comparisons that ignore time.
    pub fn masked(&self) -> SessionEvent {
        SessionEvent { ts: DateTime::<Utc>::UNIX_EPOCH, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum EventBody {
    SessionCreated(SessionCreated),
    PlayerJoined(PlayerJoined),
    StanceSubmitted(StanceSubmitted),
    AgentPositioned(AgentPositioned),
    UtterancePosted(UtterancePosted),
    PhaseChanged(PhaseChanged),
    OpinionAdjusted(OpinionAdjusted),
    Concession(Concession),
    ThoughtsEvaluated(ThoughtsEvaluated),
    AgentSpoke(AgentSpoke),
    SessionClosed(SessionClosed),
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::SessionCreated(_) => "SessionCreated",
            EventBody::PlayerJoined(_) => "PlayerJoined",
            EventBody::StanceSubmitted(_) => "StanceSubmitted",
            EventBody::AgentPositioned(_) => "AgentPositioned",
            EventBody::UtterancePosted(_) => "UtterancePosted",
            EventBody::PhaseChanged(_) => "PhaseChanged",
            EventBody::OpinionAdjusted(_) => "OpinionAdjusted",
            EventBody::Concession(_) => "Concession",
            EventBody::ThoughtsEvaluated(_) => "ThoughtsEvaluated",
            EventBody::AgentSpoke(_) => "AgentSpoke",
            EventBody::SessionClosed(_) => "SessionClosed",
        }
    }

    /// Transcript seq of the utterance that caused this event, if any.
    pub fn trigger_seq(&self) -> Option<u64> {
        match self {
            EventBody::UtterancePosted(e) => Some(e.utterance.seq),
            EventBody::PhaseChanged(e) => Some(e.trigger_seq),
            EventBody::OpinionAdjusted(e) => Some(e.adjustment.trigger_seq),
            EventBody::Concession(e) => Some(e.trigger_seq),
            EventBody::ThoughtsEvaluated(e) => Some(e.trigger_seq),
            EventBody::AgentSpoke(e) => Some(e.trigger_seq),
            _ => None,
        }
    }

    /// Inner-thought traces are research observables, hidden from players by default.
    pub fn is_debug(&self) -> bool {
        matches!(self, EventBody::ThoughtsEvaluated(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub dilemma: DilemmaCard,
    pub config: EngineConfig,
    /// Master seed; every stochastic choice derives from it.
    pub seed: u64,
    pub persona: AgentPersona,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerJoined {
    pub player_id: PlayerId,
    /// SHA-256 of the player's bearer token, hex encoded.
    pub token_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceSubmitted {
    pub opinion: OpinionState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPositioned {
    pub positioning: AgentPositioning,
    pub agent: AgentState,
    /// Seed of the tie-break coin (only consulted for equal-confidence disagreement).
    pub tie_break_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePosted {
    pub utterance: Utterance,
    pub speaker_stance: Stance,
    pub assertiveness: f64,
    pub persuasion_score: f64,
    pub salience: f64,
    pub summary: String,
    /// Speaker's strength estimate after this utterance.
    pub estimate: PlayerStrengthEstimate,
    /// 0-based index of this human turn.
    pub human_turn: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseChanged {
    pub from: Phase,
    pub to: Phase,
    pub human_turn: u32,
    pub trigger_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionAdjusted {
    #[serde(flatten)]
    pub adjustment: OpinionAdjustment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concession {
    pub strength: f64,
    pub persuasion_score: f64,
    pub trigger_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtsEvaluated {
    pub trigger_seq: u64,
    pub attempt: u32,
    pub debug: bool,
    pub phase: Phase,
    pub candidates: Vec<EvaluatedThought>,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpoke {
    pub trigger_seq: u64,
    pub attempt: u32,
    pub thought_id: ThoughtId,
    pub text: String,
    pub utterance: Utterance,
    /// Stance shift the rendering acknowledged, if one was pending.
    pub acknowledged: Option<OpinionShift>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionClosed {
    pub reason: String,
}
