//! Deliberation engine for a peer agent that joins two human players in a
//! dilemma discussion.
//!
//! The agent takes a tension-inducing stance at intake ([`domain`]), tracks
//! the discussion ([`context`]) and its own opinion strength ([`agent`]), and
//! decides when to speak through an inner-thought pipeline:
//! [`thought`] generates candidates, [`evaluator`] scores and gates them, and
//! [`articulator`] picks at most one and renders it. Every model-backed step
//! goes through [`provider::Provider`], which has a deterministic offline
//! implementation ([`provider::MockProvider`]).
//!
//! Sessions are event sourced ([`session`]): the append-only event log is the
//! single source of truth and replaying it reproduces the live state.

pub mod agent;
pub mod articulator;
pub mod config;
pub mod context;
pub mod domain;
pub mod evaluator;
pub mod exec;
pub mod fixtures;
pub mod provider;
pub mod seed;
pub mod session;
pub mod sim;
pub mod thought;

pub use agent::{AgentPersona, AgentState, MemoryEntry};
pub use articulator::{ArticulationPolicy, Selection, SelectionOutcome, SilenceReason};
pub use config::EngineConfig;
pub use context::{Phase, PlayerStrengthEstimate, SchwartzValue, Speaker, Utterance};
pub use domain::{
    AgentPositioning, Confidence, DilemmaCard, DilemmaCatalog, OpinionState, PlayerId,
    PositioningMode, Stance,
};
pub use evaluator::{MotivationBreakdown, Weights};
pub use fixtures::Fixtures;
pub use provider::{MockProvider, Provider, ProviderError};
pub use session::{replay, Session, SessionEvent, SessionState, SessionStatus};
pub use thought::{DeliberationContext, TalkMoveTag, Thought, ThoughtId, ThoughtKind};
