//! Event-sourced sessions.
//!
//! Commands validate their input, compute the resulting events, fold them
//! into a scratch copy of the state, persist them through an [`EventSink`],
//! and only then commit. [`replay`] folds a stored log through the same
//! [`SessionState::apply`] path.
//!
//! A human utterance is handled in two phases so the slow part can run
//! without holding the session: [`Session::begin_utterance`] records the
//! utterance and its immediate effects, [`deliberate`] runs the thought
//! pipeline on a snapshot, and [`Session::commit_deliberation`] appends the
//! result unless a newer utterance has arrived in the meantime.

mod event;
mod log;
mod state;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use thiserror::Error;
use tracing::{debug, warn};

use crate::agent::{truncate_summary, utterance_salience, AgentPersona, SUMMARY_CHARS};
use crate::articulator::{articulate, render_offline, select_thought, Selection};
use crate::config::EngineConfig;
use crate::context::{classify_utterance, update_phase, update_player_strength, Phase, Speaker, Utterance};
use crate::domain::{assign_agent_position, DilemmaCard, DomainError, OpinionState, PlayerId};
use crate::evaluator::{evaluate_all, EvaluatedThought};
use crate::exec::Execution;
use crate::fixtures::Fixtures;
use crate::provider::{CallOptions, Provider, ProviderExt};
use crate::seed::{sub_seed, GENERAL_COIN, PROVIDER, TIE_BREAK};
use crate::thought::{generate_thoughts, DeliberationContext, OpinionShift, ThoughtId};

pub use event::*;
pub use log::{parse_log, ParsedLog};
pub use state::{LastEvaluation, Participant, SessionState, SessionStatus};

/// Heartbeat re-runs allowed per human utterance.
pub const MAX_HEARTBEATS_PER_TRIGGER: u32 = 3;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// Durable storage for new events. A command's events are acknowledged
/// only after `persist` returns.
pub trait EventSink {
    fn persist(&mut self, events: &[SessionEvent]) -> std::io::Result<()>;
}

/// Keeps nothing; for simulations and tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn persist(&mut self, _events: &[SessionEvent]) -> std::io::Result<()> {
        Ok(())
    }
}

impl EventSink for Vec<SessionEvent> {
    fn persist(&mut self, events: &[SessionEvent]) -> std::io::Result<()> {
        self.extend_from_slice(events);
        Ok(())
    }
}

/// Hex SHA-256 of a bearer token; only the digest is ever logged.
pub fn token_sha256(token: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// Shared collaborators for running commands.
#[derive(Clone)]
pub struct Runtime {
    pub provider: Arc<dyn Provider>,
    pub fixtures: Arc<Fixtures>,
    pub clock: Arc<dyn Clock>,
    pub exec: Execution,
}

impl Runtime {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self {
            provider,
            fixtures: Arc::new(Fixtures::builtin()),
            clock: Arc::new(SystemClock),
            exec: Execution::default(),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is {actual:?}, expected {expected:?}")]
    WrongStatus { expected: SessionStatus, actual: SessionStatus },
    #[error("unknown player {0}")]
    UnknownPlayer(PlayerId),
    #[error("player {0} already joined")]
    DuplicatePlayer(PlayerId),
    #[error("session already has two players")]
    SessionFull,
    #[error("player {0} already submitted a stance")]
    StanceAlreadySubmitted(PlayerId),
    #[error("utterance text is empty")]
    EmptyText,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("persisting events: {0}")]
    Persist(#[source] std::io::Error),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("replay failed at seq {seq}: {reason}")]
pub struct ReplayError {
    pub seq: u64,
    pub reason: String,
}

/// Rebuilds session state from a log. Fails at the first event that does
/// not fold, naming its seq.
pub fn replay(events: &[SessionEvent]) -> Result<SessionState, ReplayError> {
    let Some(first) = events.first() else {
        return Err(ReplayError { seq: 1, reason: "empty log".into() });
    };
    let mut state = SessionState::created(first).map_err(|reason| ReplayError { seq: first.seq, reason })?;
    for event in &events[1..] {
        state.apply(event).map_err(|reason| ReplayError { seq: event.seq, reason })?;
    }
    Ok(state)
}

/// Snapshot handed to [`deliberate`].
#[derive(Debug, Clone)]
pub struct PendingTrigger {
    pub ctx: DeliberationContext,
    pub opts: CallOptions,
    pub coin_seed: u64,
    pub config: EngineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spoken {
    pub thought_id: ThoughtId,
    pub text: String,
    pub utterance_tags: crate::context::ValueClassification,
}

/// Result of one pipeline run, not yet part of the log.
#[derive(Debug, Clone, PartialEq)]
pub struct Deliberation {
    pub trigger_seq: u64,
    pub attempt: u32,
    pub phase: Phase,
    pub candidates: Vec<EvaluatedThought>,
    pub selection: Selection,
    pub spoken: Option<Spoken>,
    pub acknowledged: Option<OpinionShift>,
}

/// Generates, scores, selects and renders. Touches no session state.
pub fn deliberate(pending: &PendingTrigger, rt: &Runtime) -> Deliberation {
    let ctx = &pending.ctx;
    let provider = rt.provider.as_ref();
    let thoughts =
        generate_thoughts(ctx, provider, &pending.opts.child("generate"), pending.config.budget()).unwrap_or_default();
    let candidates =
        evaluate_all(&thoughts, ctx, provider, &pending.opts.child("score"), &pending.config.evaluator(), rt.exec);
    let selection = select_thought(&candidates, &pending.config.policy(pending.coin_seed));
    let spoken = match selection {
        Selection::Speak(id) => candidates.iter().find(|c| c.thought.id == id).map(|chosen| {
            let thought = &chosen.thought;
            let text = articulate(
                thought,
                &ctx.agent.persona,
                ctx,
                provider,
                &pending.opts.child("articulate"),
                &rt.fixtures.articulation,
            )
            .unwrap_or_else(|err| {
                warn!(trace_id = %pending.opts.trace_id, %err, "articulation failed, using template");
                render_offline(thought, &rt.fixtures.articulation)
            });
            Spoken {
                thought_id: id,
                text,
                utterance_tags: crate::context::ValueClassification {
                    value_tags: thought.grounding.value_tags.clone(),
                    talk_moves: thought.kind.talk_move().into_iter().collect(),
                },
            }
        }),
        Selection::Silence(_) => None,
    };
    Deliberation {
        trigger_seq: ctx.triggering_seq,
        attempt: ctx.attempt,
        phase: ctx.phase,
        candidates,
        selection,
        spoken,
        acknowledged: ctx.pending_shift,
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    state: SessionState,
    log: Vec<SessionEvent>,
}

impl Session {
    pub fn create(
        rt: &Runtime,
        sink: &mut dyn EventSink,
        session_id: impl Into<String>,
        dilemma: DilemmaCard,
        config: EngineConfig,
        seed: u64,
        persona: AgentPersona,
    ) -> Result<Self, SessionError> {
        config.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        dilemma.validate()?;
        let event = SessionEvent {
            seq: 1,
            ts: rt.clock.now(),
            body: EventBody::SessionCreated(SessionCreated {
                session_id: session_id.into(),
                dilemma,
                config,
                seed,
                persona,
            }),
        };
        let state = SessionState::created(&event).map_err(SessionError::Invariant)?;
        sink.persist(std::slice::from_ref(&event)).map_err(SessionError::Persist)?;
        Ok(Self { state, log: vec![event] })
    }

    /// Resumes a session from its stored log.
    pub fn from_log(events: Vec<SessionEvent>) -> Result<Self, ReplayError> {
        let state = replay(&events)?;
        Ok(Self { state, log: events })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn log(&self) -> &[SessionEvent] {
        &self.log
    }

    pub fn id(&self) -> &str {
        &self.state.session_id
    }

    fn commit(
        &mut self,
        rt: &Runtime,
        sink: &mut dyn EventSink,
        bodies: Vec<EventBody>,
    ) -> Result<Vec<SessionEvent>, SessionError> {
        let mut next = self.state.clone();
        let mut events = Vec::with_capacity(bodies.len());
        for body in bodies {
            let event = SessionEvent { seq: next.last_seq + 1, ts: rt.clock.now(), body };
            next.apply(&event).map_err(SessionError::Invariant)?;
            events.push(event);
        }
        sink.persist(&events).map_err(SessionError::Persist)?;
        self.state = next;
        self.log.extend_from_slice(&events);
        Ok(events)
    }

    fn require(&self, expected: SessionStatus) -> Result<(), SessionError> {
        if self.state.status != expected {
            return Err(SessionError::WrongStatus { expected, actual: self.state.status });
        }
        Ok(())
    }

    pub fn join(
        &mut self,
        rt: &Runtime,
        sink: &mut dyn EventSink,
        player_id: PlayerId,
        token_sha256: String,
    ) -> Result<Vec<SessionEvent>, SessionError> {
        self.require(SessionStatus::AwaitingStances)?;
        if self.state.participant(&player_id).is_some() {
            return Err(SessionError::DuplicatePlayer(player_id));
        }
        if self.state.participants.len() >= 2 {
            return Err(SessionError::SessionFull);
        }
        self.commit(rt, sink, vec![EventBody::PlayerJoined(PlayerJoined { player_id, token_sha256 })])
    }

    /// Records an intake answer; the second one also positions the agent.
    pub fn submit_stance(
        &mut self,
        rt: &Runtime,
        sink: &mut dyn EventSink,
        opinion: OpinionState,
    ) -> Result<Vec<SessionEvent>, SessionError> {
        self.require(SessionStatus::AwaitingStances)?;
        let player = &opinion.player_id;
        if self.state.participant(player).is_none() {
            return Err(SessionError::UnknownPlayer(player.clone()));
        }
        if self.state.opinion(player).is_some() {
            return Err(SessionError::StanceAlreadySubmitted(player.clone()));
        }
        let mut bodies = vec![EventBody::StanceSubmitted(StanceSubmitted { opinion: opinion.clone() })];
        if let [first] = self.state.opinions.as_slice() {
            let tie_break_seed = sub_seed(self.state.seed, TIE_BREAK, 0);
            let positioning = assign_agent_position(first, &opinion, tie_break_seed)?;
            let agent = crate::agent::AgentState::init(&positioning, first, &opinion, self.state.persona.clone());
            bodies.push(EventBody::AgentPositioned(AgentPositioned { positioning, agent, tie_break_seed }));
        }
        self.commit(rt, sink, bodies)
    }

    /// Interprets a human utterance and records it with its effects on
    /// phase, player estimates and the agent's opinion strength.
    pub fn begin_utterance(
        &mut self,
        rt: &Runtime,
        sink: &mut dyn EventSink,
        player: &PlayerId,
        text: &str,
    ) -> Result<(Vec<SessionEvent>, PendingTrigger), SessionError> {
        self.require(SessionStatus::Active)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(SessionError::EmptyText);
        }
        let state = &self.state;
        let opinion = state.opinion(player).ok_or_else(|| SessionError::UnknownPlayer(player.clone()))?;
        let estimate = state.estimate(player).ok_or_else(|| SessionError::UnknownPlayer(player.clone()))?;
        let mut agent = state.agent.clone().ok_or_else(|| SessionError::Invariant("active without agent".into()))?;
        let config = &state.config;
        let seq = state.transcript.next_seq();
        let opts = self.call_options(seq, 0);
        let provider = rt.provider.as_ref();

        let classification = classify_utterance(text, provider, &opts.child("values"));
        let utterance = Utterance {
            seq,
            speaker: Speaker::Player(player.clone()),
            text: text.to_string(),
            value_tags: classification.value_tags,
            talk_moves: classification.talk_moves,
        };
        let assertiveness = provider.classify_assertiveness(text, &opts.child("assertiveness")).unwrap_or_else(|err| {
            warn!(trace_id = %opts.trace_id, %err, "assertiveness failed, assuming neutral");
            0.5
        });
        let persuasion_score = provider
            .detect_persuasion(text, agent.position, Some(opinion.stance), &opts.child("persuasion"))
            .unwrap_or_else(|err| {
                warn!(trace_id = %opts.trace_id, %err, "persuasion detection failed, assuming none");
                0.0
            });
        let summary = provider
            .summarize(text, &opts.child("summary"))
            .ok()
            .filter(|s| !s.trim().is_empty())
            .unwrap_or_else(|| truncate_summary(text, SUMMARY_CHARS));
        let new_estimate = update_player_strength(estimate, &utterance, assertiveness, config.interpreter.strength_step)
            .map_err(|e| SessionError::Invariant(e.to_string()))?;
        let human_turn = state.human_turns;

        let mut bodies = vec![EventBody::UtterancePosted(UtterancePosted {
            salience: utterance_salience(utterance.value_tags.len(), persuasion_score),
            utterance,
            speaker_stance: opinion.stance,
            assertiveness,
            persuasion_score,
            summary,
            estimate: new_estimate,
            human_turn,
        })];
        let phase = update_phase(human_turn, config.phase.boundary());
        if phase != state.phase {
            bodies.push(EventBody::PhaseChanged(PhaseChanged { from: state.phase, to: phase, human_turn, trigger_seq: seq }));
        }
        let effect = agent
            .apply_persuasion(persuasion_score, seq, &config.persuasion())
            .map_err(|e| SessionError::Invariant(e.to_string()))?;
        if let Some(adjustment) = effect.adjustment {
            bodies.push(EventBody::OpinionAdjusted(OpinionAdjusted { adjustment }));
        }
        if effect.conceded {
            bodies.push(EventBody::Concession(Concession {
                strength: agent.opinion_strength,
                persuasion_score,
                trigger_seq: seq,
            }));
        }
        let events = self.commit(rt, sink, bodies)?;
        let pending = self.pending_trigger(seq, 0)?;
        Ok((events, pending))
    }

    /// Appends a pipeline result, or drops it when the session moved on.
    pub fn commit_deliberation(
        &mut self,
        rt: &Runtime,
        sink: &mut dyn EventSink,
        deliberation: Deliberation,
    ) -> Result<Vec<SessionEvent>, SessionError> {
        let state = &self.state;
        if state.status != SessionStatus::Active
            || state.last_trigger != Some(deliberation.trigger_seq)
            || state.evaluations_for_trigger != deliberation.attempt
        {
            debug!(
                session = %state.session_id,
                trigger = deliberation.trigger_seq,
                attempt = deliberation.attempt,
                "discarding stale deliberation"
            );
            return Ok(Vec::new());
        }
        let next_seq = state.transcript.next_seq();
        let mut bodies = vec![EventBody::ThoughtsEvaluated(ThoughtsEvaluated {
            trigger_seq: deliberation.trigger_seq,
            attempt: deliberation.attempt,
            debug: true,
            phase: deliberation.phase,
            candidates: deliberation.candidates,
            selection: deliberation.selection,
        })];
        if let Some(spoken) = deliberation.spoken {
            bodies.push(EventBody::AgentSpoke(AgentSpoke {
                trigger_seq: deliberation.trigger_seq,
                attempt: deliberation.attempt,
                thought_id: spoken.thought_id,
                utterance: Utterance {
                    seq: next_seq,
                    speaker: Speaker::Agent,
                    text: spoken.text.clone(),
                    value_tags: spoken.utterance_tags.value_tags,
                    talk_moves: spoken.utterance_tags.talk_moves,
                },
                text: spoken.text,
                acknowledged: deliberation.acknowledged,
            }));
        }
        self.commit(rt, sink, bodies)
    }

    /// Full utterance handling in one call.
    pub fn post_utterance(
        &mut self,
        rt: &Runtime,
        sink: &mut dyn EventSink,
        player: &PlayerId,
        text: &str,
    ) -> Result<Vec<SessionEvent>, SessionError> {
        let (mut events, pending) = self.begin_utterance(rt, sink, player, text)?;
        let deliberation = deliberate(&pending, rt);
        events.extend(self.commit_deliberation(rt, sink, deliberation)?);
        Ok(events)
    }

    /// A fresh pipeline run for the latest utterance when the agent stayed
    /// silent on it and the heartbeat budget is not exhausted.
    pub fn heartbeat_trigger(&self) -> Option<PendingTrigger> {
        let state = &self.state;
        if state.status != SessionStatus::Active {
            return None;
        }
        let last = state.last_evaluation.as_ref()?;
        let silent = matches!(last.selection, Selection::Silence(_));
        let attempt = state.evaluations_for_trigger;
        if !silent || state.last_trigger != Some(last.trigger_seq) || attempt > MAX_HEARTBEATS_PER_TRIGGER {
            return None;
        }
        self.pending_trigger(last.trigger_seq, attempt).ok()
    }

    /// Runs one heartbeat synchronously; returns no events when none is due.
    pub fn heartbeat(&mut self, rt: &Runtime, sink: &mut dyn EventSink) -> Result<Vec<SessionEvent>, SessionError> {
        match self.heartbeat_trigger() {
            Some(pending) => {
                let deliberation = deliberate(&pending, rt);
                self.commit_deliberation(rt, sink, deliberation)
            }
            None => Ok(Vec::new()),
        }
    }

    pub fn close(
        &mut self,
        rt: &Runtime,
        sink: &mut dyn EventSink,
        reason: impl Into<String>,
    ) -> Result<Vec<SessionEvent>, SessionError> {
        if self.state.status == SessionStatus::Closed {
            return Err(SessionError::WrongStatus { expected: SessionStatus::Active, actual: SessionStatus::Closed });
        }
        self.commit(rt, sink, vec![EventBody::SessionClosed(SessionClosed { reason: reason.into() })])
    }

    fn call_options(&self, trigger: u64, attempt: u32) -> CallOptions {
        let index = (trigger << 8) | u64::from(attempt);
        CallOptions::new(
            sub_seed(self.state.seed, PROVIDER, index),
            self.state.config.provider_timeout(),
            format!("{}/u{trigger}.{attempt}", self.state.session_id),
        )
    }

    fn pending_trigger(&self, trigger: u64, attempt: u32) -> Result<PendingTrigger, SessionError> {
        let state = &self.state;
        let agent = state.agent.clone().ok_or_else(|| SessionError::Invariant("no agent".into()))?;
        let query = state.transcript.get(trigger).map(|u| u.value_tags.clone()).unwrap_or_default();
        let k = state.config.agent.memory_k;
        let retrieved_memories = agent
            .retrieve_memories(&query, k + 1)
            .map_err(|e| SessionError::Invariant(e.to_string()))?
            .into_iter()
            .filter(|m| m.seq != trigger)
            .take(k)
            .collect();
        let ctx = DeliberationContext {
            dilemma: state.dilemma.clone(),
            transcript_window: state.transcript.window(state.config.interpreter.window),
            agent,
            phase: state.phase,
            player_estimates: state.estimates.clone(),
            retrieved_memories,
            triggering_seq: trigger,
            attempt,
            pending_shift: state.pending_shift,
        };
        let index = (trigger << 8) | u64::from(attempt);
        Ok(PendingTrigger {
            ctx,
            opts: self.call_options(trigger, attempt),
            coin_seed: sub_seed(state.seed, GENERAL_COIN, index),
            config: state.config.clone(),
        })
    }
}
