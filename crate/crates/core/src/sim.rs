//! Scripted sessions and log inspection.
//!
//! A script fixes the dilemma, both intake answers and the human turns, so
//! a run depends only on the script, the seed and the provider. Batches over
//! many seeds fan out with [`Execution`].

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::AgentPersona;
use crate::config::EngineConfig;
use crate::domain::{AgentPositioning, DilemmaCard, DilemmaCatalog, OpinionState, PlayerId, Stance};
use crate::exec::map_ordered;
use crate::session::{
    replay, token_sha256, EventBody, NullSink, ReplayError, Runtime, Session, SessionError, SessionEvent,
    SessionState, SessionStatus,
};
use crate::thought::{ThoughtId, ThoughtKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown dilemma {0:?}")]
    UnknownDilemma(String),
    #[error("script needs exactly two players, found {0}")]
    PlayerCount(usize),
    #[error("parsing script: {0}")]
    Parse(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DilemmaRef {
    Id(String),
    Card(DilemmaCard),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptPlayer {
    pub id: PlayerId,
    pub stance: Stance,
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptTurn {
    pub player: PlayerId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub dilemma: DilemmaRef,
    pub players: Vec<ScriptPlayer>,
    pub turns: Vec<ScriptTurn>,
    #[serde(default)]
    pub config: EngineConfig,
    #[serde(default)]
    pub persona: Option<AgentPersona>,
    /// Heartbeat re-runs attempted after each turn on which the agent stayed silent.
    #[serde(default)]
    pub heartbeats_per_turn: u32,
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    fn card(&self, catalog: &DilemmaCatalog) -> Result<DilemmaCard, SimError> {
        match &self.dilemma {
            DilemmaRef::Id(id) => catalog.get(id).cloned().ok_or_else(|| SimError::UnknownDilemma(id.clone())),
            DilemmaRef::Card(card) => Ok(card.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub seed: u64,
    pub events: Vec<SessionEvent>,
    pub state: SessionState,
}

/// Plays a script to the end and closes the session.
pub fn run_script(script: &Script, seed: u64, rt: &Runtime, catalog: &DilemmaCatalog) -> Result<SimulationRun, SimError> {
    if script.players.len() != 2 {
        return Err(SimError::PlayerCount(script.players.len()));
    }
    let mut sink = NullSink;
    let persona = script.persona.clone().unwrap_or_else(AgentPersona::default_peer);
    let mut session = Session::create(
        rt,
        &mut sink,
        format!("sim-{seed}"),
        script.card(catalog)?,
        script.config.clone(),
        seed,
        persona,
    )?;
    for p in &script.players {
        session.join(rt, &mut sink, p.id.clone(), token_sha256(&format!("sim:{}", p.id)))?;
    }
    for p in &script.players {
        let opinion = OpinionState::new(p.id.as_str(), p.stance, p.confidence).map_err(SessionError::from)?;
        session.submit_stance(rt, &mut sink, opinion)?;
    }
    for turn in &script.turns {
        session.post_utterance(rt, &mut sink, &turn.player, &turn.text)?;
        for _ in 0..script.heartbeats_per_turn {
            if session.heartbeat(rt, &mut sink)?.is_empty() {
                break;
            }
        }
    }
    session.close(rt, &mut sink, "script finished")?;
    Ok(SimulationRun { seed, events: session.log().to_vec(), state: session.state().clone() })
}

/// Runs the script once per seed; results keep the order of `seeds`.
pub fn run_batch(
    script: &Script,
    seeds: &[u64],
    rt: &Runtime,
    catalog: &DilemmaCatalog,
) -> Vec<Result<RunSummary, SimError>> {
    map_ordered(seeds, rt.exec, |&seed| {
        let run = run_script(script, seed, rt, catalog)?;
        Ok(RunSummary { seed, log_digest: masked_digest(&run.events), inspection: inspect(&run.events)? })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    /// SHA-256 of the log with timestamps zeroed.
    pub log_digest: String,
    pub inspection: Inspection,
}

/// Hex SHA-256 over the JSONL form of `events` with timestamps zeroed.
pub fn masked_digest(events: &[SessionEvent]) -> String {
    let mut hasher = Sha256::new();
    for event in events {
        hasher.update(event.masked().to_json_line().as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub trigger_seq: u64,
    pub attempt: u32,
    pub thought_id: ThoughtId,
    pub kind: ThoughtKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthPoint {
    pub trigger_seq: u64,
    pub strength: f64,
}

/// Research summary of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inspection {
    pub session_id: String,
    pub dilemma_id: String,
    pub status: SessionStatus,
    pub positioning: Option<AgentPositioning>,
    pub human_turns: u32,
    pub interventions: Vec<Intervention>,
    pub evaluations: usize,
    pub silences: usize,
    pub gated_candidates: usize,
    /// Opinion strength after positioning and after each adjustment.
    pub strength_trajectory: Vec<StrengthPoint>,
    pub conceded: bool,
    pub late_from_turn: Option<u32>,
}

/// Replays the log (so a corrupt log is rejected) and summarises it.
pub fn inspect(events: &[SessionEvent]) -> Result<Inspection, ReplayError> {
    let state = replay(events)?;
    let mut out = Inspection {
        session_id: state.session_id.clone(),
        dilemma_id: state.dilemma.id.clone(),
        status: state.status,
        positioning: state.positioning.clone(),
        human_turns: state.human_turns,
        interventions: Vec::new(),
        evaluations: 0,
        silences: 0,
        gated_candidates: 0,
        strength_trajectory: Vec::new(),
        conceded: state.agent.as_ref().is_some_and(|a| a.conceded),
        late_from_turn: None,
    };
    let mut candidates = std::collections::HashMap::new();
    for event in events {
        match &event.body {
            EventBody::AgentPositioned(e) => {
                out.strength_trajectory.push(StrengthPoint { trigger_seq: 0, strength: e.agent.opinion_strength });
            }
            EventBody::OpinionAdjusted(e) => out.strength_trajectory.push(StrengthPoint {
                trigger_seq: e.adjustment.trigger_seq,
                strength: e.adjustment.new_strength,
            }),
            EventBody::PhaseChanged(e) => out.late_from_turn = Some(e.human_turn),
            EventBody::ThoughtsEvaluated(e) => {
                out.evaluations += 1;
                out.gated_candidates += e.candidates.iter().filter(|c| c.breakdown.gated).count();
                if matches!(e.selection, crate::articulator::Selection::Silence(_)) {
                    out.silences += 1;
                }
                for c in &e.candidates {
                    candidates.insert(c.thought.id, c.thought.kind);
                }
            }
            EventBody::AgentSpoke(e) => out.interventions.push(Intervention {
                trigger_seq: e.trigger_seq,
                attempt: e.attempt,
                thought_id: e.thought_id,
                kind: candidates.get(&e.thought_id).copied().unwrap_or(ThoughtKind::General),
                text: e.text.clone(),
            }),
            _ => {}
        }
    }
    Ok(out)
}

impl fmt::Display for Inspection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "session {} ({}) status {:?}", self.session_id, self.dilemma_id, self.status)?;
        if let Some(p) = &self.positioning {
            writeln!(f, "agent stance {:?} via {:?}", p.stance, p.mode)?;
        }
        writeln!(
            f,
            "human turns {}, pipeline runs {}, interventions {}, silences {}, gated candidates {}",
            self.human_turns,
            self.evaluations,
            self.interventions.len(),
            self.silences,
            self.gated_candidates
        )?;
        if let Some(turn) = self.late_from_turn {
            writeln!(f, "late phase from human turn {turn}")?;
        }
        let trajectory: Vec<String> = self.strength_trajectory.iter().map(|p| format!("{:.2}", p.strength)).collect();
        writeln!(f, "strength {}{}", trajectory.join(" -> "), if self.conceded { " (conceded)" } else { "" })?;
        for i in &self.interventions {
            let kind = match i.kind {
                ThoughtKind::General => "general".to_string(),
                ThoughtKind::Strategic(m) => format!("{m:?}"),
            };
            writeln!(f, "  [{}] after #{} {}: {}", i.thought_id, i.trigger_seq, kind, i.text)?;
        }
        Ok(())
    }
}
