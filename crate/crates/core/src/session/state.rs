use serde::{Deserialize, Serialize};

use crate::agent::{AgentPersona, AgentState, MemoryEntry};
use crate::articulator::Selection;
use crate::config::EngineConfig;
use crate::context::{update_phase, Phase, PlayerStrengthEstimate, Speaker, Transcript};
use crate::domain::{assign_agent_position, initial_opinion_strength, AgentPositioning, DilemmaCard, OpinionState, PlayerId};
use crate::thought::OpinionShift;

use super::event::{EventBody, SessionEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    AwaitingStances,
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub player_id: PlayerId,
    pub token_sha256: String,
}

/// Outcome of the last pipeline run, kept so replay can check causality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastEvaluation {
    pub trigger_seq: u64,
    pub attempt: u32,
    pub selection: Selection,
}

/// State derived by folding the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub seed: u64,
    pub config: EngineConfig,
    pub dilemma: DilemmaCard,
    pub persona: AgentPersona,
    pub status: SessionStatus,
    pub participants: Vec<Participant>,
    /// Intake answers in join order.
    pub opinions: Vec<OpinionState>,
    pub positioning: Option<AgentPositioning>,
    pub agent: Option<AgentState>,
    pub phase: Phase,
    pub transcript: Transcript,
    pub estimates: Vec<PlayerStrengthEstimate>,
    pub human_turns: u32,
    pub pending_shift: Option<OpinionShift>,
    /// Transcript seq of the latest human utterance.
    pub last_trigger: Option<u64>,
    /// Pipeline runs already recorded for `last_trigger`.
    pub evaluations_for_trigger: u32,
    pub last_evaluation: Option<LastEvaluation>,
    pub last_seq: u64,
}

impl SessionState {
    /// State right after a `SessionCreated` event.
    pub fn created(event: &SessionEvent) -> Result<Self, String> {
        let EventBody::SessionCreated(c) = &event.body else {
            return Err(format!("log must start with SessionCreated, found {}", event.kind()));
        };
        if event.seq != 1 {
            return Err(format!("SessionCreated must have seq 1, found {}", event.seq));
        }
        c.config.validate().map_err(|e| e.to_string())?;
        Ok(Self {
            session_id: c.session_id.clone(),
            seed: c.seed,
            config: c.config.clone(),
            dilemma: c.dilemma.clone(),
            persona: c.persona.clone(),
            status: SessionStatus::AwaitingStances,
            participants: Vec::new(),
            opinions: Vec::new(),
            positioning: None,
            agent: None,
            phase: update_phase(0, c.config.phase.boundary()),
            transcript: Transcript::new(),
            estimates: Vec::new(),
            human_turns: 0,
            pending_shift: None,
            last_trigger: None,
            evaluations_for_trigger: 0,
            last_evaluation: None,
            last_seq: 1,
        })
    }

    pub fn participant(&self, player: &PlayerId) -> Option<&Participant> {
        self.participants.iter().find(|p| &p.player_id == player)
    }

    pub fn opinion(&self, player: &PlayerId) -> Option<&OpinionState> {
        self.opinions.iter().find(|o| &o.player_id == player)
    }

    pub fn estimate(&self, player: &PlayerId) -> Option<&PlayerStrengthEstimate> {
        self.estimates.iter().find(|e| &e.player_id == player)
    }

    pub fn memory(&self) -> &[MemoryEntry] {
        self.agent.as_ref().map(|a| a.memory.as_slice()).unwrap_or_default()
    }

    fn agent_mut(&mut self) -> Result<&mut AgentState, String> {
        self.agent.as_mut().ok_or_else(|| "agent not positioned yet".to_string())
    }

    fn require(&self, status: SessionStatus) -> Result<(), String> {
        if self.status != status {
            return Err(format!("requires status {status:?}, session is {:?}", self.status));
        }
        Ok(())
    }

    /// Folds one event into the state, rejecting anything that breaks the
    /// session's invariants. Live commands and replay share this path.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), String> {
        if event.seq != self.last_seq + 1 {
            return Err(format!("expected seq {}, found {}", self.last_seq + 1, event.seq));
        }
        match &event.body {
            EventBody::SessionCreated(_) => return Err("duplicate SessionCreated".into()),
            EventBody::PlayerJoined(e) => {
                self.require(SessionStatus::AwaitingStances)?;
                if self.participants.len() >= 2 {
                    return Err("session already has two players".into());
                }
                if self.participant(&e.player_id).is_some() {
                    return Err(format!("player {} already joined", e.player_id));
                }
                self.participants.push(Participant {
                    player_id: e.player_id.clone(),
                    token_sha256: e.token_sha256.clone(),
                });
            }
            EventBody::StanceSubmitted(e) => {
                self.require(SessionStatus::AwaitingStances)?;
                let player = &e.opinion.player_id;
                if self.participant(player).is_none() {
                    return Err(format!("unknown player {player}"));
                }
                if self.opinion(player).is_some() {
                    return Err(format!("player {player} already submitted a stance"));
                }
                self.opinions.push(e.opinion.clone());
            }
            EventBody::AgentPositioned(e) => {
                self.require(SessionStatus::AwaitingStances)?;
                let [p1, p2] = self.opinions.as_slice() else {
                    return Err("agent positioned before both stances".into());
                };
                let expected = assign_agent_position(p1, p2, e.tie_break_seed).map_err(|e| e.to_string())?;
                if expected != e.positioning {
                    return Err("positioning does not follow from the intake answers".into());
                }
                if e.agent.opinion_strength != initial_opinion_strength(p1, p2) || e.agent.position != expected.stance {
                    return Err("initial agent state does not follow from the intake answers".into());
                }
                self.estimates = self
                    .opinions
                    .iter()
                    .map(|o| PlayerStrengthEstimate::new(o.player_id.clone(), f64::from(o.confidence.get())))
                    .collect();
                self.positioning = Some(e.positioning.clone());
                self.agent = Some(e.agent.clone());
                self.status = SessionStatus::Active;
            }
            EventBody::UtterancePosted(e) => {
                self.require(SessionStatus::Active)?;
                let Speaker::Player(player) = &e.utterance.speaker else {
                    return Err("UtterancePosted must come from a player".into());
                };
                if e.estimate.player_id != *player {
                    return Err("estimate belongs to another player".into());
                }
                if e.human_turn != self.human_turns {
                    return Err(format!("expected human turn {}, found {}", self.human_turns, e.human_turn));
                }
                let slot = self
                    .estimates
                    .iter_mut()
                    .find(|est| est.player_id == *player)
                    .ok_or_else(|| format!("unknown player {player}"))?;
                *slot = e.estimate.clone();
                self.transcript
                    .restore(e.utterance.clone())
                    .map_err(|seq| format!("utterance seq {seq} out of order"))?;
                let agent = self.agent_mut()?;
                agent
                    .store_memory(&e.utterance, e.salience, Some(e.summary.clone()))
                    .map_err(|e| e.to_string())?;
                self.human_turns += 1;
                self.last_trigger = Some(e.utterance.seq);
                self.evaluations_for_trigger = 0;
            }
            EventBody::PhaseChanged(e) => {
                self.require(SessionStatus::Active)?;
                if e.from != self.phase || e.to <= e.from {
                    return Err(format!("illegal phase change {:?} -> {:?} from {:?}", e.from, e.to, self.phase));
                }
                self.phase = e.to;
            }
            EventBody::OpinionAdjusted(e) => {
                self.require(SessionStatus::Active)?;
                let a = &e.adjustment;
                let agent = self.agent_mut()?;
                if agent.opinion_strength != a.old_strength {
                    return Err(format!("adjustment from {} but strength is {}", a.old_strength, agent.opinion_strength));
                }
                if !(1.0..=5.0).contains(&a.new_strength) || a.new_strength > a.old_strength {
                    return Err(format!("illegal strength change {} -> {}", a.old_strength, a.new_strength));
                }
                agent.opinion_strength = a.new_strength;
                self.pending_shift = self.pending_shift.max(Some(OpinionShift::Adjusted));
            }
            EventBody::Concession(_) => {
                self.require(SessionStatus::Active)?;
                let agent = self.agent_mut()?;
                if agent.conceded {
                    return Err("agent already conceded".into());
                }
                agent.conceded = true;
                self.pending_shift = Some(OpinionShift::Conceded);
            }
            EventBody::ThoughtsEvaluated(e) => {
                self.require(SessionStatus::Active)?;
                if self.last_trigger != Some(e.trigger_seq) {
                    return Err(format!("evaluation for stale trigger {}", e.trigger_seq));
                }
                if e.attempt != self.evaluations_for_trigger {
                    return Err(format!("expected attempt {}, found {}", self.evaluations_for_trigger, e.attempt));
                }
                if let Selection::Speak(id) = e.selection {
                    if !e.candidates.iter().any(|c| c.thought.id == id) {
                        return Err(format!("selected thought {id} is not a candidate"));
                    }
                }
                self.evaluations_for_trigger += 1;
                self.last_evaluation = Some(LastEvaluation {
                    trigger_seq: e.trigger_seq,
                    attempt: e.attempt,
                    selection: e.selection,
                });
            }
            EventBody::AgentSpoke(e) => {
                self.require(SessionStatus::Active)?;
                let selected = self.last_evaluation.as_ref().is_some_and(|l| {
                    l.trigger_seq == e.trigger_seq && l.attempt == e.attempt && l.selection == Selection::Speak(e.thought_id)
                });
                if !selected {
                    return Err(format!("AgentSpoke for {} without a matching selection", e.thought_id));
                }
                if e.utterance.speaker != Speaker::Agent {
                    return Err("AgentSpoke must carry an agent utterance".into());
                }
                self.transcript
                    .restore(e.utterance.clone())
                    .map_err(|seq| format!("utterance seq {seq} out of order"))?;
                self.pending_shift = None;
                self.last_evaluation = None;
            }
            EventBody::SessionClosed(_) => {
                if self.status == SessionStatus::Closed {
                    return Err("session already closed".into());
                }
                self.status = SessionStatus::Closed;
            }
        }
        self.last_seq = event.seq;
        Ok(())
    }
}
