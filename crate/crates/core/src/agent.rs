//! The peer agent's own state: stance, opinion strength, persona and
//! long-term memory, plus the rule that lets persuasive arguments wear the
//! agent's strength down.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{SchwartzValue, Utterance};
use crate::domain::{initial_opinion_strength, AgentPositioning, OpinionState, Stance};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("persuasion score {0} outside [0,1]")]
    InvalidPersuasion(f64),
    #[error("salience {0} outside [0,1]")]
    InvalidSalience(f64),
    #[error("retrieval size must be at least 1")]
    EmptyRetrieval,
    #[error("persona name is empty")]
    EmptyPersonaName,
    #[error("persona file: {0}")]
    PersonaFile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPersona {
    pub name: String,
    #[serde(default)]
    pub tone: Vec<String>,
    #[serde(default)]
    pub self_description: String,
}

impl AgentPersona {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.name.trim().is_empty() {
            return Err(AgentError::EmptyPersonaName);
        }
        Ok(())
    }

    pub fn default_peer() -> Self {
        serde_json::from_str(crate::fixtures::PERSONA_JSON).expect("bundled persona is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::PersonaFile(e.to_string()))?;
        let persona: Self = serde_json::from_str(&text).map_err(|e| AgentError::PersonaFile(e.to_string()))?;
        persona.validate()?;
        Ok(persona)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    /// Transcript seq of the source utterance.
    pub seq: u64,
    pub summary: String,
    pub salience: f64,
    pub value_tags: BTreeSet<SchwartzValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersuasionConfig {
    /// Strength lost per unit of persuasion.
    pub sensitivity: f64,
    /// Minimum persuasion at the strength floor that makes the agent concede.
    pub concession_threshold: f64,
}

impl Default for PersuasionConfig {
    fn default() -> Self {
        Self {
            sensitivity: 1.0,
            concession_threshold: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionAdjustment {
    pub old_strength: f64,
    pub new_strength: f64,
    pub persuasion_score: f64,
    pub trigger_seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PersuasionEffect {
    pub adjustment: Option<OpinionAdjustment>,
    pub conceded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Stance,
    pub opinion_strength: f64,
    pub persona: AgentPersona,
    pub memory: Vec<MemoryEntry>,
    pub conceded: bool,
}

pub const MIN_STRENGTH: f64 = 1.0;
pub const MAX_STRENGTH: f64 = 5.0;

impl AgentState {
    pub fn init(positioning: &AgentPositioning, p1: &OpinionState, p2: &OpinionState, persona: AgentPersona) -> Self {
        Self {
            position: positioning.stance,
            opinion_strength: initial_opinion_strength(p1, p2),
            persona,
            memory: Vec::new(),
            conceded: false,
        }
    }

    /// Lowers strength by `sensitivity * score`, clamped to [1,5]. The agent
    /// never changes side; a strong argument arriving while it is already at
    /// the floor latches `conceded` instead.
    pub fn apply_persuasion(
        &mut self,
        score: f64,
        trigger_seq: u64,
        config: &PersuasionConfig,
    ) -> Result<PersuasionEffect, AgentError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(AgentError::InvalidPersuasion(score));
        }
        let old = self.opinion_strength;
        let new = (old - config.sensitivity * score).clamp(MIN_STRENGTH, MAX_STRENGTH);
        let mut effect = PersuasionEffect::default();
        if new != old {
            self.opinion_strength = new;
            effect.adjustment = Some(OpinionAdjustment {
                old_strength: old,
                new_strength: new,
                persuasion_score: score,
                trigger_seq,
            });
        }
        if !self.conceded && old <= MIN_STRENGTH && score >= config.concession_threshold {
            self.conceded = true;
            effect.conceded = true;
        }
        Ok(effect)
    }

    /// Remembers an utterance. Storing the same source seq twice is a no-op;
    /// returns whether a new entry was added.
    pub fn store_memory(
        &mut self,
        utterance: &Utterance,
        salience: f64,
        summary: Option<String>,
    ) -> Result<bool, AgentError> {
        if !(0.0..=1.0).contains(&salience) {
            return Err(AgentError::InvalidSalience(salience));
        }
        if self.memory.iter().any(|m| m.seq == utterance.seq) {
            return Ok(false);
        }
        self.memory.push(MemoryEntry {
            seq: utterance.seq,
            summary: summary.unwrap_or_else(|| truncate_summary(&utterance.text, SUMMARY_CHARS)),
            salience,
            value_tags: utterance.value_tags.clone(),
        });
        Ok(true)
    }

    /// Top `k` memories by tag overlap with `query`, then salience, then recency.
    pub fn retrieve_memories(
        &self,
        query: &BTreeSet<SchwartzValue>,
        k: usize,
    ) -> Result<Vec<MemoryEntry>, AgentError> {
        if k == 0 {
            return Err(AgentError::EmptyRetrieval);
        }
        let mut ranked: Vec<(usize, &MemoryEntry)> = self
            .memory
            .iter()
            .map(|m| (m.value_tags.intersection(query).count(), m))
            .collect();
        ranked.sort_by(|(oa, a), (ob, b)| {
            ob.cmp(oa)
                .then_with(|| b.salience.partial_cmp(&a.salience).unwrap_or(Ordering::Equal))
                .then_with(|| b.seq.cmp(&a.seq))
        });
        Ok(ranked.into_iter().take(k).map(|(_, m)| m.clone()).collect())
    }
}

pub const SUMMARY_CHARS: usize = 120;

/// Offline memory summary: the text cut at a word boundary.
pub fn truncate_summary(text: &str, max_chars: usize) -> String {
    let text = text.trim();
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let cut: String = text.chars().take(max_chars).collect();
    let cut = match cut.rfind(char::is_whitespace) {
        Some(idx) if idx > 0 => &cut[..idx],
        _ => cut.as_str(),
    };
    format!("{}...", cut.trim_end())
}

/// Salience of a player utterance for memory: value-laden and persuasive
/// utterances matter more.
pub fn utterance_salience(value_tag_count: usize, persuasion: f64) -> f64 {
    (0.2 * value_tag_count as f64 + 0.5 * persuasion).clamp(0.0, 1.0)
}
