//! Shared domain types and the intake rules: where the agent stands and how
//! strongly it starts out holding that stance.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("confidence must be in 1..=5, got {0}")]
    InvalidConfidence(u8),
    #[error("both opinion states belong to player {0}")]
    SamePlayer(PlayerId),
    #[error("dilemma {0} has an empty prompt")]
    EmptyPrompt(String),
    #[error("duplicate dilemma id {0}")]
    DuplicateDilemma(String),
    #[error("catalog line {line}: {message}")]
    CatalogParse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub String);

impl PlayerId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stance {
    Agree,
    Disagree,
}

impl Stance {
    pub const ALL: [Stance; 2] = [Stance::Agree, Stance::Disagree];

    pub fn opposite(self) -> Self {
        match self {
            Stance::Agree => Stance::Disagree,
            Stance::Disagree => Stance::Agree,
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stance::Agree => f.write_str("Agree"),
            Stance::Disagree => f.write_str("Disagree"),
        }
    }
}

/// Self-rated confidence on the 1-5 intake scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Confidence(u8);

impl Confidence {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn new(value: u8) -> Result<Self, DomainError> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(DomainError::InvalidConfidence(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Confidence> {
        (Self::MIN..=Self::MAX).map(Confidence)
    }
}

impl TryFrom<u8> for Confidence {
    type Error = DomainError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Confidence> for u8 {
    fn from(value: Confidence) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpinionState {
    pub player_id: PlayerId,
    pub stance: Stance,
    pub confidence: Confidence,
}

impl OpinionState {
    pub fn new(player_id: impl Into<String>, stance: Stance, confidence: u8) -> Result<Self, DomainError> {
        Ok(Self {
            player_id: PlayerId::new(player_id),
            stance,
            confidence: Confidence::new(confidence)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PositioningMode {
    /// Both players share a stance; the agent takes the other one.
    Oppose,
    /// Players disagree; the agent sides with the less confident one.
    AmplifyMinority,
    /// Players disagree with equal confidence; a seeded coin picks the side.
    TieBreak,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPositioning {
    pub stance: Stance,
    pub mode: PositioningMode,
    pub aligned_with: Option<PlayerId>,
}

/// Decides the agent's stance from the two intake answers.
///
/// `seed` only matters when the players disagree with equal confidence.
pub fn assign_agent_position(
    p1: &OpinionState,
    p2: &OpinionState,
    seed: u64,
) -> Result<AgentPositioning, DomainError> {
    if p1.player_id == p2.player_id {
        return Err(DomainError::SamePlayer(p1.player_id.clone()));
    }
    if p1.stance == p2.stance {
        return Ok(AgentPositioning {
            stance: p1.stance.opposite(),
            mode: PositioningMode::Oppose,
            aligned_with: None,
        });
    }
    let weaker = match p1.confidence.cmp(&p2.confidence) {
        std::cmp::Ordering::Less => p1,
        std::cmp::Ordering::Greater => p2,
        std::cmp::Ordering::Equal => {
            let stance = if seed::rng(seed).random_bool(0.5) {
                Stance::Agree
            } else {
                Stance::Disagree
            };
            return Ok(AgentPositioning {
                stance,
                mode: PositioningMode::TieBreak,
                aligned_with: None,
            });
        }
    };
    Ok(AgentPositioning {
        stance: weaker.stance,
        mode: PositioningMode::AmplifyMinority,
        aligned_with: Some(weaker.player_id.clone()),
    })
}

/// Mean of the two players' confidences, on the same 1-5 scale.
pub fn initial_opinion_strength(p1: &OpinionState, p2: &OpinionState) -> f64 {
    (f64::from(p1.confidence.get()) + f64::from(p2.confidence.get())) / 2.0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilemmaCard {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub topic_tags: Vec<String>,
}

impl DilemmaCard {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.prompt.trim().is_empty() {
            return Err(DomainError::EmptyPrompt(self.id.clone()));
        }
        Ok(())
    }
}

/// Dilemma cards keyed by id, loaded from JSON lines.
#[derive(Debug, Clone, Default)]
pub struct DilemmaCatalog {
    cards: Vec<DilemmaCard>,
}

impl DilemmaCatalog {
    pub fn new(cards: Vec<DilemmaCard>) -> Result<Self, DomainError> {
        let mut seen = HashSet::new();
        for card in &cards {
            card.validate()?;
            if !seen.insert(card.id.clone()) {
                return Err(DomainError::DuplicateDilemma(card.id.clone()));
            }
        }
        Ok(Self { cards })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DomainError> {
        let mut cards = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let card: DilemmaCard =
                serde_json::from_str(line).map_err(|e| DomainError::CatalogParse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            cards.push(card);
        }
        Self::new(cards)
    }

    pub fn builtin() -> Self {
        Self::from_jsonl(crate::fixtures::DILEMMAS_JSONL).expect("bundled dilemma catalog is valid")
    }

    pub fn get(&self, id: &str) -> Option<&DilemmaCard> {
        self.cards.iter().find(|c| c.id == id)
    }

    pub fn cards(&self) -> &[DilemmaCard] {
        &self.cards
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(id: &str, stance: Stance, c: u8) -> OpinionState {
        OpinionState::new(id, stance, c).unwrap()
    }

    /// Rule table written out independently of `assign_agent_position`.
    fn oracle(s1: Stance, c1: u8, s2: Stance, c2: u8) -> (Stance, PositioningMode, Option<&'static str>) {
        if s1 == s2 {
            let other = if s1 == Stance::Agree { Stance::Disagree } else { Stance::Agree };
            (other, PositioningMode::Oppose, None)
        } else if c1 < c2 {
            (s1, PositioningMode::AmplifyMinority, Some("p1"))
        } else if c2 < c1 {
            (s2, PositioningMode::AmplifyMinority, Some("p2"))
        } else {
            // stance is the coin's; only the mode is fixed
            (s1, PositioningMode::TieBreak, None)
        }
    }

    #[test]
    fn both_agree_is_opposed() {
        let pos = assign_agent_position(&op("p1", Stance::Agree, 4), &op("p2", Stance::Agree, 5), 0).unwrap();
        assert_eq!(pos, AgentPositioning { stance: Stance::Disagree, mode: PositioningMode::Oppose, aligned_with: None });
    }

    #[test]
    fn disagreement_sides_with_weaker_player() {
        let pos = assign_agent_position(&op("p1", Stance::Agree, 5), &op("p2", Stance::Disagree, 2), 0).unwrap();
        assert_eq!(pos.stance, Stance::Disagree);
        assert_eq!(pos.mode, PositioningMode::AmplifyMinority);
        assert_eq!(pos.aligned_with, Some(PlayerId::new("p2")));
    }

    #[test]
    fn both_disagree_at_lowest_confidence() {
        let pos = assign_agent_position(&op("p1", Stance::Disagree, 1), &op("p2", Stance::Disagree, 1), 9).unwrap();
        assert_eq!((pos.stance, pos.mode), (Stance::Agree, PositioningMode::Oppose));
    }

    #[test]
    fn exhaustive_against_rule_table() {
        let seed = 0xdead_beef;
        for s1 in Stance::ALL {
            for s2 in Stance::ALL {
                for c1 in 1..=5 {
                    for c2 in 1..=5 {
                        let a = op("p1", s1, c1);
                        let b = op("p2", s2, c2);
                        let got = assign_agent_position(&a, &b, seed).unwrap();
                        let (stance, mode, aligned) = oracle(s1, c1, s2, c2);
                        assert_eq!(got.mode, mode);
                        assert_eq!(got.aligned_with.as_ref().map(|p| p.as_str()), aligned);
                        if mode != PositioningMode::TieBreak {
                            assert_eq!(got.stance, stance);
                        } else {
                            let again = assign_agent_position(&a, &b, seed).unwrap();
                            assert_eq!(got, again);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn swapping_players_keeps_minority_stance() {
        for c1 in 1..=5u8 {
            for c2 in (1..=5u8).filter(|c2| *c2 != c1) {
                let a = op("p1", Stance::Agree, c1);
                let b = op("p2", Stance::Disagree, c2);
                let fwd = assign_agent_position(&a, &b, 1).unwrap();
                let rev = assign_agent_position(&b, &a, 1).unwrap();
                assert_eq!(fwd, rev);
            }
        }
    }

    #[test]
    fn tie_break_is_fair_over_seeds() {
        let a = op("p1", Stance::Agree, 3);
        let b = op("p2", Stance::Disagree, 3);
        let agrees = (0..10_000u64)
            .filter(|s| assign_agent_position(&a, &b, *s).unwrap().stance == Stance::Agree)
            .count();
        let freq = agrees as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.05, "agree frequency {freq}");
    }

    #[test]
    fn confidence_bounds() {
        assert_eq!(Confidence::new(0), Err(DomainError::InvalidConfidence(0)));
        assert_eq!(Confidence::new(6), Err(DomainError::InvalidConfidence(6)));
        assert!(serde_json::from_str::<Confidence>("7").is_err());
        assert_eq!(serde_json::from_str::<Confidence>("3").unwrap().get(), 3);
    }

    #[test]
    fn same_player_rejected() {
        let a = op("p1", Stance::Agree, 3);
        assert!(matches!(assign_agent_position(&a, &a, 0), Err(DomainError::SamePlayer(_))));
    }

    #[test]
    fn strength_is_the_mean() {
        let s = |c1, c2| initial_opinion_strength(&op("a", Stance::Agree, c1), &op("b", Stance::Agree, c2));
        assert_eq!(s(4, 5), 4.5);
        assert_eq!(s(1, 1), 1.0);
        assert_eq!(s(2, 5), 3.5);
        for c1 in 1..=5 {
            for c2 in 1..=5 {
                assert_eq!(s(c1, c2), s(c2, c1));
                assert!((1.0..=5.0).contains(&s(c1, c2)));
            }
        }
    }

    #[test]
    fn catalog_rejects_bad_cards() {
        let dup = "{\"id\":\"a\",\"prompt\":\"x?\"}\n{\"id\":\"a\",\"prompt\":\"y?\"}\n";
        assert_eq!(DilemmaCatalog::from_jsonl(dup).unwrap_err(), DomainError::DuplicateDilemma("a".into()));
        let empty = "{\"id\":\"a\",\"prompt\":\"  \"}\n";
        assert_eq!(DilemmaCatalog::from_jsonl(empty).unwrap_err(), DomainError::EmptyPrompt("a".into()));
        let broken = "{\"id\":\"a\",\"prompt\":\"ok\"}\nnot json\n";
        assert!(matches!(DilemmaCatalog::from_jsonl(broken), Err(DomainError::CatalogParse { line: 2, .. })));
    }

    #[test]
    fn builtin_catalog_loads() {
        let catalog = DilemmaCatalog::builtin();
        assert!(catalog.get("killer-robots").unwrap().prompt.contains("killer robots"));
    }
}
