//! Interpretable discussion state: tagged transcript, phase, and running
//! estimates of how firmly each player holds their stance.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::domain::PlayerId;
use crate::provider::{CallOptions, Provider, ProviderExt};
use crate::thought::TalkMoveTag;

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("utterance text is empty")]
    EmptyText,
    #[error("estimate belongs to {expected} but utterance is from {actual}")]
    SpeakerMismatch { expected: PlayerId, actual: String },
    #[error("assertiveness {0} outside [0,1]")]
    InvalidAssertiveness(f64),
}

/// The ten basic human values used to tag value-laden content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchwartzValue {
    SelfDirection,
    Stimulation,
    Hedonism,
    Achievement,
    Power,
    Security,
    Conformity,
    Tradition,
    Benevolence,
    Universalism,
}

impl SchwartzValue {
    pub const ALL: [SchwartzValue; 10] = [
        SchwartzValue::SelfDirection,
        SchwartzValue::Stimulation,
        SchwartzValue::Hedonism,
        SchwartzValue::Achievement,
        SchwartzValue::Power,
        SchwartzValue::Security,
        SchwartzValue::Conformity,
        SchwartzValue::Tradition,
        SchwartzValue::Benevolence,
        SchwartzValue::Universalism,
    ];

    /// Lowercase noun phrase for use inside rendered sentences.
    pub fn label(self) -> &'static str {
        match self {
            SchwartzValue::SelfDirection => "freedom of choice",
            SchwartzValue::Stimulation => "novelty",
            SchwartzValue::Hedonism => "comfort",
            SchwartzValue::Achievement => "progress",
            SchwartzValue::Power => "control",
            SchwartzValue::Security => "safety",
            SchwartzValue::Conformity => "the rules",
            SchwartzValue::Tradition => "tradition",
            SchwartzValue::Benevolence => "caring for others",
            SchwartzValue::Universalism => "fairness for everyone",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Player(PlayerId),
    Agent,
}

impl Speaker {
    pub fn player(&self) -> Option<&PlayerId> {
        match self {
            Speaker::Player(id) => Some(id),
            Speaker::Agent => None,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::Player(id) => write!(f, "{id}"),
            Speaker::Agent => f.write_str("agent"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub seq: u64,
    pub speaker: Speaker,
    pub text: String,
    pub value_tags: BTreeSet<SchwartzValue>,
    pub talk_moves: BTreeSet<TalkMoveTag>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueClassification {
    pub value_tags: BTreeSet<SchwartzValue>,
    pub talk_moves: BTreeSet<TalkMoveTag>,
}

/// Asks the provider for value and talk-move tags. A failing classifier
/// yields empty tags; ingestion never stalls on it.
pub fn classify_utterance(text: &str, provider: &dyn Provider, opts: &CallOptions) -> ValueClassification {
    match provider.classify_values(text, opts) {
        Ok(c) => c,
        Err(err) => {
            warn!(trace_id = %opts.trace_id, %err, "value classification failed, continuing untagged");
            ValueClassification::default()
        }
    }
}

/// Ordered utterances with dense sequence numbers starting at 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    utterances: Vec<Utterance>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_seq(&self) -> u64 {
        self.utterances.len() as u64 + 1
    }

    pub fn push(
        &mut self,
        speaker: Speaker,
        text: &str,
        classification: ValueClassification,
    ) -> Result<Utterance, ContextError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ContextError::EmptyText);
        }
        let utterance = Utterance {
            seq: self.next_seq(),
            speaker,
            text: text.to_string(),
            value_tags: classification.value_tags,
            talk_moves: classification.talk_moves,
        };
        self.utterances.push(utterance.clone());
        Ok(utterance)
    }

    /// Validates, classifies and appends a raw utterance.
    pub fn ingest(
        &mut self,
        speaker: Speaker,
        text: &str,
        provider: &dyn Provider,
        opts: &CallOptions,
    ) -> Result<Utterance, ContextError> {
        if text.trim().is_empty() {
            return Err(ContextError::EmptyText);
        }
        let classification = classify_utterance(text, provider, opts);
        self.push(speaker, text, classification)
    }

    /// Appends an utterance recorded elsewhere (replay). Its seq must be the next one.
    pub fn restore(&mut self, utterance: Utterance) -> Result<(), u64> {
        if utterance.seq != self.next_seq() {
            return Err(utterance.seq);
        }
        self.utterances.push(utterance);
        Ok(())
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn last(&self) -> Option<&Utterance> {
        self.utterances.last()
    }

    pub fn get(&self, seq: u64) -> Option<&Utterance> {
        seq.checked_sub(1).and_then(|i| self.utterances.get(i as usize))
    }

    /// The last `size` utterances, oldest first.
    pub fn window(&self, size: usize) -> Vec<Utterance> {
        let start = self.utterances.len().saturating_sub(size);
        self.utterances[start..].to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Early,
    Late,
}

/// Phase of the human turn with 0-based index `turn_index`. The boundary
/// turn itself is already `Late`.
pub fn update_phase(turn_index: u32, boundary: u32) -> Phase {
    if turn_index < boundary {
        Phase::Early
    } else {
        Phase::Late
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerStrengthEstimate {
    pub player_id: PlayerId,
    pub estimate: f64,
    pub last_updated_seq: u64,
}

impl PlayerStrengthEstimate {
    pub fn new(player_id: PlayerId, estimate: f64) -> Self {
        Self {
            player_id,
            estimate: estimate.clamp(1.0, 5.0),
            last_updated_seq: 0,
        }
    }
}

pub const DEFAULT_STRENGTH_STEP: f64 = 0.25;

/// Nudges a player's estimate up for assertive speech and down for hedging:
/// `clamp(estimate + step * (2 * assertiveness - 1), 1, 5)`.
pub fn update_player_strength(
    estimate: &PlayerStrengthEstimate,
    utterance: &Utterance,
    assertiveness: f64,
    step: f64,
) -> Result<PlayerStrengthEstimate, ContextError> {
    if utterance.speaker.player() != Some(&estimate.player_id) {
        return Err(ContextError::SpeakerMismatch {
            expected: estimate.player_id.clone(),
            actual: utterance.speaker.to_string(),
        });
    }
    if !(0.0..=1.0).contains(&assertiveness) {
        return Err(ContextError::InvalidAssertiveness(assertiveness));
    }
    Ok(PlayerStrengthEstimate {
        player_id: estimate.player_id.clone(),
        estimate: (estimate.estimate + step * (2.0 * assertiveness - 1.0)).clamp(1.0, 5.0),
        last_updated_seq: utterance.seq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{FaultInjectingProvider, MockProvider};
    use proptest::prelude::*;

    fn utt(seq: u64, player: &str) -> Utterance {
        Utterance {
            seq,
            speaker: Speaker::Player(PlayerId::new(player)),
            text: "x".into(),
            value_tags: BTreeSet::new(),
            talk_moves: BTreeSet::new(),
        }
    }

    fn est(v: f64) -> PlayerStrengthEstimate {
        PlayerStrengthEstimate::new(PlayerId::new("p1"), v)
    }

    #[test]
    fn phase_boundary_is_late() {
        assert_eq!(update_phase(3, 10), Phase::Early);
        assert_eq!(update_phase(10, 10), Phase::Late);
        assert_eq!(update_phase(17, 10), Phase::Late);
        assert_eq!(update_phase(0, 0), Phase::Late);
    }

    #[test]
    fn strength_update_examples() {
        let u = utt(4, "p1");
        assert_eq!(update_player_strength(&est(3.0), &u, 0.5, 0.25).unwrap().estimate, 3.0);
        assert_eq!(update_player_strength(&est(3.0), &u, 1.0, 0.25).unwrap().estimate, 3.25);
        assert_eq!(update_player_strength(&est(1.1), &u, 0.0, 0.25).unwrap().estimate, 1.0);
        assert_eq!(update_player_strength(&est(3.0), &u, 1.0, 0.25).unwrap().last_updated_seq, 4);
    }

    #[test]
    fn strength_update_rejects_other_speaker() {
        let err = update_player_strength(&est(3.0), &utt(1, "p2"), 0.5, 0.25).unwrap_err();
        assert!(matches!(err, ContextError::SpeakerMismatch { .. }));
    }

    #[test]
    fn ingest_tags_and_sequences() {
        let provider = MockProvider::builtin();
        let opts = CallOptions::for_tests();
        let mut t = Transcript::new();
        let p1 = Speaker::Player(PlayerId::new("p1"));
        let u = t.ingest(p1.clone(), "We must protect national security at all costs", &provider, &opts).unwrap();
        assert_eq!(u.seq, 1);
        assert!(u.value_tags.contains(&SchwartzValue::Security));
        assert_eq!(t.ingest(p1.clone(), "", &provider, &opts), Err(ContextError::EmptyText));
        assert_eq!(t.ingest(p1, "   \n", &provider, &opts), Err(ContextError::EmptyText));
        let u = t.ingest(Speaker::Agent, "why though", &provider, &opts).unwrap();
        assert_eq!(u.seq, 2);
    }

    #[test]
    fn failing_classifier_still_appends() {
        let provider = FaultInjectingProvider::always_failing();
        let opts = CallOptions::for_tests();
        let mut t = Transcript::new();
        for i in 0..5 {
            let u = t
                .ingest(Speaker::Player(PlayerId::new("p1")), "we must keep people safe", &provider, &opts)
                .unwrap();
            assert_eq!(u.seq, i + 1);
            assert!(u.value_tags.is_empty());
        }
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn window_keeps_latest_in_order() {
        let mut t = Transcript::new();
        for _ in 0..10 {
            t.push(Speaker::Agent, "hi", ValueClassification::default()).unwrap();
        }
        let w = t.window(8);
        assert_eq!(w.iter().map(|u| u.seq).collect::<Vec<_>>(), (3..=10).collect::<Vec<_>>());
        assert_eq!(t.window(50).len(), 10);
    }

    proptest! {
        #[test]
        fn estimates_stay_bounded(start in 1.0f64..=5.0, stream in prop::collection::vec(0.0f64..=1.0, 0..200)) {
            let mut e = est(start);
            for (i, a) in stream.into_iter().enumerate() {
                e = update_player_strength(&e, &utt(i as u64 + 1, "p1"), a, DEFAULT_STRENGTH_STEP).unwrap();
                prop_assert!((1.0..=5.0).contains(&e.estimate));
            }
        }

        #[test]
        fn phase_sequence_is_monotone(boundary in 0u32..40, turns in 1u32..80) {
            let phases: Vec<Phase> = (0..turns).map(|t| update_phase(t, boundary)).collect();
            prop_assert!(phases.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
