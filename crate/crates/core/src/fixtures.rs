//! Versioned offline fixtures: value lexicon, cue lexicon, persuasion map,
//! thought templates and articulation templates.
//!
//! The bundled copies are compiled in; [`Fixtures::from_dir`] loads a
//! replacement set with the same file names.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::SchwartzValue;
use crate::domain::Stance;
use crate::thought::TalkMoveTag;

pub const LEXICON_JSON: &str = include_str!("../fixtures/lexicon.json");
pub const CUES_JSON: &str = include_str!("../fixtures/cues.json");
pub const PERSUASION_JSON: &str = include_str!("../fixtures/persuasion.json");
pub const TEMPLATES_JSON: &str = include_str!("../fixtures/templates.json");
pub const ARTICULATION_JSON: &str = include_str!("../fixtures/articulation.json");
pub const PERSONA_JSON: &str = include_str!("../fixtures/persona.json");
pub const DILEMMAS_JSONL: &str = include_str!("../fixtures/dilemmas.jsonl");

pub const CLAUSE_OPINION_SHIFT: &str = "ack.opinion_shift";
pub const CLAUSE_CONCESSION: &str = "ack.concession";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {name}: {source}")]
    Parse {
        name: &'static str,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid fixture {name}: {message}")]
    Invalid { name: &'static str, message: String },
}

/// Lowercases, folds curly apostrophes and turns every other non-alphanumeric
/// run into a single space. Padded with spaces so whole-word matches are
/// plain substring checks.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push(' ');
    let mut last_space = true;
    for ch in text.chars().flat_map(char::to_lowercase) {
        let ch = if ch == '\u{2019}' { '\'' } else { ch };
        if ch.is_alphanumeric() || ch == '\'' {
            out.push(ch);
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    if !last_space {
        out.push(' ');
    }
    out
}

fn contains_phrase(normalized: &str, phrase: &str) -> bool {
    let needle = normalize(phrase);
    !needle.trim().is_empty() && normalized.contains(&needle)
}

fn count_phrases<'a>(normalized: &str, phrases: impl IntoIterator<Item = &'a String>) -> usize {
    phrases.into_iter().filter(|p| contains_phrase(normalized, p)).count()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lexicon {
    pub version: String,
    pub values: BTreeMap<String, SchwartzValue>,
}

impl Lexicon {
    pub fn classify(&self, text: &str) -> BTreeSet<SchwartzValue> {
        let norm = normalize(text);
        self.values
            .iter()
            .filter(|(kw, _)| contains_phrase(&norm, kw))
            .map(|(_, v)| *v)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CueLexicon {
    pub version: String,
    pub talk_moves: BTreeMap<String, TalkMoveTag>,
    pub assertive: Vec<String>,
    pub hedging: Vec<String>,
}

impl CueLexicon {
    pub fn talk_moves(&self, text: &str) -> BTreeSet<TalkMoveTag> {
        let norm = normalize(text);
        self.talk_moves
            .iter()
            .filter(|(kw, _)| contains_phrase(&norm, kw))
            .map(|(_, m)| *m)
            .collect()
    }

    /// 0 for pure hedging, 1 for pure assertion, 0.5 when there are no cues.
    pub fn assertiveness(&self, text: &str) -> f64 {
        let norm = normalize(text);
        let assertive = count_phrases(&norm, &self.assertive) as f64;
        let hedging = count_phrases(&norm, &self.hedging) as f64;
        if assertive + hedging == 0.0 {
            0.5
        } else {
            0.5 + 0.5 * (assertive - hedging) / (assertive + hedging)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersuasionMap {
    pub version: String,
    /// Exact (normalized) utterance text to score.
    pub scores: BTreeMap<String, f64>,
    pub cues: BTreeMap<String, f64>,
}

impl PersuasionMap {
    /// Exact fixture entry if there is one, otherwise the capped sum of cue weights.
    pub fn score(&self, text: &str) -> f64 {
        let norm = normalize(text);
        if let Some(score) = self.scores.iter().find(|(k, _)| normalize(k) == norm).map(|(_, v)| *v) {
            return score;
        }
        let total: f64 = self
            .cues
            .iter()
            .filter(|(kw, _)| contains_phrase(&norm, kw))
            .map(|(_, w)| *w)
            .sum();
        total.min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    General,
    Strategic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtTemplate {
    pub template_id: String,
    pub kind: TemplateKind,
    #[serde(rename = "move")]
    pub talk_move: Option<TalkMoveTag>,
    /// Stance the text argues for; `None` means stance-neutral.
    #[serde(default)]
    pub stance: Option<Stance>,
    pub text_pattern: String,
    #[serde(default)]
    pub required_value_tags: Vec<SchwartzValue>,
    #[serde(default)]
    pub raises_value_tags: Vec<SchwartzValue>,
}

impl ThoughtTemplate {
    pub fn uses_value(&self) -> bool {
        self.text_pattern.contains("{value}")
    }

    pub fn uses_player(&self) -> bool {
        self.text_pattern.contains("{player}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: String,
    pub templates: Vec<ThoughtTemplate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArticulationTemplates {
    pub version: String,
    pub general: String,
    pub strategic: String,
    pub clauses: BTreeMap<String, String>,
}

impl ArticulationTemplates {
    pub fn clause(&self, id: &str) -> &str {
        self.clauses.get(id).map(String::as_str).unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct Fixtures {
    pub lexicon: Lexicon,
    pub cues: CueLexicon,
    pub persuasion: PersuasionMap,
    pub templates: TemplateSet,
    pub articulation: ArticulationTemplates,
}

fn parse<T: for<'de> Deserialize<'de>>(name: &'static str, text: &str) -> Result<T, FixtureError> {
    serde_json::from_str(text).map_err(|source| FixtureError::Parse { name, source })
}

impl Fixtures {
    pub fn builtin() -> Self {
        Self::parse_all(LEXICON_JSON, CUES_JSON, PERSUASION_JSON, TEMPLATES_JSON, ARTICULATION_JSON)
            .expect("bundled fixtures are valid")
    }

    pub fn from_dir(dir: &Path) -> Result<Self, FixtureError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| FixtureError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        Self::parse_all(
            &read("lexicon.json")?,
            &read("cues.json")?,
            &read("persuasion.json")?,
            &read("templates.json")?,
            &read("articulation.json")?,
        )
    }

    fn parse_all(
        lexicon: &str,
        cues: &str,
        persuasion: &str,
        templates: &str,
        articulation: &str,
    ) -> Result<Self, FixtureError> {
        let fixtures = Self {
            lexicon: parse("lexicon", lexicon)?,
            cues: parse("cues", cues)?,
            persuasion: parse("persuasion", persuasion)?,
            templates: parse("templates", templates)?,
            articulation: parse("articulation", articulation)?,
        };
        fixtures.validate()?;
        Ok(fixtures)
    }

    fn validate(&self) -> Result<(), FixtureError> {
        let invalid = |name, message: String| Err(FixtureError::Invalid { name, message });
        for (text, score) in self.persuasion.scores.iter().chain(&self.persuasion.cues) {
            if !(0.0..=1.0).contains(score) {
                return invalid("persuasion", format!("score {score} for {text:?} outside [0,1]"));
            }
        }
        let mut ids = HashSet::new();
        for t in &self.templates.templates {
            if !ids.insert(t.template_id.as_str()) {
                return invalid("templates", format!("duplicate id {}", t.template_id));
            }
            if t.text_pattern.trim().is_empty() {
                return invalid("templates", format!("{} has an empty pattern", t.template_id));
            }
            match (t.kind, t.talk_move) {
                (TemplateKind::Strategic, None) => {
                    return invalid("templates", format!("{} is strategic without a move", t.template_id))
                }
                (TemplateKind::General, Some(_)) => {
                    return invalid("templates", format!("{} is general with a move", t.template_id))
                }
                _ => {}
            }
        }
        for id in [CLAUSE_OPINION_SHIFT, CLAUSE_CONCESSION] {
            if self.articulation.clause(id).is_empty() {
                return invalid("articulation", format!("missing clause {id}"));
            }
        }
        Ok(())
    }

    /// Combined version string; part of every mock response's identity.
    pub fn version(&self) -> String {
        format!(
            "{}+{}+{}+{}+{}",
            self.lexicon.version,
            self.cues.version,
            self.persuasion.version,
            self.templates.version,
            self.articulation.version
        )
    }
}
