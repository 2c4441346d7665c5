//! Engine configuration: a TOML file with every key optional, plus
//! environment overrides of the form `PEER_<SECTION>__<KEY>` (nested keys
//! joined by `__`, e.g. `PEER_EVALUATOR__WEIGHTS__RELEVANCE=0.5`).

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::PersuasionConfig;
use crate::articulator::ArticulationPolicy;
use crate::evaluator::{EvaluatorConfig, Weights};
use crate::thought::ThoughtBudget;

pub const ENV_PREFIX: &str = "PEER_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("environment override {var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub max_turns: u32,
    /// First human turn (0-based) that counts as late; defaults to half of `max_turns`.
    pub boundary: Option<u32>,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { max_turns: 20, boundary: None }
    }
}

impl PhaseConfig {
    pub fn boundary(&self) -> u32 {
        self.boundary.unwrap_or(self.max_turns / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpreterConfig {
    pub strength_step: f64,
    pub window: usize,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        Self { strength_step: 0.25, window: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub persuasion_sensitivity: f64,
    pub concession_threshold: f64,
    pub memory_k: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        let p = PersuasionConfig::default();
        Self {
            persuasion_sensitivity: p.sensitivity,
            concession_threshold: p.concession_threshold,
            memory_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_general: usize,
    pub n_strategic: usize,
    /// Re-run the pipeline after this many seconds of silence. Off when absent.
    pub heartbeat_secs: Option<u64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let b = ThoughtBudget::default();
        Self { n_general: b.general, n_strategic: b.strategic, heartbeat_secs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub collapsed_strength_floor: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { collapsed_strength_floor: EvaluatorConfig::default().collapsed_strength_floor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorSection {
    pub weights: Weights,
    pub gate: GateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArticulatorConfig {
    pub threshold: f64,
    pub p_general: f64,
}

impl Default for ArticulatorConfig {
    fn default() -> Self {
        let p = ArticulationPolicy::default();
        Self { threshold: p.threshold, p_general: p.p_general }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub timeout_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { timeout_ms: 15_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub phase: PhaseConfig,
    pub interpreter: InterpreterConfig,
    pub agent: AgentConfig,
    pub generator: GeneratorConfig,
    pub evaluator: EvaluatorSection,
    pub articulator: ArticulatorConfig,
    pub provider: ProviderConfig,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Applies `PEER_*` overrides from the process environment.
    pub fn with_env_overrides(self) -> Result<Self, ConfigError> {
        self.with_overrides(std::env::vars())
    }

    pub fn with_overrides(self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut tree = toml::Value::try_from(&self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (var, raw) in vars {
            let Some(rest) = var.strip_prefix(ENV_PREFIX) else { continue };
            let path: Vec<String> = rest.split("__").map(str::to_ascii_lowercase).collect();
            let env_err = |message: String| ConfigError::Env { var: var.clone(), message };
            let slot = path
                .iter()
                .try_fold(&mut tree, |node, key| node.get_mut(key.as_str()))
                .ok_or_else(|| env_err("unknown or unset key".into()))?;
            *slot = match slot {
                toml::Value::Integer(_) => toml::Value::Integer(raw.parse().map_err(|e| env_err(format!("{e}")))?),
                toml::Value::Float(_) => toml::Value::Float(raw.parse().map_err(|e| env_err(format!("{e}")))?),
                toml::Value::Boolean(_) => toml::Value::Boolean(raw.parse().map_err(|e| env_err(format!("{e}")))?),
                toml::Value::String(_) => toml::Value::String(raw.clone()),
                _ => return Err(env_err("not a scalar key".into())),
            };
        }
        let config: Self = tree.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.evaluator.weights.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.policy(0).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.generator.n_general + self.generator.n_strategic == 0 {
            return invalid("generator must request at least one thought".into());
        }
        if self.interpreter.window == 0 {
            return invalid("interpreter.window must be at least 1".into());
        }
        if self.agent.memory_k == 0 {
            return invalid("agent.memory_k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.agent.concession_threshold) {
            return invalid(format!("agent.concession_threshold {} outside [0,1]", self.agent.concession_threshold));
        }
        if self.agent.persuasion_sensitivity < 0.0 || self.interpreter.strength_step < 0.0 {
            return invalid("step sizes must be non-negative".into());
        }
        if self.provider.timeout_ms == 0 {
            return invalid("provider.timeout_ms must be positive".into());
        }
        Ok(())
    }

    pub fn policy(&self, rng_seed: u64) -> ArticulationPolicy {
        ArticulationPolicy {
            threshold: self.articulator.threshold,
            p_general: self.articulator.p_general,
            rng_seed,
        }
    }

    pub fn persuasion(&self) -> PersuasionConfig {
        PersuasionConfig {
            sensitivity: self.agent.persuasion_sensitivity,
            concession_threshold: self.agent.concession_threshold,
        }
    }

    pub fn evaluator(&self) -> EvaluatorConfig {
        EvaluatorConfig {
            weights: self.evaluator.weights,
            collapsed_strength_floor: self.evaluator.gate.collapsed_strength_floor,
        }
    }

    pub fn budget(&self) -> ThoughtBudget {
        ThoughtBudget { general: self.generator.n_general, strategic: self.generator.n_strategic }
    }

    pub fn provider_timeout(&self) -> Duration {
        Duration::from_millis(self.provider.timeout_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_keys_parse() {
        let c = EngineConfig::from_toml(
            r#"
            [evaluator.weights]
            relevance = 0.5
            information_gap = 0.25
            expected_impact = 0.25
            [evaluator.gate]
            collapsed_strength_floor = 2.0
            [articulator]
            threshold = 4.0
            p_general = 0.3
            "#,
        )
        .unwrap();
        assert_eq!(c.evaluator.weights.relevance, 0.5);
        assert_eq!(c.evaluator.gate.collapsed_strength_floor, 2.0);
        assert_eq!((c.articulator.threshold, c.articulator.p_general), (4.0, 0.3));
        assert_eq!(c.phase.boundary(), 10);
    }

    #[test]
    fn defaults_are_valid() {
        let c = EngineConfig::default();
        c.validate().unwrap();
        assert_eq!(c, EngineConfig::from_toml("").unwrap());
        assert_eq!(c.budget(), ThoughtBudget { general: 3, strategic: 3 });
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(EngineConfig::from_toml("[articulator]\nthreshold = 6.0").is_err());
        assert!(EngineConfig::from_toml("[evaluator.weights]\nrelevance = 0.9").is_err());
        assert!(EngineConfig::from_toml("[articulator]\nbogus = 1").is_err());
    }

    #[test]
    fn env_overrides() {
        let vars = [
            ("PEER_ARTICULATOR__P_GENERAL".to_string(), "0.25".to_string()),
            ("PEER_PHASE__MAX_TURNS".to_string(), "8".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let c = EngineConfig::default().with_overrides(vars).unwrap();
        assert_eq!(c.articulator.p_general, 0.25);
        assert_eq!(c.phase.boundary(), 4);

        let bad = [("PEER_ARTICULATOR__NOPE".to_string(), "1".to_string())];
        assert!(matches!(EngineConfig::default().with_overrides(bad), Err(ConfigError::Env { .. })));
        let bad = [("PEER_ARTICULATOR__THRESHOLD".to_string(), "high".to_string())];
        assert!(EngineConfig::default().with_overrides(bad).is_err());
    }
}
