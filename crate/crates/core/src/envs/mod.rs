//! Desk-scale environments with scripted actors and tunable speculators.
//!
//! - [`TurnGame`]: two players alternate moves from a fixed script.
//! - [`ChainLookup`]: multi-hop question answering over a synthetic
//!   knowledge base with `search`, `lookup` and `finish` tools.
//! - [`ToolDialogue`]: a customer-service dialogue where user turns trigger
//!   read and write tools against a mock database.
//!
//! Speculator accuracy comes from an accuracy-by-rank table, not a model.

mod chain_lookup;
mod scripted;
mod tool_dialogue;
mod turn_game;

use rand::RngCore;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ExecError;
use crate::executor::{run, ClockMode, RunResult};
use crate::seed::SeedPath;
use crate::strategies::Strategy;

pub use chain_lookup::{ChainLookup, ChainLookupConfig, ChainState};
pub use scripted::{ResponseModel, ScriptedSpeculator, SpeculatorConfig};
pub use tool_dialogue::{CountModelKind, DialogueState, Intent, ToolDialogue, ToolDialogueConfig, TurnSpec};
pub use turn_game::{GameState, TurnGame, TurnGameConfig};

/// Latency distribution of a handler or speculator, in abstract time units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyDist {
    Exponential { rate: f64 },
    Fixed { value: f64 },
}

impl LatencyDist {
    pub fn exponential_mean(mean: f64) -> Self {
        LatencyDist::Exponential { rate: 1.0 / mean }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match *self {
            LatencyDist::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
            LatencyDist::Fixed { value } => value,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            LatencyDist::Exponential { rate } => 1.0 / rate,
            LatencyDist::Fixed { value } => value,
        }
    }

    pub(crate) fn validate(&self, path: &str) -> Result<(), ConfigError> {
        let ok = match *self {
            LatencyDist::Exponential { rate } => rate.is_finite() && rate > 0.0,
            LatencyDist::Fixed { value } => value.is_finite() && value >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ConfigError::invalid(path, "latency parameters must be finite and positive"))
        }
    }
}

/// Configuration error carrying the dotted path of the offending field.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

/// Deserialize `T` from a TOML value, reporting the field path on failure.
pub fn from_toml<T: serde::de::DeserializeOwned>(value: toml::Value, root: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (root.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => root.to_owned(),
            (false, p) => format!("{root}.{p}"),
        };
        ConfigError::invalid(path, e.into_inner().to_string())
    })
}

/// Short hex digest of bytes, for state digests.
pub fn digest_bytes(bytes: &[u8]) -> String {
    format!("{:016x}", SeedPath::new(0).bytes(bytes).finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    TurnGame,
    ChainLookup,
    ToolDialogue,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::TurnGame, EnvKind::ChainLookup, EnvKind::ToolDialogue];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::TurnGame => "turn_game",
            EnvKind::ChainLookup => "chain_lookup",
            EnvKind::ToolDialogue => "tool_dialogue",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "turn_game" => Ok(EnvKind::TurnGame),
            "chain_lookup" => Ok(EnvKind::ChainLookup),
            "tool_dialogue" => Ok(EnvKind::ToolDialogue),
            other => Err(ConfigError::invalid("kind", format!("unknown environment `{other}`"))),
        }
    }
}

/// Any of the bundled environments.
pub enum AnyEnv {
    TurnGame(TurnGame),
    ChainLookup(ChainLookup),
    ToolDialogue(ToolDialogue),
}

impl AnyEnv {
    pub fn kind(&self) -> EnvKind {
        match self {
            AnyEnv::TurnGame(_) => EnvKind::TurnGame,
            AnyEnv::ChainLookup(_) => EnvKind::ChainLookup,
            AnyEnv::ToolDialogue(_) => EnvKind::ToolDialogue,
        }
    }

    pub fn run(
        &self,
        strategy: Option<Strategy>,
        horizon: usize,
        seed: u64,
        clock: ClockMode,
    ) -> Result<RunResult, ExecError> {
        match self {
            AnyEnv::TurnGame(e) => run(e, strategy, horizon, seed, clock),
            AnyEnv::ChainLookup(e) => run(e, strategy, horizon, seed, clock),
            AnyEnv::ToolDialogue(e) => run(e, strategy, horizon, seed, clock),
        }
    }
}

/// Build an environment from a TOML config table. Missing fields take their
/// defaults; unknown or invalid fields are rejected with their path.
pub fn make_env(kind: EnvKind, config: &toml::Value, seed: u64) -> Result<AnyEnv, ConfigError> {
    Ok(match kind {
        EnvKind::TurnGame => AnyEnv::TurnGame(TurnGame::new(from_toml(config.clone(), "")?, seed)?),
        EnvKind::ChainLookup => AnyEnv::ChainLookup(ChainLookup::new(from_toml(config.clone(), "")?, seed)?),
        EnvKind::ToolDialogue => AnyEnv::ToolDialogue(ToolDialogue::new(from_toml(config.clone(), "")?, seed)?),
    })
}

/// Parse a TOML document and build the environment it describes.
pub fn make_env_from_str(kind: EnvKind, text: &str, seed: u64) -> Result<AnyEnv, ConfigError> {
    let value: toml::Value = toml::from_str(text).map_err(|e| ConfigError::invalid("", e.message().to_owned()))?;
    make_env(kind, &value, seed)
}

/// Speculator accuracy over the rounds where guesses arrived in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub rounds: usize,
    /// Fraction of rounds whose guess set contained the actual response.
    pub rank_any: f64,
    /// `per_rank[r]`: fraction of rounds where the first match sat at rank `r`.
    pub per_rank: Vec<f64>,
}

pub fn measure_accuracy(result: &RunResult) -> AccuracyReport {
    let rounds: Vec<_> = result.traces.iter().filter(|t| t.guesses_issued > 0).collect();
    let width = rounds.iter().map(|t| t.guesses_issued).max().unwrap_or(0);
    let mut per_rank = vec![0usize; width];
    for t in &rounds {
        if let Some(r) = t.guess_rank {
            per_rank[r] += 1;
        }
    }
    let n = rounds.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    AccuracyReport {
        rounds: n,
        rank_any: frac(per_rank.iter().sum()),
        per_rank: per_rank.into_iter().map(frac).collect(),
    }
}

/// `(T_seq - T_s) / T_seq` for two runs on the same seed and horizon.
pub fn measure_time_saved(spec: &RunResult, seq: &RunResult) -> Result<f64, ExecError> {
    if spec.horizon != seq.horizon || spec.seed != seq.seed {
        return Err(ExecError::InvalidArgument("time saved needs runs with matching seed and horizon".into()));
    }
    if seq.total_time <= 0.0 {
        return Ok(0.0);
    }
    Ok((seq.total_time - spec.total_time) / seq.total_time)
}
