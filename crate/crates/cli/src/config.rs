//! Versioned experiment configuration.
//!
//! A config file is TOML with a top-level `schema` integer and one table per
//! subcommand. Every table must carry its seeds explicitly.
//!
//! ```toml
//! schema = 1
//!
//! [run]
//! horizon = 40
//! seeds = [1, 2, 3]
//! strategies = [{ kind = "top_k", k = 1 }, { kind = "top_k", k = 3 }]
//!
//! [run.env]
//! kind = "turn_game"
//! config = "turn_game.toml"   # optional, relative to this file
//! params = { speculator = { accuracy = [0.5] } }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specact::analytics::{Grid, SimSemantics};
use specact::envs::{from_toml, make_env, AnyEnv, ConfigError, EnvKind};
use specact::lossy::{TuneConfig, TuneMode};
use specact::{ClockMode, Strategy};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    /// Output directory; overridden by `SPECACT_OUT_DIR` and `--out`.
    pub output: Option<PathBuf>,
    pub run: Option<RunConfig>,
    pub theory: Option<TheoryConfig>,
    pub tune: Option<TuneSection>,
    pub sweep: Option<SweepConfig>,
}

/// Which environment to build, from an optional file plus inline overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub config: Option<PathBuf>,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    #[serde(default = "virtual_clock")]
    pub clock: ClockMode,
}

/// Like `run`, crossed with a list of speculator accuracy tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub env: EnvSpec,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    /// Each entry replaces `speculator.accuracy` of the environment.
    pub accuracy: Vec<Vec<f64>>,
    #[serde(default = "virtual_clock")]
    pub clock: ClockMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub grid: Grid,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "all_semantics")]
    pub semantics: Vec<SimSemantics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    pub seeds: Vec<u64>,
    #[serde(default = "all_modes")]
    pub modes: Vec<TuneMode>,
    #[serde(default)]
    pub params: TuneConfig,
    /// Starting setting for speculator_only, if it should differ from `params.start_x`.
    pub speculator_only_start: Option<f64>,
}

fn virtual_clock() -> ClockMode {
    ClockMode::Virtual
}

fn all_semantics() -> Vec<SimSemantics> {
    SimSemantics::ALL.to_vec()
}

fn all_modes() -> Vec<TuneMode> {
    TuneMode::ALL.to_vec()
}

/// Parse TOML text into a raw table, mapping syntax errors to the config root.
pub fn parse_toml(text: &str) -> Result<toml::Value, ConfigError> {
    toml::from_str::<toml::Table>(text)
        .map(toml::Value::Table)
        .map_err(|e| ConfigError::invalid("", e.message().to_owned()))
}

/// Deserialize and validate a config document. `base` resolves relative
/// paths; when `None`, file references are not checked.
pub fn parse_config_value(value: toml::Value, base: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    match value.get("schema") {
        None => return Err(ConfigError::invalid("schema", "missing schema version")),
        Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
        Some(v) => {
            return Err(ConfigError::invalid("schema", format!("unsupported version {v}; expected {SCHEMA_VERSION}")))
        }
    }
    let cfg: ExperimentConfig = from_toml(value, "")?;
    cfg.validate(base)?;
    Ok(cfg)
}

pub fn parse_config(text: &str, base: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    parse_config_value(parse_toml(text)?, base)
}

fn check_seeds(seeds: &[u64], path: &str) -> Result<(), ConfigError> {
    if seeds.is_empty() {
        return Err(ConfigError::invalid(path, "at least one seed is required"));
    }
    Ok(())
}

fn check_runs(
    section: &str,
    env: &EnvSpec,
    horizon: usize,
    seeds: &[u64],
    strategies: &[Strategy],
    base: Option<&Path>,
) -> Result<(), ConfigError> {
    if horizon == 0 {
        return Err(ConfigError::invalid(format!("{section}.horizon"), "must be at least 1"));
    }
    check_seeds(seeds, &format!("{section}.seeds"))?;
    if strategies.is_empty() {
        return Err(ConfigError::invalid(format!("{section}.strategies"), "at least one strategy is required"));
    }
    if let (Some(rel), Some(base)) = (&env.config, base) {
        let path = base.join(rel);
        if !path.is_file() {
            return Err(ConfigError::invalid(
                format!("{section}.env.config"),
                format!("no such file: {}", path.display()),
            ));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self, base: Option<&Path>) -> Result<(), ConfigError> {
        if let Some(r) = &self.run {
            check_runs("run", &r.env, r.horizon, &r.seeds, &r.strategies, base)?;
        }
        if let Some(s) = &self.sweep {
            check_runs("sweep", &s.env, s.horizon, &s.seeds, &s.strategies, base)?;
            if s.accuracy.is_empty() {
                return Err(ConfigError::invalid("sweep.accuracy", "at least one accuracy table is required"));
            }
        }
        if let Some(t) = &self.theory {
            if t.grid.is_empty() {
                return Err(ConfigError::invalid("theory.grid", "every axis needs at least one value"));
            }
            t.grid.points().map_err(|e| ConfigError::invalid("theory.grid", e.to_string()))?;
            if t.trials == 0 {
                return Err(ConfigError::invalid("theory.trials", "must be positive"));
            }
            if t.semantics.is_empty() {
                return Err(ConfigError::invalid("theory.semantics", "at least one semantics is required"));
            }
        }
        if let Some(t) = &self.tune {
            check_seeds(&t.seeds, "tune.seeds")?;
            t.params.validate().map_err(|e| ConfigError::invalid(format!("tune.params.{}", e.path), e.message))?;
            if let Some(x) = t.speculator_only_start {
                if !(x.is_finite() && x > 0.0) {
                    return Err(ConfigError::invalid("tune.speculator_only_start", "must be finite and positive"));
                }
            }
        }
        Ok(())
    }
}

/// Recursively overlay `top` onto `base`; tables merge, everything else replaces.
pub fn merge_tables(base: &mut toml::Table, top: &toml::Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge_tables(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl EnvSpec {
    /// The effective environment table: file contents overlaid with `params`
    /// and then with `extra`.
    pub fn table(&self, base: &Path, extra: Option<&toml::Table>) -> Result<toml::Table, ConfigError> {
        let mut table = match &self.config {
            Some(rel) => {
                let path = base.join(rel);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError::invalid("env.config", format!("{}: {e}", path.display())))?;
                match parse_toml(&text)? {
                    toml::Value::Table(t) => t,
                    _ => unreachable!("documents parse to tables"),
                }
            }
            None => toml::Table::new(),
        };
        merge_tables(&mut table, &self.params);
        if let Some(extra) = extra {
            merge_tables(&mut table, extra);
        }
        Ok(table)
    }

    pub fn build(&self, base: &Path, extra: Option<&toml::Table>, seed: u64) -> Result<AnyEnv, ConfigError> {
        let table = self.table(base, extra)?;
        make_env(self.kind, &toml::Value::Table(table), seed)
            .map_err(|e| ConfigError::invalid(format!("env.{}", e.path).trim_end_matches('.').to_owned(), e.message))
    }
}

/// Overlay that sets `speculator.accuracy`.
pub fn accuracy_overlay(accuracy: &[f64]) -> toml::Table {
    let mut spec = toml::Table::new();
    spec.insert("accuracy".into(), toml::Value::Array(accuracy.iter().map(|&a| toml::Value::Float(a)).collect()));
    let mut top = toml::Table::new();
    top.insert("speculator".into(), toml::Value::Table(spec));
    top
}
