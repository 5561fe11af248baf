use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{digest_bytes, ConfigError, LatencyDist, ResponseModel, ScriptedSpeculator, SpeculatorConfig};
use crate::call::{ActionValue, CallSpec};
use crate::env::{Environment, GuessSource, Handler, HandlerRegistry};
use crate::error::HandlerError;
use crate::safety::SafetyClass;
use crate::seed::SeedPath;

const MOVES: [&str; 40] = [
    "e4", "d4", "c4", "Nf3", "Nc3", "e5", "d5", "c5", "Nf6", "Nc6", "g3", "b3", "f4", "Bc4", "Bb5", "Be2", "Bd3",
    "O-O", "h3", "a3", "Qe2", "Re1", "Rd1", "Kh1", "exd5", "cxd4", "Bxf6", "Nxe5", "Qxd8", "g6", "e6", "d6", "c6",
    "b6", "a6", "h6", "Bg7", "Be7", "Bd6", "Qc7",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurnGameConfig {
    /// Moves in play order; generated from the seed when absent.
    pub script: Option<Vec<String>>,
    /// Length of the generated script.
    pub script_len: usize,
    pub white_latency: LatencyDist,
    pub black_latency: LatencyDist,
    pub speculator: SpeculatorConfig,
}

impl Default for TurnGameConfig {
    fn default() -> Self {
        Self {
            script: None,
            script_len: 256,
            white_latency: LatencyDist::Exponential { rate: 1.0 },
            black_latency: LatencyDist::Exponential { rate: 1.0 },
            speculator: SpeculatorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct GameState {
    pub history: Vec<String>,
}

struct Script {
    moves: Vec<String>,
}

impl Script {
    fn ply_of(call: &CallSpec) -> Option<usize> {
        call.params_value().get("ply")?.as_u64().map(|p| p as usize)
    }
}

struct MoveHandler {
    script: Arc<Script>,
    latency: [LatencyDist; 2],
}

impl Handler for MoveHandler {
    fn invoke(&self, call: &CallSpec) -> Result<ActionValue, HandlerError> {
        let ply = Script::ply_of(call).ok_or_else(|| HandlerError::new("move", "missing ply"))?;
        self.script
            .moves
            .get(ply)
            .map(|m| ActionValue::from(m.as_str()))
            .ok_or_else(|| HandlerError::new("move", format!("ply {ply} is past the end of the script")))
    }

    fn latency(&self, call: &CallSpec, rng: &mut dyn RngCore) -> f64 {
        let ply = Script::ply_of(call).unwrap_or(0);
        self.latency[ply % 2].sample(rng)
    }
}

struct MoveModel {
    script: Arc<Script>,
}

impl ResponseModel<GameState> for MoveModel {
    fn truth(&self, state: &GameState, _call: &CallSpec) -> Option<ActionValue> {
        self.script.moves.get(state.history.len()).map(|m| ActionValue::from(m.as_str()))
    }

    fn decoy(&self, _state: &GameState, _call: &CallSpec, rng: &mut dyn RngCore) -> ActionValue {
        ActionValue::from(MOVES[rng.random_range(0..MOVES.len())])
    }
}

/// Two players alternate moves read from a script. The speculator guesses the
/// opponent's reply; its implied call is the next player's move request.
pub struct TurnGame {
    script: Arc<Script>,
    registry: HandlerRegistry,
    speculator: ScriptedSpeculator<MoveModel>,
}

impl TurnGame {
    pub fn new(config: TurnGameConfig, seed: u64) -> Result<Self, ConfigError> {
        config.white_latency.validate("white_latency")?;
        config.black_latency.validate("black_latency")?;
        config.speculator.validate("speculator")?;
        let moves = match config.script {
            Some(s) if s.is_empty() => return Err(ConfigError::invalid("script", "must not be empty")),
            Some(s) => s,
            None => {
                if config.script_len == 0 {
                    return Err(ConfigError::invalid("script_len", "must be positive"));
                }
                let mut rng = SeedPath::new(seed).label("turn_game.script").rng();
                (0..config.script_len).map(|_| MOVES[rng.random_range(0..MOVES.len())].to_owned()).collect()
            }
        };
        let script = Arc::new(Script { moves });
        let mut registry = HandlerRegistry::new();
        registry.register(
            "move",
            Arc::new(MoveHandler { script: script.clone(), latency: [config.white_latency, config.black_latency] }),
            SafetyClass::Idempotent,
            true,
        );
        let speculator = ScriptedSpeculator { config: config.speculator, model: MoveModel { script: script.clone() } };
        Ok(Self { script, registry, speculator })
    }

    pub fn script(&self) -> &[String] {
        &self.script.moves
    }
}

impl Environment for TurnGame {
    type State = GameState;

    fn initial_state(&self) -> GameState {
        GameState::default()
    }

    fn policy(&self, state: &GameState) -> CallSpec {
        let ply = state.history.len();
        let player = if ply.is_multiple_of(2) { "white" } else { "black" };
        CallSpec::new("move", &json!({ "player": player, "ply": ply, "history": state.history }))
    }

    fn transition(&self, state: &GameState, action: &ActionValue) -> GameState {
        let mut next = state.clone();
        next.history.push(action.0.as_str().map(str::to_owned).unwrap_or_else(|| action.0.to_string()));
        next
    }

    fn digest(&self, state: &GameState) -> String {
        digest_bytes(state.history.join(" ").as_bytes())
    }

    fn registry(&self) -> &HandlerRegistry {
        &self.registry
    }

    fn speculator(&self) -> &dyn GuessSource<GameState> {
        &self.speculator
    }
}
