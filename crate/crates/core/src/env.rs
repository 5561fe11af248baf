//! Environment plug-in interface.
//!
//! An environment supplies the initial state, the policy mapping a state to
//! the next call, the transition applied to a response, the registry of
//! handlers (each with a safety class), and a guess source that plays the
//! speculator. Policy and transition must be deterministic and are treated as
//! zero-time.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::call::{ActionValue, CallSpec};
use crate::error::{HandlerError, SpeculatorError};
use crate::safety::SafetyClass;

/// An authoritative API. Invoked from worker threads in wall-clock mode, so it
/// must tolerate concurrent calls.
pub trait Handler: Send + Sync {
    fn invoke(&self, call: &CallSpec) -> Result<ActionValue, HandlerError>;

    /// Latency of this call, drawn from `rng`. The executor derives `rng`
    /// from (run seed, step, call), so the same call at the same step sees the
    /// same latency in sequential and speculative runs.
    fn latency(&self, call: &CallSpec, rng: &mut dyn RngCore) -> f64;
}

/// Exponential latency with the given rate (mean `1/rate`).
pub fn exp_latency(rate: f64, rng: &mut dyn RngCore) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

#[derive(Clone)]
pub struct HandlerEntry {
    pub handler: Arc<dyn Handler>,
    pub safety: SafetyClass,
    pub cancellable: bool,
}

#[derive(Clone, Default)]
pub struct HandlerRegistry {
    entries: BTreeMap<String, HandlerEntry>,
}

impl HandlerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a handler. Re-registering an id replaces it, so every id has
    /// exactly one safety class.
    pub fn register(
        &mut self,
        id: impl Into<String>,
        handler: Arc<dyn Handler>,
        safety: SafetyClass,
        cancellable: bool,
    ) -> &mut Self {
        self.entries.insert(id.into(), HandlerEntry { handler, safety, cancellable });
        self
    }

    pub fn get(&self, id: &str) -> Option<&HandlerEntry> {
        self.entries.get(id)
    }

    pub fn safety(&self, id: &str) -> Option<SafetyClass> {
        self.entries.get(id).map(|e| e.safety)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// One speculative guess of an API response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guess {
    pub value: ActionValue,
    /// In [0, 1].
    pub confidence: f64,
    /// Steps ahead; 1 is the response currently awaited.
    pub depth: usize,
}

impl Guess {
    pub fn new(value: ActionValue, confidence: f64) -> Self {
        let confidence = if confidence.is_nan() { 0.0 } else { confidence.clamp(0.0, 1.0) };
        Self { value, confidence, depth: 1 }
    }
}

/// The speculator: ranked guesses of the response to `call` issued in `state`.
pub trait GuessSource<S>: Send + Sync {
    fn guesses(
        &self,
        state: &S,
        call: &CallSpec,
        k: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Guess>, SpeculatorError>;

    /// Latency of one speculator invocation.
    fn latency(&self, rng: &mut dyn RngCore) -> f64;
}

pub trait Environment: Send + Sync {
    type State: Clone + Send + Sync;

    fn initial_state(&self) -> Self::State;

    fn policy(&self, state: &Self::State) -> CallSpec;

    fn transition(&self, state: &Self::State, action: &ActionValue) -> Self::State;

    /// Short stable digest of a state for trajectory records.
    fn digest(&self, state: &Self::State) -> String;

    fn registry(&self) -> &HandlerRegistry;

    fn speculator(&self) -> &dyn GuessSource<Self::State>;

    /// Optional prediction of how many calls follow from `state`. `Some(0)`
    /// suppresses the speculation window for this step; `Some(n)` caps the
    /// depth of tree speculation at `n`.
    fn predicted_calls(&self, _state: &Self::State, _call: &CallSpec) -> Option<usize> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn guess_confidence_is_clamped() {
        assert_eq!(Guess::new("a".into(), 1.7).confidence, 1.0);
        assert_eq!(Guess::new("a".into(), -0.2).confidence, 0.0);
        assert_eq!(Guess::new("a".into(), f64::NAN).confidence, 0.0);
    }

    #[test]
    fn exp_latency_has_the_right_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| exp_latency(4.0, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 0.005, "{mean}");
    }
}
