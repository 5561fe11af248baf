use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{ConfigError, LatencyDist};
use crate::call::{ActionValue, CallSpec};
use crate::env::{Guess, GuessSource};
use crate::error::SpeculatorError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeculatorConfig {
    pub latency: LatencyDist,
    /// `accuracy[r]`: probability that the true response is the guess at
    /// rank `r`. Entries sum to at most 1; the remainder is "not guessed".
    pub accuracy: Vec<f64>,
    /// Probability that an invocation fails outright.
    pub failure_rate: f64,
}

impl Default for SpeculatorConfig {
    fn default() -> Self {
        Self { latency: LatencyDist::Exponential { rate: 2.0 }, accuracy: vec![0.5], failure_rate: 0.0 }
    }
}

impl SpeculatorConfig {
    pub fn validate(&self, path: &str) -> Result<(), ConfigError> {
        self.latency.validate(&format!("{path}.latency"))?;
        for (i, &a) in self.accuracy.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(ConfigError::invalid(format!("{path}.accuracy[{i}]"), "must be in [0, 1]"));
            }
        }
        if self.accuracy.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(ConfigError::invalid(format!("{path}.accuracy"), "entries must sum to at most 1"));
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(ConfigError::invalid(format!("{path}.failure_rate"), "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Rank-any accuracy when `k` guesses are requested.
    pub fn accuracy_at(&self, k: usize) -> f64 {
        self.accuracy.iter().take(k).sum()
    }
}

/// Ground truth and plausible wrong answers for the responses of an environment.
pub trait ResponseModel<S>: Send + Sync {
    /// The response the actor will return, if the call is valid.
    fn truth(&self, state: &S, call: &CallSpec) -> Option<ActionValue>;

    /// A plausible response; may coincide with the truth (callers re-draw).
    fn decoy(&self, state: &S, call: &CallSpec, rng: &mut dyn RngCore) -> ActionValue;
}

/// Guess source driven by an accuracy-by-rank table.
///
/// Per invocation it draws a failure uniform, then a uniform that places the
/// truth at some rank (or nowhere), then wrong guesses for the other ranks in
/// order. The list for `k` is therefore a prefix of the list for any larger `k`.
pub struct ScriptedSpeculator<M> {
    pub config: SpeculatorConfig,
    pub model: M,
}

const DECOY_ATTEMPTS: usize = 32;

impl<S, M: ResponseModel<S>> GuessSource<S> for ScriptedSpeculator<M> {
    fn guesses(
        &self,
        state: &S,
        call: &CallSpec,
        k: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Guess>, SpeculatorError> {
        let fail: f64 = rng.random();
        if fail < self.config.failure_rate {
            return Err(SpeculatorError::Failed("scripted failure".into()));
        }
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut truth_rank = None;
        for (r, &a) in self.config.accuracy.iter().enumerate() {
            cum += a;
            if u < cum {
                truth_rank = Some(r);
                break;
            }
        }
        let truth = self.model.truth(state, call);
        let mut out: Vec<ActionValue> = Vec::with_capacity(k);
        for pos in 0..k {
            if truth_rank == Some(pos) {
                if let Some(t) = &truth {
                    out.push(t.clone());
                    continue;
                }
            }
            for _ in 0..DECOY_ATTEMPTS {
                let d = self.model.decoy(state, call, rng);
                if Some(&d) != truth.as_ref() && !out.contains(&d) {
                    out.push(d);
                    break;
                }
            }
        }
        Ok(out.into_iter().enumerate().map(|(r, v)| Guess::new(v, 1.0 / (r as f64 + 1.0))).collect())
    }

    fn latency(&self, rng: &mut dyn RngCore) -> f64 {
        self.config.latency.sample(rng)
    }
}
