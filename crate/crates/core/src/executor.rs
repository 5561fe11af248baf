//! The speculative executor.
//!
//! On a cache hit the step awaits the cached pending action and opens no
//! speculation window. On a miss the real call is issued and the speculator
//! runs alongside it; if the speculator lands before the actor, the calls
//! implied by its guesses are pre-launched and cached, otherwise the window
//! is abandoned as late. Sequential execution is the same loop with
//! speculation disabled.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::SpeculationCache;
use crate::call::{ActionValue, CallSpec};
use crate::env::Environment;
use crate::error::ExecError;
use crate::runtime::{Runtime, SpecOutcome, VirtualRuntime, WallRuntime};
use crate::seed::SeedPath;
use crate::strategies::{speculate_tree, SpeculationTree, Strategy};

/// Clock domain of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClockMode {
    /// Single-threaded discrete-event clock; bit-identical for a given seed.
    Virtual,
    /// Real threads; one latency unit lasts `scale` seconds.
    Wall { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub spec: CallSpec,
    pub cache_hit: bool,
    /// A speculator was invoked at this step.
    pub speculated: bool,
    /// Ranked guesses the speculator returned in time (0 if late or failed).
    pub guesses_issued: usize,
    /// Sibling rank of the guess whose implied call was hit.
    pub hit_rank: Option<usize>,
    /// Tree depth of that guess (1 for top-k).
    pub hit_depth: Option<usize>,
    /// Rank of the first guess equal to this step's actual response.
    pub guess_rank: Option<usize>,
    pub speculator_late: bool,
    pub speculator_failed: bool,
    /// Calls pre-launched during this step.
    pub prelaunches: usize,
    /// Implied calls not launched because their handler is irreversible or unknown.
    pub dropped_unsafe: usize,
    /// Implied calls not launched because an identical call was already cached.
    pub dropped_duplicate: usize,
    pub evicted: usize,
    pub cancelled: usize,
    pub detached: usize,
    pub actor_latency: f64,
    pub speculator_latency: Option<f64>,
    pub started_at: f64,
    pub step_wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub digest: String,
    pub action: ActionValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub horizon: usize,
    pub strategy: Option<Strategy>,
    pub trajectory: Vec<TrajectoryEntry>,
    pub traces: Vec<StepTrace>,
    pub total_time: f64,
    /// Actor calls, speculator invocations and pre-launches.
    pub total_calls: usize,
    /// Pre-launched calls per handler id.
    pub speculative_invocations: BTreeMap<String, usize>,
}

impl RunResult {
    pub fn hits(&self) -> usize {
        self.traces.iter().filter(|t| t.cache_hit).count()
    }

    pub fn speculator_calls(&self) -> usize {
        self.traces.iter().filter(|t| t.speculated).count()
    }

    pub fn prelaunches(&self) -> usize {
        self.traces.iter().map(|t| t.prelaunches).sum()
    }

    /// Pre-launched calls that were discarded without being consumed.
    pub fn wasted_calls(&self) -> usize {
        self.prelaunches() - self.hits()
    }

    /// total_calls = T + speculator invocations + pre-launches - hits.
    pub fn accounting_holds(&self) -> bool {
        self.total_calls + self.hits() == self.horizon + self.speculator_calls() + self.prelaunches()
    }

    pub fn trajectory_matches(&self, other: &RunResult) -> bool {
        self.trajectory == other.trajectory
    }
}

/// Lowest index `i` with `guesses[i] == actual`.
pub fn validate(actual: &ActionValue, guesses: &[ActionValue]) -> Option<usize> {
    guesses.iter().position(|g| g == actual)
}

/// RNG that drives the latency of `call` issued at `step`. Sequential and
/// speculative runs share it, so matched calls see matched latencies.
pub fn latency_rng(seed: u64, step: usize, call: &CallSpec) -> ChaCha8Rng {
    SeedPath::new(seed).label("latency").index(step as u64).bytes(&call.key_bytes()).rng()
}

/// RNG for the speculator invoked at `step`: its latency is drawn first, then
/// its guesses.
pub fn speculator_rng(seed: u64, step: usize) -> ChaCha8Rng {
    SeedPath::new(seed).label("speculator").index(step as u64).rng()
}

pub fn run_sequential<E: Environment>(env: &E, horizon: usize, seed: u64) -> Result<RunResult, ExecError> {
    run(env, None, horizon, seed, ClockMode::Virtual)
}

pub fn run_speculative<E: Environment>(
    env: &E,
    strategy: Strategy,
    horizon: usize,
    seed: u64,
) -> Result<RunResult, ExecError> {
    run(env, Some(strategy), horizon, seed, ClockMode::Virtual)
}

/// Run with an explicit clock. `strategy = None` is sequential execution.
pub fn run<E: Environment>(
    env: &E,
    strategy: Option<Strategy>,
    horizon: usize,
    seed: u64,
    clock: ClockMode,
) -> Result<RunResult, ExecError> {
    if horizon == 0 {
        return Err(ExecError::InvalidArgument("step count must be at least 1".into()));
    }
    match clock {
        ClockMode::Virtual => Executor::new(env, strategy, horizon, seed).drive(VirtualRuntime::default()),
        ClockMode::Wall { scale } => {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(ExecError::InvalidArgument(format!("time scale must be positive, got {scale}")));
            }
            std::thread::scope(|scope| {
                Executor::new(env, strategy, horizon, seed).drive(WallRuntime::new(scope, scale))
            })
        }
    }
}

/// The tree of the latest window plus the node whose guess matched the most
/// recent response; that node's children are the live speculation.
struct Window<S> {
    tree: SpeculationTree<S>,
    /// Implied call -> node that launched it.
    launched: BTreeMap<CallSpec, usize>,
    confirmed: Option<usize>,
    /// False once a response failed to match; the tree then only serves
    /// rank lookups for entries still in the cache.
    open: bool,
}

struct Executor<'e, E: Environment> {
    env: &'e E,
    strategy: Option<Strategy>,
    horizon: usize,
    seed: u64,
    cache: SpeculationCache,
    window: Option<Window<E::State>>,
    total_calls: usize,
    speculative_invocations: BTreeMap<String, usize>,
}

impl<'e, E: Environment> Executor<'e, E> {
    fn new(env: &'e E, strategy: Option<Strategy>, horizon: usize, seed: u64) -> Self {
        Self {
            env,
            strategy: strategy.filter(|s| !s.is_disabled()),
            horizon,
            seed,
            cache: SpeculationCache::new(),
            window: None,
            total_calls: 0,
            speculative_invocations: BTreeMap::new(),
        }
    }

    fn drive<R: Runtime<'e, E::State>>(mut self, mut rt: R) -> Result<RunResult, ExecError> {
        let env = self.env;
        let mut state = env.initial_state();
        let mut trajectory = Vec::with_capacity(self.horizon);
        let mut traces = Vec::with_capacity(self.horizon);

        for t in 0..self.horizon {
            let started_at = rt.now();
            let ev = self.cache.evict_stale(t, started_at);
            let call = env.policy(&state);
            let entry = env
                .registry()
                .get(call.handler_id())
                .ok_or_else(|| ExecError::UnknownHandler { step: t, handler: call.handler_id().to_owned() })?
                .clone();

            let mut trace = StepTrace {
                step: t,
                spec: call.clone(),
                cache_hit: false,
                speculated: false,
                guesses_issued: 0,
                hit_rank: None,
                hit_depth: None,
                guess_rank: None,
                speculator_late: false,
                speculator_failed: false,
                prelaunches: 0,
                dropped_unsafe: 0,
                dropped_duplicate: 0,
                evicted: ev.evicted,
                cancelled: ev.cancelled,
                detached: ev.detached,
                actor_latency: 0.0,
                speculator_latency: None,
                started_at,
                step_wall_time: 0.0,
            };

            let action = if let Some((mut pending, _)) = self.cache.take(&call) {
                trace.cache_hit = true;
                trace.actor_latency = pending.latency();
                if let Some(w) = &self.window {
                    if let Some(&node) = w.launched.get(&call) {
                        trace.hit_rank = Some(w.tree.node(node).rank);
                        trace.hit_depth = Some(w.tree.depth_of(node));
                    }
                }
                let action = rt.await_action(&mut pending).map_err(|source| ExecError::Step { step: t, source })?;
                self.advance_window(&mut rt, t, &action, &mut trace);
                action
            } else {
                self.window = None;
                let latency = entry.handler.latency(&call, &mut latency_rng(self.seed, t, &call));
                trace.actor_latency = latency;
                let mut actor = rt.launch(&entry, call.clone(), latency);
                self.total_calls += 1;

                let window_cap = self.window_depth(&state, &call, t);
                let mut tree = None;
                if let (Some(depth), Some(strategy)) = (window_cap, self.strategy) {
                    let mut rng = speculator_rng(self.seed, t);
                    let spec_latency = env.speculator().latency(&mut rng);
                    trace.speculated = true;
                    trace.speculator_latency = Some(spec_latency);
                    self.total_calls += 1;
                    let job_state = state.clone();
                    let job_call = call.clone();
                    let beam = strategy.width();
                    let job = Box::new(move || -> SpecOutcome<E::State> {
                        speculate_tree(env, &job_state, &job_call, depth, beam, &mut rng)
                    });
                    let mut ticket = rt.launch_speculator(spec_latency, job);
                    if rt.speculator_first(&mut actor, &mut ticket) {
                        match rt.await_speculator(ticket) {
                            Ok(tr) => tree = Some(tr),
                            Err(_) => trace.speculator_failed = true,
                        }
                    } else {
                        trace.speculator_late = true;
                    }
                }
                if let Some(tr) = tree {
                    trace.guesses_issued = tr.roots().len();
                    let mut w = Window { tree: tr, launched: BTreeMap::new(), confirmed: None, open: true };
                    let roots = w.tree.roots().to_vec();
                    self.prelaunch(&mut rt, &mut w, &roots, t, &mut trace);
                    self.window = Some(w);
                }
                let action = rt.await_action(&mut actor).map_err(|source| ExecError::Step { step: t, source })?;
                if let Some(w) = &self.window {
                    trace.guess_rank = w.tree.find_child(None, &action).map(|i| w.tree.node(i).rank);
                }
                self.advance_window(&mut rt, t, &action, &mut trace);
                action
            };

            trace.step_wall_time = rt.now() - started_at;
            trajectory.push(TrajectoryEntry { digest: env.digest(&state), action: action.clone() });
            traces.push(trace);
            state = env.transition(&state, &action);
        }

        let total_time = rt.now();
        self.cache.clear(total_time);
        Ok(RunResult {
            seed: self.seed,
            horizon: self.horizon,
            strategy: self.strategy,
            trajectory,
            traces,
            total_time,
            total_calls: self.total_calls,
            speculative_invocations: self.speculative_invocations,
        })
    }

    /// Depth of the window to open at step `t`, or `None` when no window opens.
    fn window_depth(&self, state: &E::State, call: &CallSpec, t: usize) -> Option<usize> {
        let strategy = self.strategy?;
        if t + 1 >= self.horizon {
            return None;
        }
        let mut depth = strategy.depth().min(self.horizon - 1 - t);
        if let Some(n) = self.env.predicted_calls(state, call) {
            depth = depth.min(n);
        }
        (depth > 0).then_some(depth)
    }

    /// Validate `action` against the children of the confirmed node (or the
    /// roots right after a window) and launch the next level below a match.
    fn advance_window<R: Runtime<'e, E::State>>(
        &mut self,
        rt: &mut R,
        t: usize,
        action: &ActionValue,
        trace: &mut StepTrace,
    ) {
        let Some(mut w) = self.window.take() else { return };
        if w.open {
            match w.tree.find_child(w.confirmed, action) {
                Some(m) => {
                    w.confirmed = Some(m);
                    let next = w.tree.children(m).to_vec();
                    if !next.is_empty() && t + 2 < self.horizon {
                        // Consumed at t + 2; generation t + 1 keeps them alive until then.
                        self.prelaunch(rt, &mut w, &next, t + 1, trace);
                    }
                }
                None => w.open = false,
            }
        }
        self.window = Some(w);
    }

    fn prelaunch<R: Runtime<'e, E::State>>(
        &mut self,
        rt: &mut R,
        w: &mut Window<E::State>,
        nodes: &[usize],
        generation: usize,
        trace: &mut StepTrace,
    ) {
        let registry = self.env.registry();
        for &i in nodes {
            let node = w.tree.node(i);
            let call = node.implied_call.clone();
            let entry = match registry.get(call.handler_id()) {
                Some(e) if node.launchable && e.safety.allows_prelaunch() => e,
                _ => {
                    trace.dropped_unsafe += 1;
                    continue;
                }
            };
            if self.cache.contains(&call) || w.launched.contains_key(&call) {
                trace.dropped_duplicate += 1;
                continue;
            }
            // Keyed by the step that will consume it, matching the sequential arm.
            let step = generation + 1;
            let latency = entry.handler.latency(&call, &mut latency_rng(self.seed, step, &call));
            let pending = rt.launch(entry, call.clone(), latency);
            self.total_calls += 1;
            trace.prelaunches += 1;
            *self.speculative_invocations.entry(call.handler_id().to_owned()).or_default() += 1;
            w.launched.insert(call, i);
            let inserted = self.cache.insert(pending, generation);
            debug_assert!(inserted.is_ok());
        }
    }
}

/// One JSON object per step trace, one per line.
pub fn traces_to_jsonl(traces: &[StepTrace]) -> String {
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(t).expect("traces serialize"));
        out.push('\n');
    }
    out
}

/// A malformed line in a trace file; `line` is 1-based.
#[derive(Debug, thiserror::Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_trace_line(line: &str) -> Result<StepTrace, serde_json::Error> {
    serde_json::from_str(line)
}

/// Inverse of [`traces_to_jsonl`]; blank lines are skipped.
pub fn parse_traces_jsonl(text: &str) -> Result<Vec<StepTrace>, TraceParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_trace_line(l).map_err(|e| TraceParseError { line: i + 1, message: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_examples() {
        let g = |s: &[&str]| s.iter().map(|&x| ActionValue::from(x)).collect::<Vec<_>>();
        assert_eq!(validate(&"e4".into(), &g(&["e4", "d4", "Nf3"])), Some(0));
        assert_eq!(validate(&"c5".into(), &g(&["e4", "d4"])), None);
        assert_eq!(validate(&"d4".into(), &g(&["e4", "d4", "d4"])), Some(1));
    }
}
