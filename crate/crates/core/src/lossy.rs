//! Lossy speculation: a fast bounded-step speculator and a slow deliberative
//! actor tune one system parameter under last-write-wins.
//!
//! Every tick the speculator may nudge `x` by at most `bound` (in decades of
//! `x`); every 10 to 15 ticks the actor lands a setting computed from the whole
//! observation history, overwriting whatever the speculator wrote. There is no
//! rollback: the state after a tick is whatever was written last.
//!
//! Both agents are algorithmic stand-ins: the speculator is a greedy
//! hill-climber on its two latest observations, the actor a smoothed argmin
//! with bounded exploration.

use std::collections::VecDeque;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::ConfigError;
use crate::seed::SeedPath;

/// Two-basin latency surface over `x` in milliseconds, built in `log10(x)`
/// as the lower envelope of two parabolas so both minima sit exactly where
/// configured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseSurface {
    pub global_x: f64,
    pub global_latency: f64,
    pub local_x: f64,
    pub local_latency: f64,
    /// Curvature of each basin in ms per squared decade.
    pub global_curvature: f64,
    pub local_curvature: f64,
    /// Standard deviation of measurement noise (ms).
    pub noise: f64,
    pub min_x: f64,
    pub max_x: f64,
}

impl Default for ResponseSurface {
    fn default() -> Self {
        Self {
            global_x: 0.2,
            global_latency: 30.26,
            local_x: 0.55,
            local_latency: 36.24,
            global_curvature: 80.0,
            // Puts the latency at x = 10 ms at 102.97.
            local_curvature: 42.06,
            noise: 0.1,
            min_x: 0.05,
            max_x: 50.0,
        }
    }
}

impl ResponseSurface {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |v: f64, p: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(format!("surface.{p}"), "must be finite and positive"))
            }
        };
        pos(self.min_x, "min_x")?;
        pos(self.max_x, "max_x")?;
        pos(self.global_x, "global_x")?;
        pos(self.local_x, "local_x")?;
        pos(self.global_curvature, "global_curvature")?;
        pos(self.local_curvature, "local_curvature")?;
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(ConfigError::invalid("surface.noise", "must be finite and non-negative"));
        }
        if self.min_x >= self.max_x {
            return Err(ConfigError::invalid("surface.max_x", "must exceed min_x"));
        }
        for (x, p) in [(self.global_x, "global_x"), (self.local_x, "local_x")] {
            if !(self.min_x..=self.max_x).contains(&x) {
                return Err(ConfigError::invalid(format!("surface.{p}"), "must lie in [min_x, max_x]"));
            }
        }
        if self.global_latency >= self.local_latency {
            return Err(ConfigError::invalid("surface.global_latency", "must be below local_latency"));
        }
        if self.global_branch(self.local_x.log10()) <= self.local_latency {
            return Err(ConfigError::invalid("surface", "the local basin is swallowed by the global one"));
        }
        Ok(())
    }

    fn global_branch(&self, u: f64) -> f64 {
        self.global_latency + self.global_curvature * (u - self.global_x.log10()).powi(2)
    }

    fn local_branch(&self, u: f64) -> f64 {
        self.local_latency + self.local_curvature * (u - self.local_x.log10()).powi(2)
    }

    /// Noise-free latency at `x` ms.
    pub fn latency(&self, x: f64) -> f64 {
        let u = self.clamp(x).log10();
        self.global_branch(u).min(self.local_branch(u))
    }

    /// One noisy measurement.
    pub fn measure(&self, x: f64, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.latency(x) + self.noise * z
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min_x, self.max_x)
    }

    /// Which basin `x` belongs to.
    pub fn basin(&self, x: f64) -> Optimum {
        let u = self.clamp(x).log10();
        if self.global_branch(u) <= self.local_branch(u) {
            Optimum::Global
        } else {
            Optimum::Local
        }
    }

    pub fn optimum_x(&self, which: Optimum) -> f64 {
        match which {
            Optimum::Global => self.global_x,
            Optimum::Local => self.local_x,
        }
    }

    /// Distance in decades.
    pub fn log_distance(a: f64, b: f64) -> f64 {
        (a.log10() - b.log10()).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimum {
    Global,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    /// The starting setting, before anyone wrote.
    Initial,
    Speculator,
    Actor,
    /// A perturbation injected by the experiment.
    External,
}

impl Author {
    pub fn name(self) -> &'static str {
        match self {
            Author::Initial => "initial",
            Author::Speculator => "speculator",
            Author::Actor => "actor",
            Author::External => "external",
        }
    }
}

/// One tick: the setting in force and its measured latency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tick: usize,
    pub x: f64,
    pub latency: f64,
    /// Last writer of `x`.
    pub author: Author,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMode {
    ActorOnly,
    SpeculatorOnly,
    Joint,
}

impl TuneMode {
    pub const ALL: [TuneMode; 3] = [TuneMode::ActorOnly, TuneMode::SpeculatorOnly, TuneMode::Joint];

    pub fn name(self) -> &'static str {
        match self {
            TuneMode::ActorOnly => "actor_only",
            TuneMode::SpeculatorOnly => "speculator_only",
            TuneMode::Joint => "joint",
        }
    }

    fn speculator(self) -> bool {
        self != TuneMode::ActorOnly
    }

    fn actor(self) -> bool {
        self != TuneMode::SpeculatorOnly
    }
}

/// Push `x` to a bad value mid-run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    /// Earliest tick. When an actor is running, the write happens right after
    /// the actor's first landing at or after this tick, so the actor alone
    /// must wait a full cadence to react.
    pub after_tick: usize,
    pub x: f64,
    /// Ticks averaged for the recovery metric, starting at the perturbation.
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub surface: ResponseSurface,
    /// Largest speculator move, in decades of `x`.
    pub bound: f64,
    /// Largest actor move away from the best setting seen, in decades.
    pub explore: f64,
    /// Convergence radius around an optimum, in decades.
    pub epsilon: f64,
    /// Inclusive range of ticks between actor landings.
    pub cadence: (usize, usize),
    pub ticks: usize,
    /// Starting setting (ms).
    pub start_x: f64,
    pub perturbation: Option<Perturbation>,
    /// Verbose observations kept for the speculator.
    pub recent: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            surface: ResponseSurface::default(),
            bound: 0.06,
            explore: 0.04,
            epsilon: 0.2,
            cadence: (10, 15),
            ticks: 300,
            start_x: 0.05,
            perturbation: None,
            recent: 8,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.surface.validate()?;
        let pos = |v: f64, p: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(p, "must be finite and positive"))
            }
        };
        pos(self.bound, "bound")?;
        pos(self.explore, "explore")?;
        pos(self.epsilon, "epsilon")?;
        pos(self.start_x, "start_x")?;
        if self.cadence.0 == 0 || self.cadence.0 > self.cadence.1 {
            return Err(ConfigError::invalid("cadence", "needs 1 <= low <= high"));
        }
        if self.ticks == 0 {
            return Err(ConfigError::invalid("ticks", "must be positive"));
        }
        if self.recent < 2 {
            return Err(ConfigError::invalid("recent", "must be at least 2"));
        }
        if let Some(p) = &self.perturbation {
            pos(p.x, "perturbation.x")?;
            if p.window == 0 {
                return Err(ConfigError::invalid("perturbation.window", "must be positive"));
            }
        }
        Ok(())
    }
}

/// What the two agents see. The actor reads `entries`, every (x, latency)
/// pair so far, compressed one deliberation window at a time; the speculator
/// reads `recent`, which is cleared whenever the actor writes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompressedHistory {
    pub entries: Vec<(f64, f64)>,
    /// Boundaries of each compressed window in `entries`.
    pub windows: Vec<usize>,
    pub recent: VecDeque<Observation>,
}

impl CompressedHistory {
    fn record(&mut self, o: Observation, keep: usize) {
        self.entries.push((o.x, o.latency));
        self.recent.push_back(o);
        while self.recent.len() > keep {
            self.recent.pop_front();
        }
    }

    /// Close the current deliberation window and reset the speculator's narrative.
    fn close_window(&mut self) {
        self.windows.push(self.entries.len());
        self.recent.clear();
    }
}

/// Tuner state at a tick.
#[derive(Clone, Debug, PartialEq)]
pub struct TunerState {
    pub x: f64,
    pub tick: usize,
    pub author: Author,
    pub log: Vec<Observation>,
}

/// Greedy fixed-step hill-climb on the two most recent observations: keep
/// the last direction if it helped, reverse it if it hurt, and pick a random
/// direction when the last two settings are equal or there is only one.
pub fn speculator_step(
    surface: &ResponseSurface,
    recent: &VecDeque<Observation>,
    x: f64,
    bound: f64,
    rng: &mut dyn RngCore,
) -> f64 {
    let u = x.log10();
    let (lo, hi) = (surface.min_x.log10(), surface.max_x.log10());
    let n = recent.len();
    let dir = if n >= 2 && recent[n - 1].x != recent[n - 2].x {
        let (a, b) = (&recent[n - 2], &recent[n - 1]);
        let moved = if b.x > a.x { 1.0 } else { -1.0 };
        if b.latency < a.latency {
            moved
        } else {
            -moved
        }
    } else {
        let feasible: Vec<f64> =
            [-1.0, 1.0].into_iter().filter(|d| (u + d * bound) > lo && (u + d * bound) < hi).collect();
        match feasible.len() {
            0 => 0.0,
            1 => feasible[0],
            _ => feasible[rng.random_range(0..2)],
        }
    };
    surface.clamp(10f64.powf((u + dir * bound).clamp(lo, hi)))
}

/// Per-setting means in log space, sorted by position.
fn bins(entries: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
    let mut pts: Vec<(f64, f64)> = entries.iter().map(|&(x, l)| (x.log10(), l)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for (u, l) in pts {
        match out.last_mut() {
            Some((bu, sum, n)) if (u - *bu).abs() < 1e-9 => {
                *sum += l;
                *n += 1.0;
            }
            _ => out.push((u, l, 1.0)),
        }
    }
    out.into_iter().map(|(u, s, n)| (u, s / n, n)).collect()
}

/// Smoothed latency at each bin: count-weighted Gaussian kernel in log space.
fn smooth(b: &[(f64, f64, f64)], bandwidth: f64) -> Vec<f64> {
    b.iter()
        .map(|&(u0, _, _)| {
            let (mut num, mut den) = (0.0, 0.0);
            for &(u, m, n) in b {
                let w = n * (-0.5 * ((u - u0) / bandwidth).powi(2)).exp();
                num += w * m;
                den += w;
            }
            num / den
        })
        .collect()
}

/// Deliberative choice over the full history: take the argmin of a smoothed
/// estimate; if it is bracketed by observed neighbours, refine it with the
/// parabola through the three; otherwise explore `explore` decades towards the
/// unobserved side (lower `x` first when nothing is known).
pub fn actor_step(surface: &ResponseSurface, history: &CompressedHistory, explore: f64) -> f64 {
    let entries = &history.entries;
    match entries.len() {
        0 => return surface.clamp(surface.min_x),
        1 => return surface.clamp(entries[0].0),
        _ => {}
    }
    let b = bins(entries);
    let s = smooth(&b, explore / 2.0);
    let best = (0..b.len()).min_by(|&i, &j| s[i].total_cmp(&s[j])).expect("non-empty");
    let u = b[best].0;
    let reach = 2.0 * explore;
    let left = best.checked_sub(1).filter(|&i| u - b[i].0 <= reach);
    let right = Some(best + 1).filter(|&i| i < b.len() && b[i].0 - u <= reach);
    let (lo, hi) = (surface.min_x.log10(), surface.max_x.log10());
    let target = match (left, right) {
        (Some(l), Some(r)) => {
            let (x0, y0, x1, y1, x2, y2) = (b[l].0, s[l], u, s[best], b[r].0, s[r]);
            let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
            let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
            let bb = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
            if a > 0.0 {
                (-bb / (2.0 * a)).clamp(x0, x2)
            } else {
                u
            }
        }
        (Some(_), None) => u + explore,
        (None, Some(_)) => u - explore,
        (None, None) => {
            if u - explore >= lo {
                u - explore
            } else {
                u + explore
            }
        }
    };
    surface.clamp(10f64.powf(target.clamp(lo, hi)))
}

/// Landing ticks of the actor for a seed; shared by every mode.
pub fn actor_schedule(seed: u64, cadence: (usize, usize), ticks: usize) -> Vec<usize> {
    let mut rng = SeedPath::new(seed).label("lossy.cadence").rng();
    let mut out = Vec::new();
    let mut t = 0;
    loop {
        t += rng.random_range(cadence.0..=cadence.1);
        if t >= ticks {
            return out;
        }
        out.push(t);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub mode: TuneMode,
    pub seed: u64,
    pub trajectory: Vec<Observation>,
    /// First tick from which `x` stays within epsilon of an optimum, up to the
    /// perturbation (or the end of the run).
    pub convergence_tick: Option<usize>,
    pub converged_to: Option<Optimum>,
    /// Mean measured latency over the last quarter of the unperturbed segment.
    pub steady_latency: f64,
    pub perturbed_at: Option<usize>,
    pub recovery_mean_latency: Option<f64>,
}

impl TuneResult {
    /// First tick from which `x` stays within `epsilon` decades of `target`.
    pub fn settle_tick(&self, target: f64, epsilon: f64) -> Option<usize> {
        let end = self.perturbed_at.unwrap_or(self.trajectory.len());
        let seg = &self.trajectory[..end];
        let mut first = None;
        for o in seg.iter().rev() {
            if ResponseSurface::log_distance(o.x, target) <= epsilon {
                first = Some(o.tick);
            } else {
                break;
            }
        }
        first
    }
}

pub fn run_lossy(mode: TuneMode, config: &TuneConfig, seed: u64) -> Result<TuneResult, ConfigError> {
    config.validate()?;
    let surface = &config.surface;
    let schedule = if mode.actor() { actor_schedule(seed, config.cadence, config.ticks) } else { vec![] };
    let perturb_at = config.perturbation.as_ref().map(|p| {
        if mode.actor() {
            schedule.iter().copied().find(|&t| t >= p.after_tick).unwrap_or(config.ticks)
        } else {
            p.after_tick
        }
    });
    let perturb_at = perturb_at.filter(|&t| t < config.ticks);

    let mut history = CompressedHistory::default();
    let mut state = TunerState { x: surface.clamp(config.start_x), tick: 0, author: Author::Initial, log: vec![] };
    let mut next_landing = schedule.iter().copied().peekable();

    for tick in 0..config.ticks {
        state.tick = tick;
        if tick > 0 && mode.speculator() {
            let mut rng = SeedPath::new(seed).label("lossy.speculator").index(tick as u64).rng();
            state.x = speculator_step(surface, &history.recent, state.x, config.bound, &mut rng);
            state.author = Author::Speculator;
        }
        if next_landing.peek() == Some(&tick) {
            next_landing.next();
            // Last write wins: the actor's setting replaces the speculator's.
            state.x = actor_step(surface, &history, config.explore);
            state.author = Author::Actor;
            history.close_window();
        }
        if perturb_at == Some(tick) {
            let p = config.perturbation.as_ref().expect("scheduled perturbation");
            state.x = surface.clamp(p.x);
            state.author = Author::External;
        }
        let mut rng = SeedPath::new(seed).label("lossy.noise").index(tick as u64).rng();
        let obs = Observation { tick, x: state.x, latency: surface.measure(state.x, &mut rng), author: state.author };
        state.log.push(obs);
        history.record(obs, config.recent);
    }

    let mut result = TuneResult {
        mode,
        seed,
        trajectory: state.log,
        convergence_tick: None,
        converged_to: None,
        steady_latency: 0.0,
        perturbed_at: perturb_at,
        recovery_mean_latency: None,
    };
    for which in [Optimum::Global, Optimum::Local] {
        if let Some(t) = result.settle_tick(surface.optimum_x(which), config.epsilon) {
            if result.convergence_tick.is_none_or(|c| t < c) {
                result.convergence_tick = Some(t);
                result.converged_to = Some(which);
            }
        }
    }
    let end = perturb_at.unwrap_or(config.ticks);
    let start = end - (end / 4).max(1);
    let seg = &result.trajectory[start..end];
    result.steady_latency = seg.iter().map(|o| o.latency).sum::<f64>() / seg.len() as f64;
    if let (Some(p), Some(cfg)) = (perturb_at, &config.perturbation) {
        let seg = &result.trajectory[p..(p + cfg.window).min(config.ticks)];
        result.recovery_mean_latency = Some(seg.iter().map(|o| o.latency).sum::<f64>() / seg.len() as f64);
    }
    Ok(result)
}

/// CSV rows `tick,x,latency,author` for plotting a trajectory.
pub fn trajectory_csv(result: &TuneResult) -> String {
    let mut out = String::from("tick,x,latency,author\n");
    for o in &result.trajectory {
        out.push_str(&format!("{},{},{},{}\n", o.tick, o.x, o.latency, o.author.name()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(tick: usize, x: f64, latency: f64) -> Observation {
        Observation { tick, x, latency, author: Author::Speculator }
    }

    #[test]
    fn default_surface_has_the_configured_minima() {
        let s = ResponseSurface::default();
        s.validate().unwrap();
        assert!((s.latency(0.2) - 30.26).abs() < 1e-12);
        assert!((s.latency(0.55) - 36.24).abs() < 1e-12);
        assert!((s.latency(10.0) - 102.97).abs() < 0.05);
        assert_eq!(s.basin(0.2), Optimum::Global);
        assert_eq!(s.basin(0.55), Optimum::Local);
        for dx in [0.98, 1.02] {
            assert!(s.latency(0.55 * dx) > 36.24);
        }
    }

    #[test]
    fn greedy_continues_when_improving() {
        let s = ResponseSurface::default();
        let recent: VecDeque<_> = [obs(0, 1.0, 40.0), obs(1, 0.8, 38.0)].into();
        let mut rng = SeedPath::new(0).rng();
        let x = speculator_step(&s, &recent, 0.8, 0.05, &mut rng);
        assert!((x.log10() - (0.8f64.log10() - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn greedy_is_clamped_at_the_floor() {
        let s = ResponseSurface::default();
        let recent: VecDeque<_> = [obs(0, 0.06, 50.0), obs(1, 0.05, 45.0)].into();
        let mut rng = SeedPath::new(0).rng();
        assert_eq!(speculator_step(&s, &recent, 0.05, 0.1, &mut rng), 0.05);
    }

    #[test]
    fn actor_single_observation_is_returned() {
        let s = ResponseSurface::default();
        let h = CompressedHistory { entries: vec![(3.0, 70.0)], ..Default::default() };
        assert_eq!(actor_step(&s, &h, 0.04), 3.0);
    }

    #[test]
    fn schedule_respects_cadence() {
        let sched = actor_schedule(9, (10, 15), 500);
        assert!((10..=15).contains(&sched[0]));
        assert!(sched.windows(2).all(|w| (10..=15).contains(&(w[1] - w[0]))));
    }
}
