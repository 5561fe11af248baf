//! Latency theory for one-step speculation with exponential latencies, and
//! the Monte-Carlo simulators that check it.
//!
//! Model: actor latency `B ~ Exp(beta)`, speculator latency `A ~ Exp(alpha)`,
//! each window's guess correct with probability `p`, and no window in the
//! step right after a hit. A run of `T` steps has `T - 1` potential windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::RunResult;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("rates must be positive and finite (alpha={alpha}, beta={beta})")]
    BadRates { alpha: f64, beta: f64 },
    #[error("beta={beta} exceeds alpha={alpha}; the speculator must not be slower than the actor in expectation (set allow_slow_speculator to explore anyway)")]
    SlowSpeculator { alpha: f64, beta: f64 },
    #[error("p={0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error("runs differ in {0}")]
    MismatchedRuns(&'static str),
    #[error("trial count must be at least 1")]
    NoTrials,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub horizon: usize,
}

impl LatencyModel {
    /// Validated model; `beta <= alpha` is required.
    pub fn new(alpha: f64, beta: f64, p: f64, horizon: usize) -> Result<Self, AnalyticsError> {
        Self::build(alpha, beta, p, horizon, false)
    }

    /// Like [`LatencyModel::new`] but accepts a speculator slower than the actor.
    pub fn exploratory(alpha: f64, beta: f64, p: f64, horizon: usize) -> Result<Self, AnalyticsError> {
        Self::build(alpha, beta, p, horizon, true)
    }

    pub fn build(
        alpha: f64,
        beta: f64,
        p: f64,
        horizon: usize,
        allow_slow_speculator: bool,
    ) -> Result<Self, AnalyticsError> {
        check_rates(alpha, beta)?;
        if !allow_slow_speculator && beta > alpha {
            return Err(AnalyticsError::SlowSpeculator { alpha, beta });
        }
        check_p(p)?;
        if horizon == 0 {
            return Err(AnalyticsError::BadHorizon);
        }
        Ok(Self { alpha, beta, p, horizon })
    }

    /// alpha / (alpha + beta): probability the speculator beats the actor.
    pub fn race_share(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

fn check_rates(alpha: f64, beta: f64) -> Result<(), AnalyticsError> {
    let ok = |r: f64| r.is_finite() && r > 0.0;
    if ok(alpha) && ok(beta) {
        Ok(())
    } else {
        Err(AnalyticsError::BadRates { alpha, beta })
    }
}

fn check_p(p: f64) -> Result<(), AnalyticsError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(AnalyticsError::BadProbability(p))
    }
}

/// `(-p)^n` for any `n`; `powi` alone would wrap exponents past `i32::MAX`.
fn neg_pow(p: f64, n: usize) -> f64 {
    let mag = match i32::try_from(n) {
        Ok(k) => p.powi(k),
        Err(_) => p.powf(n as f64),
    };
    if n % 2 == 1 {
        -mag
    } else {
        mag
    }
}

/// Expected speculative over sequential runtime.
pub fn ratio_closed_form(m: &LatencyModel) -> f64 {
    let t = m.horizon as f64;
    let p = m.p;
    let q = p / (1.0 + p);
    let bracket = (t - 1.0) * q + q * q - q * q * neg_pow(p, m.horizon - 1);
    1.0 - bracket * m.race_share() / t
}

/// Limit of [`ratio_closed_form`] as the horizon grows.
pub fn ratio_limit(p: f64, alpha: f64, beta: f64) -> Result<f64, AnalyticsError> {
    check_rates(alpha, beta)?;
    check_p(p)?;
    Ok(1.0 - p / (1.0 + p) * alpha / (alpha + beta))
}

/// Double-double value `hi + lo`, enough to keep the hit recursion exact to
/// well under 1e-12 for ten thousand windows.
#[derive(Clone, Copy)]
struct Dd(f64, f64);

impl Dd {
    fn from(x: f64) -> Self {
        Dd(x, 0.0)
    }

    fn add(self, o: Dd) -> Dd {
        let s = self.0 + o.0;
        let v = s - self.0;
        let e = (self.0 - (s - v)) + (o.0 - v) + self.1 + o.1;
        let hi = s + e;
        Dd(hi, e - (hi - s))
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p) + self.0 * o.1 + self.1 * o.0;
        let hi = p + e;
        Dd(hi, e - (hi - p))
    }
}

/// `S_0..=S_n` of the hit recursion `S_n = p(1 + S_{n-2}) + (1 - p) S_{n-1}`.
pub fn expected_hits_table(n: usize, p: f64) -> Vec<f64> {
    let pd = Dd::from(p);
    let qd = Dd::from(1.0).add(Dd(-p, 0.0));
    let one = Dd::from(1.0);
    let mut out = Vec::with_capacity(n + 1);
    let (mut prev, mut cur) = (Dd::from(0.0), pd);
    out.push(0.0);
    if n >= 1 {
        out.push(p);
    }
    for _ in 2..=n {
        let next = pd.mul(one.add(prev)).add(qd.mul(cur));
        prev = cur;
        cur = next;
        out.push(cur.0 + cur.1);
    }
    out
}

/// Expected number of hits over `n` windows, by recursion.
pub fn expected_hits(n: usize, p: f64) -> f64 {
    expected_hits_table(n, p)[n]
}

/// Closed form of [`expected_hits`].
pub fn expected_hits_closed(n: usize, p: f64) -> f64 {
    let q = p / (1.0 + p);
    n as f64 * q + q * q * (1.0 - neg_pow(p, n))
}

/// E[(B - A)+]: expected time a hit saves.
pub fn saving_per_hit(alpha: f64, beta: f64) -> f64 {
    alpha / (beta * (alpha + beta))
}

pub fn expected_sequential_time(m: &LatencyModel) -> f64 {
    m.horizon as f64 / m.beta
}

pub fn expected_speculative_time(m: &LatencyModel) -> f64 {
    expected_sequential_time(m) - expected_hits(m.horizon - 1, m.p) * saving_per_hit(m.alpha, m.beta)
}

/// How a hit block is scored by the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimSemantics {
    /// Every correct guess is a hit; the two-step block takes `C + min(A, B)`.
    PaperBlock,
    /// A correct guess is a hit only if the speculator lands before the actor
    /// (otherwise nothing was pre-launched); the block ends at
    /// `max(B, A + C)`, since the committed response still has to arrive.
    StrictPipeline,
}

impl SimSemantics {
    pub const ALL: [SimSemantics; 2] = [SimSemantics::PaperBlock, SimSemantics::StrictPipeline];

    pub fn name(self) -> &'static str {
        match self {
            SimSemantics::PaperBlock => "paper_block",
            SimSemantics::StrictPipeline => "strict_pipeline",
        }
    }
}

impl std::str::FromStr for SimSemantics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper_block" => Ok(SimSemantics::PaperBlock),
            "strict_pipeline" => Ok(SimSemantics::StrictPipeline),
            other => Err(format!("unknown semantics `{other}`")),
        }
    }
}

/// Ratio estimate `mean(T_s) / mean(T_seq)` with a delta-method standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub stderr: f64,
    pub mean_speculative: f64,
    pub mean_sequential: f64,
    /// Fraction of steps that were hits.
    pub hit_density: f64,
    pub trials: usize,
}

const CHUNK: usize = 4096;

#[derive(Clone, Copy, Default)]
struct Sums {
    n: f64,
    x: f64,
    y: f64,
    xx: f64,
    yy: f64,
    xy: f64,
    hits: f64,
    steps: f64,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.n += o.n;
        self.x += o.x;
        self.y += o.y;
        self.xx += o.xx;
        self.yy += o.yy;
        self.xy += o.xy;
        self.hits += o.hits;
        self.steps += o.steps;
    }
}

/// Trial RNG: one ChaCha stream per trial index.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Draws for one step, in a fixed order so both arms and both semantics see
/// the same numbers: actor latency, speculator latency, guess uniform.
#[derive(Clone, Copy, Debug)]
pub struct StepDraw {
    pub actor: f64,
    pub speculator: f64,
    pub u: f64,
}

pub fn draw_step(rng: &mut ChaCha8Rng, alpha: f64, beta: f64) -> StepDraw {
    let b: f64 = Exp1.sample(rng);
    let a: f64 = Exp1.sample(rng);
    let u: f64 = rng.random();
    StepDraw { actor: b / beta, speculator: a / alpha, u }
}

/// One trial: (sequential time, speculative time, hits).
pub fn simulate_trial(draws: &[StepDraw], p: f64, sem: SimSemantics) -> (f64, f64, usize) {
    let n = draws.len();
    let seq: f64 = draws.iter().map(|d| d.actor).sum();
    let mut spec = 0.0;
    let mut hits = 0;
    let mut t = 0;
    while t < n {
        let d = draws[t];
        if t + 1 < n && d.u < p {
            let c = draws[t + 1].actor;
            match sem {
                SimSemantics::PaperBlock => {
                    spec += c + d.speculator.min(d.actor);
                    hits += 1;
                    t += 2;
                    continue;
                }
                SimSemantics::StrictPipeline if d.speculator <= d.actor => {
                    spec += d.actor.max(d.speculator + c);
                    hits += 1;
                    t += 2;
                    continue;
                }
                SimSemantics::StrictPipeline => {}
            }
        }
        spec += d.actor;
        t += 1;
    }
    (seq, spec, hits)
}

fn chunk_sums(m: &LatencyModel, sem: SimSemantics, seed: u64, lo: usize, hi: usize) -> Sums {
    let mut s = Sums::default();
    let mut draws = Vec::with_capacity(m.horizon);
    for trial in lo..hi {
        let mut rng = trial_rng(seed, trial as u64);
        draws.clear();
        draws.extend((0..m.horizon).map(|_| draw_step(&mut rng, m.alpha, m.beta)));
        let (x, y, h) = simulate_trial(&draws, m.p, sem);
        s.n += 1.0;
        s.x += x;
        s.y += y;
        s.xx += x * x;
        s.yy += y * y;
        s.xy += x * y;
        s.hits += h as f64;
        s.steps += m.horizon as f64;
    }
    s
}

/// Monte-Carlo estimate of the runtime ratio. Trials run in fixed-size chunks
/// reduced in order, so the result does not depend on the thread count.
pub fn simulate_ratio(
    m: &LatencyModel,
    sem: SimSemantics,
    trials: usize,
    seed: u64,
) -> Result<RatioEstimate, AnalyticsError> {
    if trials == 0 {
        return Err(AnalyticsError::NoTrials);
    }
    let chunks: Vec<Sums> = (0..trials.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| chunk_sums(m, sem, seed, c * CHUNK, ((c + 1) * CHUNK).min(trials)))
        .collect();
    let mut s = Sums::default();
    for c in &chunks {
        s.add(c);
    }
    let mx = s.x / s.n;
    let my = s.y / s.n;
    let r = my / mx;
    // Var(Y - rX) with r fixed; the mean of Y - rX is zero by construction.
    let resid = (s.yy - 2.0 * r * s.xy + r * r * s.xx) / s.n;
    let stderr = resid.max(0.0).sqrt() / (s.n.sqrt() * mx);
    Ok(RatioEstimate {
        ratio: r,
        stderr,
        mean_speculative: my,
        mean_sequential: mx,
        hit_density: s.hits / s.steps,
        trials,
    })
}

/// Mean and standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { mean, stderr: (var / n).sqrt() }
    }
}

/// Long-run fraction of steps that are hits, under the window rule alone.
/// Each trial is one run of `horizon` steps; the estimate averages trials.
pub fn simulate_hit_density(p: f64, horizon: usize, trials: usize, seed: u64) -> Result<Estimate, AnalyticsError> {
    check_p(p)?;
    if horizon == 0 {
        return Err(AnalyticsError::BadHorizon);
    }
    if trials == 0 {
        return Err(AnalyticsError::NoTrials);
    }
    let per_trial: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial as u64);
            let mut hits = 0usize;
            let mut t = 0;
            while t < horizon {
                let u: f64 = rng.random();
                if t + 1 < horizon && u < p {
                    hits += 1;
                    t += 2;
                } else {
                    t += 1;
                }
            }
            hits as f64 / horizon as f64
        })
        .collect();
    Ok(Estimate::from_samples(&per_trial))
}

/// Extra real calls spent by speculation relative to the sequential run:
/// `(calls_spec - calls_seq) / calls_seq`, positive when speculation costs more.
pub fn extra_call_ratio(spec: &RunResult, seq: &RunResult) -> Result<f64, AnalyticsError> {
    if spec.horizon != seq.horizon {
        return Err(AnalyticsError::MismatchedRuns("horizon"));
    }
    if spec.seed != seq.seed {
        return Err(AnalyticsError::MismatchedRuns("seed"));
    }
    Ok((spec.total_calls as f64 - seq.total_calls as f64) / seq.total_calls as f64)
}

/// The same ratio rebuilt from the speculative run's traces alone:
/// `(speculator calls + pre-launches - hits) / T`.
pub fn extra_call_ratio_from_traces(spec: &RunResult) -> f64 {
    (spec.speculator_calls() as f64 + spec.prelaunches() as f64 - spec.hits() as f64) / spec.horizon as f64
}

/// Axes of a theory sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub horizons: Vec<usize>,
    pub p: Vec<f64>,
    /// (alpha, beta) pairs.
    pub rates: Vec<(f64, f64)>,
}

impl Grid {
    /// The acceptance grid: 4 horizons x 5 accuracies x 3 rate pairs.
    pub fn acceptance() -> Self {
        Self {
            horizons: vec![2, 5, 10, 50],
            p: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            rates: vec![(1.0, 1.0), (2.0, 1.0), (5.0, 1.0)],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.horizons.is_empty() || self.p.is_empty() || self.rates.is_empty()
    }

    /// Points in canonical order (T, p, alpha, beta), validated.
    pub fn points(&self) -> Result<Vec<LatencyModel>, AnalyticsError> {
        let mut out = Vec::new();
        for &t in &self.horizons {
            for &p in &self.p {
                for &(a, b) in &self.rates {
                    out.push(LatencyModel::new(a, b, p, t)?);
                }
            }
        }
        out.sort_by(|x, y| {
            (x.horizon, x.p, x.alpha, x.beta)
                .partial_cmp(&(y.horizon, y.p, y.alpha, y.beta))
                .expect("validated values are finite")
        });
        out.dedup();
        Ok(out)
    }
}

/// One CSV row of a theory sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub semantics: SimSemantics,
    pub closed_form: f64,
    pub empirical: f64,
    pub stderr: f64,
}

impl GridRow {
    /// More than three standard errors from the closed form.
    pub fn flagged(&self) -> bool {
        (self.empirical - self.closed_form).abs() > 3.0 * self.stderr
    }
}

/// Closed form and simulation for every grid point under each semantics.
pub fn sweep(
    grid: &Grid,
    semantics: &[SimSemantics],
    trials: usize,
    seed: u64,
) -> Result<Vec<GridRow>, AnalyticsError> {
    let mut rows = Vec::new();
    for m in grid.points()? {
        let closed_form = ratio_closed_form(&m);
        for &sem in semantics {
            let est = simulate_ratio(&m, sem, trials, seed)?;
            rows.push(GridRow {
                horizon: m.horizon,
                p: m.p,
                alpha: m.alpha,
                beta: m.beta,
                semantics: sem,
                closed_form,
                empirical: est.ratio,
                stderr: est.stderr,
            });
        }
    }
    Ok(rows)
}
