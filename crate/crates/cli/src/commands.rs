//! Subcommand bodies. Each returns the files it would write, keyed by path
//! relative to the output directory, so callers and tests decide where they go.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use specact::analytics::{extra_call_ratio, ratio_limit, sweep, SimSemantics};
use specact::envs::{measure_accuracy, measure_time_saved, AnyEnv, EnvKind};
use specact::lossy::{run_lossy, trajectory_csv, TuneMode, TuneResult};
use specact::{traces_to_jsonl, ClockMode, RunResult, Strategy};

use crate::config::{accuracy_overlay, EnvSpec, RunConfig, SweepConfig, TheoryConfig, TuneSection};
use crate::metrics::{mean_stderr, to_csv, Metric, MetricsRecord, Params};

#[derive(Debug, Default)]
pub struct Outputs {
    pub files: BTreeMap<PathBuf, String>,
    /// Runs whose speculative trajectory diverged from the sequential one.
    pub violations: Vec<String>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

impl Outputs {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (rel, body) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn strategy_label(s: &Strategy) -> String {
    match *s {
        Strategy::TopK { k } => format!("top_k-k{k}"),
        Strategy::Tree { depth, beam } => format!("tree-d{depth}-b{beam}"),
    }
}

fn strategy_params(p: Params, s: &Strategy) -> Params {
    match *s {
        Strategy::TopK { k } => p.with("strategy", "top_k").with("k", k),
        Strategy::Tree { depth, beam } => p.with("strategy", "tree").with("depth", depth).with("beam", beam),
    }
}

/// Sequential arm plus one speculative arm per strategy on a single seed.
struct SeedRuns {
    seed: u64,
    sequential: RunResult,
    speculative: Vec<RunResult>,
}

fn run_seed(env: &AnyEnv, strategies: &[Strategy], horizon: usize, seed: u64, clock: ClockMode) -> Result<SeedRuns> {
    let kind = env.kind().name();
    let sequential =
        env.run(None, horizon, seed, clock).with_context(|| format!("{kind} sequential arm, seed {seed}"))?;
    let speculative = strategies
        .iter()
        .map(|s| {
            env.run(Some(*s), horizon, seed, clock)
                .with_context(|| format!("{kind} {} arm, seed {seed}", strategy_label(s)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedRuns { seed, sequential, speculative })
}

/// Per-run metric records for one speculative arm.
fn arm_records(run_id: &str, params: &Params, spec: &RunResult, seq: &RunResult) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    let time_saved = measure_time_saved(spec, seq)?;
    out.push(MetricsRecord::new(run_id, Metric::TimeSaved, time_saved, params.clone()));
    let acc = measure_accuracy(spec);
    out.push(MetricsRecord::new(run_id, Metric::AccuracyRankAny, acc.rank_any, params.clone()));
    for (r, a) in acc.per_rank.iter().enumerate() {
        out.push(MetricsRecord::new(run_id, Metric::AccuracyPerRank, *a, params.clone().with("rank", r)));
    }
    let extra = extra_call_ratio(spec, seq)?;
    out.push(MetricsRecord::new(run_id, Metric::ExtraCallRatio, extra, params.clone()));
    Ok(out)
}

/// Mean and stderr across seeds of every (metric, params-without-seed) group.
fn aggregate(records: &[MetricsRecord], prefix: &str) -> Vec<MetricsRecord> {
    let mut groups: BTreeMap<(Metric, String), (Params, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let mut p = r.params.clone();
        p.0.remove("seed");
        let key = (r.metric, p.to_string());
        groups.entry(key).or_insert_with(|| (p, Vec::new())).1.push(r.value);
    }
    groups
        .into_iter()
        .map(|((metric, key), (p, xs))| {
            let (m, s) = mean_stderr(&xs);
            MetricsRecord::new(format!("{prefix}-mean[{key}]"), metric, m, p.with("seed", "all")).with_stderr(s)
        })
        .collect()
}

struct Experiment<'a> {
    name: &'a str,
    env: &'a EnvSpec,
    horizon: usize,
    seeds: &'a [u64],
    strategies: &'a [Strategy],
    clock: ClockMode,
    overlay: Option<(String, toml::Table)>,
}

impl Experiment<'_> {
    fn execute(&self, base: &Path, out: &mut Outputs, records: &mut Vec<MetricsRecord>) -> Result<()> {
        let kind: EnvKind = self.env.kind;
        let overlay = self.overlay.as_ref().map(|(_, t)| t);
        let per_seed = self
            .seeds
            .par_iter()
            .map(|&seed| {
                let env = self.env.build(base, overlay, seed)?;
                run_seed(&env, self.strategies, self.horizon, seed, self.clock)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut local = Vec::new();
        for SeedRuns { seed, sequential, speculative } in &per_seed {
            let mut base_params = Params::new().with("env", kind.name()).with("T", self.horizon).with("seed", seed);
            let mut tag = String::new();
            if let Some((label, _)) = &self.overlay {
                base_params = base_params.with("accuracy", label);
                tag = format!("-acc{label}");
            }
            let seq_id = format!("{}-{}{tag}-sequential-s{seed}", self.name, kind.name());
            out.files.insert(PathBuf::from(format!("traces/{seq_id}.jsonl")), traces_to_jsonl(&sequential.traces));
            for (s, spec) in self.strategies.iter().zip(speculative) {
                let run_id = format!("{}-{}{tag}-{}-s{seed}", self.name, kind.name(), strategy_label(s));
                if !spec.trajectory_matches(sequential) {
                    out.violations.push(format!("{run_id}: trajectory differs from the sequential arm"));
                }
                if !spec.accounting_holds() {
                    out.violations.push(format!("{run_id}: call accounting identity does not hold"));
                }
                out.files.insert(PathBuf::from(format!("traces/{run_id}.jsonl")), traces_to_jsonl(&spec.traces));
                let params = strategy_params(base_params.clone(), s);
                local.extend(arm_records(&run_id, &params, spec, sequential)?);
            }
        }
        let prefix = format!("{}-{}", self.name, kind.name());
        records.extend(aggregate(&local, &prefix));
        records.extend(local);
        Ok(())
    }
}

fn summarize(records: &[MetricsRecord], out: &mut Outputs) {
    for r in records.iter().filter(|r| r.params.0.get("seed").map(String::as_str) == Some("all")) {
        if matches!(r.metric, Metric::TimeSaved | Metric::AccuracyRankAny | Metric::ExtraCallRatio) {
            out.summary.push(format!(
                "{:<18} {:>9.4} ± {:.4}  {}",
                r.metric.name(),
                r.value,
                r.stderr.unwrap_or(0.0),
                r.params
            ));
        }
    }
}

pub fn cmd_run(cfg: &RunConfig, base: &Path) -> Result<Outputs> {
    let mut out = Outputs::default();
    let mut records = Vec::new();
    Experiment {
        name: "run",
        env: &cfg.env,
        horizon: cfg.horizon,
        seeds: &cfg.seeds,
        strategies: &cfg.strategies,
        clock: cfg.clock,
        overlay: None,
    }
    .execute(base, &mut out, &mut records)?;
    summarize(&records, &mut out);
    out.files.insert(PathBuf::from("metrics.csv"), to_csv(&records));
    Ok(out)
}

pub fn cmd_sweep(cfg: &SweepConfig, base: &Path) -> Result<Outputs> {
    let mut out = Outputs::default();
    let mut records = Vec::new();
    for acc in &cfg.accuracy {
        let label = acc.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("/");
        Experiment {
            name: "sweep",
            env: &cfg.env,
            horizon: cfg.horizon,
            seeds: &cfg.seeds,
            strategies: &cfg.strategies,
            clock: cfg.clock,
            overlay: Some((label, accuracy_overlay(acc))),
        }
        .execute(base, &mut out, &mut records)?;
    }
    summarize(&records, &mut out);
    out.files.insert(PathBuf::from("metrics.csv"), to_csv(&records));
    Ok(out)
}

pub fn cmd_theory(cfg: &TheoryConfig) -> Result<Outputs> {
    let mut out = Outputs::default();
    let rows = sweep(&cfg.grid, &cfg.semantics, cfg.trials, cfg.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["T", "p", "alpha", "beta", "semantics", "closed_form", "limit", "empirical", "stderr", "flagged"])?;
    let mut records = Vec::new();
    let mut flagged = 0;
    for r in &rows {
        let limit = ratio_limit(r.p, r.alpha, r.beta)?;
        let flag = r.semantics == SimSemantics::PaperBlock && r.flagged();
        flagged += usize::from(flag);
        w.write_record([
            r.horizon.to_string(),
            r.p.to_string(),
            r.alpha.to_string(),
            r.beta.to_string(),
            r.semantics.name().to_owned(),
            r.closed_form.to_string(),
            limit.to_string(),
            r.empirical.to_string(),
            r.stderr.to_string(),
            flag.to_string(),
        ])?;
        let point = Params::new()
            .with("T", r.horizon)
            .with("p", r.p)
            .with("alpha", r.alpha)
            .with("beta", r.beta)
            .with("trials", cfg.trials)
            .with("seed", cfg.seed);
        let id = format!("theory-T{}-p{}-a{}-b{}", r.horizon, r.p, r.alpha, r.beta);
        if r.semantics == cfg.semantics[0] {
            records.push(MetricsRecord::new(&id, Metric::ClosedFormRatio, r.closed_form, point.clone()));
        }
        records.push(
            MetricsRecord::new(
                format!("{id}-{}", r.semantics.name()),
                Metric::EmpiricalRatio,
                r.empirical,
                point.with("semantics", r.semantics.name()),
            )
            .with_stderr(r.stderr),
        );
    }
    out.files.insert(PathBuf::from("theory.csv"), String::from_utf8(w.into_inner()?)?);
    out.files.insert(PathBuf::from("metrics.csv"), to_csv(&records));
    out.summary.push(format!(
        "{} grid points, {} rows, {flagged} flagged beyond 3 stderr under paper_block",
        rows.len() / cfg.semantics.len().max(1),
        rows.len()
    ));
    Ok(out)
}

pub fn cmd_tune(cfg: &TuneSection) -> Result<Outputs> {
    let mut out = Outputs::default();
    let jobs: Vec<(TuneMode, u64)> = cfg.modes.iter().flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let mut params = cfg.params.clone();
            if let (TuneMode::SpeculatorOnly, Some(x)) = (mode, cfg.speculator_only_start) {
                params.start_x = x;
            }
            run_lossy(mode, &params, seed).map(|r| (r, params.start_x))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "mode",
        "seed",
        "start_x",
        "convergence_tick",
        "converged_to",
        "steady_latency",
        "untuned_latency",
        "perturbed_at",
        "recovery_mean_latency",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut records = Vec::new();
    for (r, start_x) in &results {
        let TuneResult { mode, seed, .. } = *r;
        let untuned = cfg.params.surface.latency(*start_x);
        w.write_record([
            mode.name().to_owned(),
            seed.to_string(),
            start_x.to_string(),
            opt(r.convergence_tick.map(|t| t.to_string())),
            opt(r.converged_to.map(|o| format!("{o:?}").to_lowercase())),
            r.steady_latency.to_string(),
            untuned.to_string(),
            opt(r.perturbed_at.map(|t| t.to_string())),
            opt(r.recovery_mean_latency.map(|l| l.to_string())),
        ])?;
        out.files.insert(PathBuf::from(format!("trajectories/{}-s{seed}.csv", mode.name())), trajectory_csv(r));
        let params = Params::new()
            .with("mode", mode.name())
            .with("seed", seed)
            .with("ticks", cfg.params.ticks)
            .with("start_x", start_x)
            .with("bound", cfg.params.bound)
            .with("epsilon", cfg.params.epsilon);
        let run_id = format!("tune-{}-s{seed}", mode.name());
        if let Some(t) = r.convergence_tick {
            records.push(MetricsRecord::new(&run_id, Metric::ConvergenceTick, t as f64, params.clone()));
        }
        if let Some(l) = r.recovery_mean_latency {
            records.push(MetricsRecord::new(&run_id, Metric::RecoveryMeanLatency, l, params.clone()));
        }
    }
    for &mode in &cfg.modes {
        let rs: Vec<_> = results.iter().filter(|(r, _)| r.mode == mode).map(|(r, _)| r).collect();
        let conv: Vec<f64> = rs.iter().filter_map(|r| r.convergence_tick.map(|t| t as f64)).collect();
        let steady: Vec<f64> = rs.iter().map(|r| r.steady_latency).collect();
        let (sm, _) = mean_stderr(&steady);
        let conv_text = if conv.is_empty() {
            "never".to_owned()
        } else {
            format!("{:.1} ({} of {} seeds)", mean_stderr(&conv).0, conv.len(), rs.len())
        };
        out.summary.push(format!("{:<16} convergence tick {conv_text}, steady latency {sm:.2} ms", mode.name()));
    }
    out.files.insert(PathBuf::from("tune_summary.csv"), String::from_utf8(w.into_inner()?)?);
    out.files.insert(PathBuf::from("metrics.csv"), to_csv(&records));
    Ok(out)
}
