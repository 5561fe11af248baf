use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specact::envs::ConfigError;
use specact_cli::commands::{cmd_run, cmd_sweep, cmd_theory, cmd_tune, Outputs};
use specact_cli::config::{parse_config_value, parse_toml, ExperimentConfig, SCHEMA_VERSION};
use specact_cli::OUT_DIR_ENV;
use toml::{Table, Value};

const EXIT_VIOLATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Speculative actions: executor experiments, latency theory and the lossy tuner.
#[derive(Parser)]
#[command(name = "specact", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sequential and speculative arms of an environment on matched seeds.
    Run(RunArgs),
    /// Closed-form ratio, its limit and Monte Carlo estimates over a grid.
    Theory(TheoryArgs),
    /// The lossy tuner in actor_only, speculator_only and joint modes.
    Tune(TuneArgs),
    /// `run` crossed with a list of speculator accuracy tables.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, `schema = 1`). Flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Takes precedence over SPECACT_OUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnvArgs {
    /// turn_game, chain_lookup or tool_dialogue.
    #[arg(long)]
    env: Option<String>,
    /// Environment config file.
    #[arg(long)]
    env_config: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<i64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<i64>>,
    /// Top-k strategies to run, one per value.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<i64>>,
    /// Tree strategies as DEPTH:BEAM, added after any top-k ones.
    #[arg(long, value_delimiter = ',')]
    tree: Option<Vec<String>>,
    /// Run on real threads, one latency unit lasting this many seconds.
    #[arg(long)]
    wall_scale: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    env: EnvArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    env: EnvArgs,
    /// Accuracy table, ranks separated by '/'; repeat for several tables.
    #[arg(long)]
    accuracy: Vec<String>,
}

#[derive(Args)]
struct TheoryArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<i64>>,
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    /// ALPHA:BETA pairs.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<String>>,
    /// Use the built-in acceptance grid.
    #[arg(long)]
    acceptance_grid: bool,
    #[arg(long)]
    trials: Option<i64>,
    #[arg(long)]
    seed: Option<i64>,
    #[arg(long, value_delimiter = ',')]
    semantics: Option<Vec<String>>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<i64>>,
    /// actor_only, speculator_only, joint.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    #[arg(long)]
    ticks: Option<i64>,
    #[arg(long)]
    start_x: Option<f64>,
    #[arg(long)]
    speculator_only_start: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Perturb after this tick (see --perturb-x and --perturb-window).
    #[arg(long)]
    perturb_after: Option<i64>,
    #[arg(long, default_value_t = 10.0)]
    perturb_x: f64,
    #[arg(long, default_value_t = 15)]
    perturb_window: i64,
}

fn ints(v: &[i64]) -> Value {
    Value::Array(v.iter().map(|&i| Value::Integer(i)).collect())
}

fn strs(v: &[String]) -> Value {
    Value::Array(v.iter().map(|s| Value::String(s.clone())).collect())
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&f| Value::Float(f)).collect())
}

fn section<'a>(doc: &'a mut Table, name: &str) -> &'a mut Table {
    let v = doc.entry(name).or_insert_with(|| Value::Table(Table::new()));
    if !v.is_table() {
        *v = Value::Table(Table::new());
    }
    v.as_table_mut().expect("just made a table")
}

fn pair(s: &str, path: &str) -> Result<(String, String), ConfigError> {
    s.split_once(':')
        .map(|(a, b)| (a.trim().to_owned(), b.trim().to_owned()))
        .ok_or_else(|| ConfigError::invalid(path, format!("expected A:B, got {s:?}")))
}

fn apply_env_args(sec: &mut Table, a: &EnvArgs, cwd: &Path) -> Result<(), ConfigError> {
    if a.env.is_some() || a.env_config.is_some() {
        let env = section(sec, "env");
        if let Some(kind) = &a.env {
            env.insert("kind".into(), Value::String(kind.clone()));
        }
        if let Some(p) = &a.env_config {
            env.insert("config".into(), Value::String(cwd.join(p).display().to_string()));
        }
    }
    if let Some(h) = a.horizon {
        sec.insert("horizon".into(), Value::Integer(h));
    }
    if let Some(s) = &a.seeds {
        sec.insert("seeds".into(), ints(s));
    }
    if a.k.is_some() || a.tree.is_some() {
        let mut list = Vec::new();
        for &k in a.k.iter().flatten() {
            let mut t = Table::new();
            t.insert("kind".into(), Value::String("top_k".into()));
            t.insert("k".into(), Value::Integer(k));
            list.push(Value::Table(t));
        }
        for spec in a.tree.iter().flatten() {
            let (d, b) = pair(spec, "tree")?;
            let num = |s: &str| s.parse::<i64>().map_err(|e| ConfigError::invalid("tree", e.to_string()));
            let mut t = Table::new();
            t.insert("kind".into(), Value::String("tree".into()));
            t.insert("depth".into(), Value::Integer(num(&d)?));
            t.insert("beam".into(), Value::Integer(num(&b)?));
            list.push(Value::Table(t));
        }
        sec.insert("strategies".into(), Value::Array(list));
    }
    if let Some(scale) = a.wall_scale {
        let mut t = Table::new();
        t.insert("kind".into(), Value::String("wall".into()));
        t.insert("scale".into(), Value::Float(scale));
        sec.insert("clock".into(), Value::Table(t));
    }
    Ok(())
}

struct Loaded {
    config: ExperimentConfig,
    base: PathBuf,
}

fn load(
    common: &Common,
    apply: impl FnOnce(&mut Table, &Path) -> Result<(), ConfigError>,
) -> Result<Loaded, ConfigError> {
    let cwd = std::env::current_dir().map_err(|e| ConfigError::invalid("", e.to_string()))?;
    let (mut doc, base) = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::invalid("", format!("{}: {e}", path.display())))?;
            let doc = match parse_toml(&text)? {
                Value::Table(t) => t,
                _ => unreachable!("documents parse to tables"),
            };
            let base = path.parent().map(|p| cwd.join(p)).unwrap_or_else(|| cwd.clone());
            (doc, base)
        }
        None => {
            let mut t = Table::new();
            t.insert("schema".into(), Value::Integer(SCHEMA_VERSION as i64));
            (t, cwd.clone())
        }
    };
    apply(&mut doc, &cwd)?;
    let config = parse_config_value(Value::Table(doc), Some(&base))?;
    Ok(Loaded { config, base })
}

fn out_dir(common: &Common, config: &ExperimentConfig, base: &Path) -> PathBuf {
    if let Some(o) = &common.out {
        return o.clone();
    }
    if let Some(o) = std::env::var_os(OUT_DIR_ENV).filter(|o| !o.is_empty()) {
        return PathBuf::from(o);
    }
    match &config.output {
        Some(o) => base.join(o),
        None => PathBuf::from("specact-out"),
    }
}

fn missing(section: &str) -> ConfigError {
    ConfigError::invalid(section, "section missing: give it in --config or through flags")
}

fn execute(cli: Cli) -> Result<(Outputs, PathBuf), (u8, String)> {
    let cfg_err =
        |e: ConfigError| (EXIT_CONFIG, format!("config error at {e}").replace('\n', " ").trim_end().to_owned());
    let run_err = |e: anyhow::Error| (EXIT_RUNTIME, format!("{e:#}"));
    match cli.command {
        Command::Run(a) => {
            let l = load(&a.common, |doc, cwd| apply_env_args(section(doc, "run"), &a.env, cwd)).map_err(cfg_err)?;
            let run = l.config.run.as_ref().ok_or_else(|| cfg_err(missing("run")))?;
            let out = cmd_run(run, &l.base).map_err(run_err)?;
            Ok((out, out_dir(&a.common, &l.config, &l.base)))
        }
        Command::Sweep(a) => {
            let l = load(&a.common, |doc, cwd| {
                let sec = section(doc, "sweep");
                apply_env_args(sec, &a.env, cwd)?;
                if !a.accuracy.is_empty() {
                    let mut tables = Vec::new();
                    for s in &a.accuracy {
                        let v = s
                            .split('/')
                            .map(|x| x.trim().parse::<f64>())
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|e| ConfigError::invalid("sweep.accuracy", e.to_string()))?;
                        tables.push(floats(&v));
                    }
                    sec.insert("accuracy".into(), Value::Array(tables));
                }
                Ok(())
            })
            .map_err(cfg_err)?;
            let sweep = l.config.sweep.as_ref().ok_or_else(|| cfg_err(missing("sweep")))?;
            let out = cmd_sweep(sweep, &l.base).map_err(run_err)?;
            Ok((out, out_dir(&a.common, &l.config, &l.base)))
        }
        Command::Theory(a) => {
            let l = load(&a.common, |doc, _| {
                let sec = section(doc, "theory");
                if a.acceptance_grid {
                    let grid = Value::try_from(specact::analytics::Grid::acceptance())
                        .map_err(|e| ConfigError::invalid("theory.grid", e.to_string()))?;
                    sec.insert("grid".into(), grid);
                }
                if a.horizons.is_some() || a.p.is_some() || a.rates.is_some() {
                    let grid = section(sec, "grid");
                    if let Some(h) = &a.horizons {
                        grid.insert("horizons".into(), ints(h));
                    }
                    if let Some(p) = &a.p {
                        grid.insert("p".into(), floats(p));
                    }
                    if let Some(r) = &a.rates {
                        let mut pairs = Vec::new();
                        for s in r {
                            let (x, y) = pair(s, "theory.grid.rates")?;
                            let f = |v: &str| {
                                v.parse::<f64>().map_err(|e| ConfigError::invalid("theory.grid.rates", e.to_string()))
                            };
                            pairs.push(floats(&[f(&x)?, f(&y)?]));
                        }
                        grid.insert("rates".into(), Value::Array(pairs));
                    }
                }
                if let Some(t) = a.trials {
                    sec.insert("trials".into(), Value::Integer(t));
                }
                if let Some(s) = a.seed {
                    sec.insert("seed".into(), Value::Integer(s));
                }
                if let Some(s) = &a.semantics {
                    sec.insert("semantics".into(), strs(s));
                }
                Ok(())
            })
            .map_err(cfg_err)?;
            let theory = l.config.theory.as_ref().ok_or_else(|| cfg_err(missing("theory")))?;
            let out = cmd_theory(theory).map_err(run_err)?;
            Ok((out, out_dir(&a.common, &l.config, &l.base)))
        }
        Command::Tune(a) => {
            let l = load(&a.common, |doc, _| {
                let sec = section(doc, "tune");
                if let Some(s) = &a.seeds {
                    sec.insert("seeds".into(), ints(s));
                }
                if let Some(m) = &a.modes {
                    sec.insert("modes".into(), strs(m));
                }
                if let Some(x) = a.speculator_only_start {
                    sec.insert("speculator_only_start".into(), Value::Float(x));
                }
                let params = section(sec, "params");
                if let Some(t) = a.ticks {
                    params.insert("ticks".into(), Value::Integer(t));
                }
                if let Some(x) = a.start_x {
                    params.insert("start_x".into(), Value::Float(x));
                }
                if let Some(n) = a.noise {
                    section(params, "surface").insert("noise".into(), Value::Float(n));
                }
                if let Some(t) = a.perturb_after {
                    let mut p = Table::new();
                    p.insert("after_tick".into(), Value::Integer(t));
                    p.insert("x".into(), Value::Float(a.perturb_x));
                    p.insert("window".into(), Value::Integer(a.perturb_window));
                    params.insert("perturbation".into(), Value::Table(p));
                }
                Ok(())
            })
            .map_err(cfg_err)?;
            let tune = l.config.tune.as_ref().ok_or_else(|| cfg_err(missing("tune")))?;
            let out = cmd_tune(tune).map_err(run_err)?;
            Ok((out, out_dir(&a.common, &l.config, &l.base)))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Err((code, msg)) => {
            eprintln!("specact: {msg}");
            ExitCode::from(code)
        }
        Ok((out, dir)) => {
            if let Err(e) = out.write_to(&dir) {
                eprintln!("specact: {e:#}");
                return ExitCode::from(EXIT_RUNTIME);
            }
            for line in &out.summary {
                println!("{line}");
            }
            println!("wrote {} files to {}", out.files.len(), dir.display());
            if out.violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                for v in &out.violations {
                    eprintln!("specact: losslessness violation: {v}");
                }
                ExitCode::from(EXIT_VIOLATION)
            }
        }
    }
}
