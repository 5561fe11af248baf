use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn specact(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_specact"));
    cmd.current_dir(dir).args(args).env_remove("SPECACT_OUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.deserialize().map(|x| x.unwrap()).collect()
}

/// Every file under `dir`, by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const RUN_P0: &str = r#"
schema = 1
[run]
horizon = 30
seeds = [1, 2, 3]
strategies = [{ kind = "top_k", k = 1 }, { kind = "top_k", k = 3 }]
[run.env]
kind = "turn_game"
params = { speculator = { accuracy = [0.0] } }
"#;

#[test]
fn hopeless_speculator_run_saves_nothing_and_exits_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.toml", RUN_P0);
    let out = specact(dir.path(), &["run", "--config", cfg.to_str().unwrap(), "--out", "o"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = rows(&dir.path().join("o/metrics.csv"));
    let saved: Vec<_> = metrics.iter().filter(|r| r["metric"] == "time_saved").collect();
    assert_eq!(saved.len(), 2 * 3 + 2);
    assert!(saved.iter().all(|r| r["value"].parse::<f64>().unwrap() == 0.0));
    assert!(metrics.iter().all(|r| r["params"].contains("seed=")));
    assert!(dir.path().join("o/traces/run-turn_game-top_k-k3-s2.jsonl").is_file());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let corrupt = write(dir.path(), "bad.toml", "schema = 1\n[run\nhorizon = 3");
    let out = specact(dir.path(), &["run", "--config", corrupt.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));

    let no_seed = write(dir.path(), "noseed.toml", &RUN_P0.replace("seeds = [1, 2, 3]\n", ""));
    let out = specact(dir.path(), &["run", "--config", no_seed.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds"));

    let typo = write(dir.path(), "typo.toml", &RUN_P0.replace("horizon = 30", "horizon = 30\nhorizn = 2"));
    let out = specact(dir.path(), &["run", "--config", typo.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizn"));
}

#[test]
fn theory_single_point_and_zero_accuracy_rows() {
    let dir = TempDir::new().unwrap();
    let out = specact(
        dir.path(),
        &[
            "theory",
            "--horizons",
            "2,7",
            "--p",
            "0,1",
            "--rates",
            "1:1",
            "--trials",
            "2000",
            "--seed",
            "5",
            "--out",
            "t",
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = rows(&dir.path().join("t/theory.csv"));
    assert_eq!(table.len(), 2 * 2 * 2);
    let point = table.iter().find(|r| r["T"] == "2" && r["p"] == "1" && r["semantics"] == "paper_block").unwrap();
    assert_eq!(point["closed_form"].parse::<f64>().unwrap(), 0.75);
    for r in table.iter().filter(|r| r["p"] == "0") {
        for col in ["closed_form", "limit", "empirical"] {
            assert_eq!(r[col].parse::<f64>().unwrap(), 1.0, "{col}");
        }
    }
}

const TUNE: &str = r#"
schema = 1
[tune]
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19]
[tune.params.perturbation]
after_tick = 200
x = 10.0
window = 15
"#;

#[test]
fn tune_reports_convergence_and_recovery() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "tune.toml", TUNE);
    let out = specact(dir.path(), &["tune", "--config", cfg.to_str().unwrap(), "--out", "u"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = rows(&dir.path().join("u/tune_summary.csv"));
    assert_eq!(summary.len(), 60);
    assert!(summary.iter().all(|r| !r["recovery_mean_latency"].is_empty() && !r["perturbed_at"].is_empty()));
    let tick = |mode: &str, seed: usize| -> (String, f64) {
        let r = summary.iter().find(|r| r["mode"] == mode && r["seed"] == seed.to_string()).unwrap();
        (r["converged_to"].clone(), r["convergence_tick"].parse().unwrap_or(f64::INFINITY))
    };
    for seed in 0..20 {
        let (to, joint) = tick("joint", seed);
        assert_eq!(to, "global");
        let (_, actor) = tick("actor_only", seed);
        assert!(joint < actor, "seed {seed}: {joint} vs {actor}");
    }
    assert!(dir.path().join("u/trajectories/joint-s7.csv").is_file());
}

#[test]
fn noiseless_speculator_only_from_the_global_basin() {
    let dir = TempDir::new().unwrap();
    let out = specact(
        dir.path(),
        &["tune", "--seeds", "1,2,3", "--modes", "speculator_only", "--noise", "0", "--start-x", "0.15", "--out", "s"],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = rows(&dir.path().join("s/tune_summary.csv"));
    assert_eq!(summary.len(), 3);
    assert!(summary.iter().all(|r| r["converged_to"] == "global"), "{summary:?}");
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let run = write(dir.path(), "run.toml", &RUN_P0.replace("accuracy = [0.0]", "accuracy = [0.4, 0.2]"));
    let tune = write(dir.path(), "tune.toml", TUNE);
    let mut snaps = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = format!("o{threads}");
        for (sub, cfg) in [("run", &run), ("tune", &tune)] {
            let out = specact(
                dir.path(),
                &[sub, "--config", cfg.to_str().unwrap(), "--out", &out_dir],
                &[("RAYON_NUM_THREADS", threads)],
            );
            assert!(out.status.success());
        }
        let out = specact(
            dir.path(),
            &[
                "theory",
                "--horizons",
                "5",
                "--p",
                "0.5",
                "--rates",
                "2:1",
                "--trials",
                "9000",
                "--seed",
                "1",
                "--out",
                &out_dir,
            ],
            &[("RAYON_NUM_THREADS", threads)],
        );
        assert!(out.status.success());
        snaps.push(snapshot(&dir.path().join(out_dir)));
    }
    assert!(snaps[0].len() > 10);
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn out_dir_precedence() {
    let dir = TempDir::new().unwrap();
    let text = format!("output = \"from-config\"\n{RUN_P0}");
    let cfg = write(dir.path(), "run.toml", &text);
    let c = cfg.to_str().unwrap();

    assert!(specact(dir.path(), &["run", "--config", c], &[]).status.success());
    assert!(dir.path().join("from-config/metrics.csv").is_file());

    let env_dir = dir.path().join("from-env");
    let env_str = env_dir.to_str().unwrap();
    assert!(specact(dir.path(), &["run", "--config", c], &[("SPECACT_OUT_DIR", env_str)]).status.success());
    assert!(env_dir.join("metrics.csv").is_file());

    let out = specact(dir.path(), &["run", "--config", c, "--out", "from-flag"], &[("SPECACT_OUT_DIR", env_str)]);
    assert!(out.status.success());
    assert!(dir.path().join("from-flag/metrics.csv").is_file());
}

#[test]
fn sweep_labels_each_accuracy_table() {
    let dir = TempDir::new().unwrap();
    let text = r#"
schema = 1
[sweep]
horizon = 20
seeds = [1, 2]
strategies = [{ kind = "top_k", k = 2 }]
accuracy = [[0.0], [0.3, 0.2]]
[sweep.env]
kind = "chain_lookup"
"#;
    let cfg = write(dir.path(), "sweep.toml", text);
    let out = specact(dir.path(), &["sweep", "--config", cfg.to_str().unwrap(), "--out", "w"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = rows(&dir.path().join("w/metrics.csv"));
    for label in ["accuracy=0;", "accuracy=0.3/0.2;"] {
        assert!(metrics.iter().any(|r| r["params"].contains(label)), "{label}");
    }
}
