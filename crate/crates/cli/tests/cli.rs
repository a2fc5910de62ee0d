use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn envaware(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_envaware"));
    cmd.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("ENVAWARE_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str) {
    ok(envaware(&[
        "gen-task", "--concepts", "3", "--dim", "6", "--relevant", "2", "--phases", "2",
        "--instances-per-phase", "8", "--seed", seed, "--out", p(dir),
    ])
    .output()
    .unwrap());
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir)
        .into_iter()
        .map(|f| (f.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&f).unwrap()))
        .collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

/// Metadata files echo `--out`, which differs between otherwise identical runs.
fn same_outputs(a: &[(String, Vec<u8>)], b: &[(String, Vec<u8>)]) -> bool {
    let data = |files: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        files.iter().filter(|(n, _)| n != "run.json" && n != "gen-task.json").cloned().collect()
    };
    data(a) == data(b)
}

#[test]
fn gen_task_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    gen(&tmp.path().join("a"), "5");
    gen(&tmp.path().join("b"), "5");
    gen(&tmp.path().join("c"), "6");
    let a = read_all(&tmp.path().join("a"));
    assert!(same_outputs(&a, &read_all(&tmp.path().join("b"))));
    assert!(!same_outputs(&a, &read_all(&tmp.path().join("c"))));
}

#[test]
fn gen_task_refuses_to_overwrite_without_force() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("t");
    gen(&dir, "1");
    let out = envaware(&[
        "gen-task", "--concepts", "3", "--dim", "6", "--relevant", "2", "--phases", "2", "--seed", "2",
        "--out", p(&dir),
    ])
    .output()
    .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    ok(envaware(&[
        "gen-task", "--concepts", "3", "--dim", "6", "--relevant", "2", "--phases", "2", "--seed", "2",
        "--out", p(&dir), "--force",
    ])
    .output()
    .unwrap());
}

#[test]
fn missing_required_flag_exits_nonzero() {
    let out = envaware(&["gen-task", "--concepts", "3"]).output().unwrap();
    assert!(!out.status.success());
    let out = envaware(&["train-irl", "--task", "x", "--out", "y"]).output().unwrap();
    assert!(!out.status.success());
}

fn run_small(task: &Path, out: &Path, strategies: &str) -> String {
    ok(envaware(&[
        "run", "--task", p(task), "--budgets", "4", "--times", "8", "--change-period", "3", "--seeds", "3",
        "--seed", "9", "--strategies", strategies, "--out", p(out),
    ])
    .output()
    .unwrap())
}

#[test]
fn run_writes_outputs_and_replays() {
    let tmp = TempDir::new().unwrap();
    let task = tmp.path().join("task");
    gen(&task, "3");
    let stdout = run_small(&task, &tmp.path().join("r1"), "all");
    assert!(stdout.contains("dt-task-env"));
    run_small(&task, &tmp.path().join("r2"), "all");
    let r1 = read_all(&tmp.path().join("r1"));
    assert!(same_outputs(&r1, &read_all(&tmp.path().join("r2"))));
    let names: Vec<&str> = r1.iter().map(|(n, _)| n.as_str()).collect();
    for want in ["b4_t8/curves.csv", "b4_t8/comparison.csv", "b4_t8/logs/u-sampling.jsonl", "run.json"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    let log = std::fs::read_to_string(tmp.path().join("r1/b4_t8/logs/dt-task.jsonl")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains("\"featureCounts\"")).count(), 3);
}

#[test]
fn single_strategy_has_no_comparison() {
    let tmp = TempDir::new().unwrap();
    let task = tmp.path().join("task");
    gen(&task, "3");
    run_small(&task, &tmp.path().join("r"), "dt-task");
    assert!(tmp.path().join("r/b4_t8/curves.csv").exists());
    assert!(!tmp.path().join("r/b4_t8/comparison.csv").exists());
}

#[test]
fn compare_needs_two_strategies() {
    let tmp = TempDir::new().unwrap();
    let task = tmp.path().join("task");
    gen(&task, "3");
    let out = envaware(&["compare", "--task", p(&task), "--strategies", "dt-task"]).output().unwrap();
    assert!(!out.status.success());
    let stdout = ok(envaware(&[
        "compare", "--task", p(&task), "--strategies", "u-sampling,dt-task", "--budget", "3", "--time", "6",
        "--seeds", "3",
    ])
    .output()
    .unwrap());
    assert!(stdout.contains("u-sampling") && stdout.contains("budget 3, time 6"));
}

#[test]
fn train_irl_with_scripted_expert() {
    let tmp = TempDir::new().unwrap();
    let task = tmp.path().join("task");
    gen(&task, "4");
    let weights = tmp.path().join("w.json");
    let demos = tmp.path().join("demos.jsonl");
    ok(envaware(&[
        "train-irl", "--task", p(&task), "--synthetic-expert", "--expert-demos", "2", "--budget", "4", "--time",
        "8", "--change-period", "3", "--max-iters", "3", "--rollouts", "2", "--validation-episodes", "1",
        "--save-demos", p(&demos), "--out", p(&weights),
    ])
    .output()
    .unwrap());
    let file: serde_json::Value = serde_json::from_slice(&std::fs::read(&weights).unwrap()).unwrap();
    assert!(file.is_object());
    assert!(tmp.path().join("w.iterations.jsonl").exists());
    assert!(tmp.path().join("w.meta.json").exists());

    // Saved demonstrations can be replayed as input.
    let again = tmp.path().join("w2.json");
    ok(envaware(&[
        "train-irl", "--task", p(&task), "--demos", p(&demos), "--budget", "4", "--time", "8",
        "--change-period", "3", "--max-iters", "2", "--rollouts", "2", "--validation-episodes", "1",
        "--out", p(&again),
    ])
    .output()
    .unwrap());

    let out = envaware(&[
        "run", "--task", p(&task), "--weights", p(&weights), "--budgets", "4", "--times", "8", "--seeds", "2",
        "--strategies", "dt-task-env", "--out", p(&tmp.path().join("r")),
    ])
    .output()
    .unwrap();
    ok(out);
}

#[test]
fn train_irl_reports_missing_demos() {
    let tmp = TempDir::new().unwrap();
    let task = tmp.path().join("task");
    gen(&task, "4");
    let out = envaware(&[
        "train-irl", "--task", p(&task), "--demos", p(&tmp.path().join("nope.jsonl")), "--out",
        p(&tmp.path().join("w.json")),
    ])
    .output()
    .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
}

#[test]
fn config_file_sits_between_flags_and_env() {
    let tmp = TempDir::new().unwrap();
    let task = tmp.path().join("task");
    gen(&task, "3");
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        format!(
            "seeds = 99\nstrategies = [\"u-sampling\", \"dt-task\"]\n\n[compare]\ntask = \"{}\"\nseeds = 2\nbudget = 3\n",
            p(&task)
        ),
    )
    .unwrap();
    // Section beats top level, env loses to the file, the command line wins.
    let stdout = ok(envaware(&["compare", "--config", p(&cfg), "--time", "5"])
        .env("ENVAWARE_BUDGET", "7")
        .output()
        .unwrap());
    assert!(stdout.contains("budget 3, time 5"), "{stdout}");
    let stdout = ok(envaware(&["compare", "--config", p(&cfg), "--time", "5", "--budget", "2"]).output().unwrap());
    assert!(stdout.contains("budget 2, time 5"), "{stdout}");
}

#[test]
fn env_vars_supply_defaults() {
    let tmp = TempDir::new().unwrap();
    let task = tmp.path().join("task");
    gen(&task, "3");
    let stdout = ok(envaware(&["compare", "--strategies", "u-sampling,dt-iros", "--seeds", "2"])
        .env("ENVAWARE_TASK", p(&task))
        .env("ENVAWARE_BUDGET", "2")
        .env("ENVAWARE_TIME", "4")
        .output()
        .unwrap());
    assert!(stdout.contains("budget 2, time 4"), "{stdout}");
}

#[test]
fn bad_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "no_such_option = 1\n").unwrap();
    let out = envaware(&["compare", "--config", p(&cfg), "--task", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
