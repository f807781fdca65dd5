use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reward-lens"));
    cmd.env_remove("REWARD_LENS_DATA");
    cmd
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/scenarios").join(name)
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn oracle_then_counterfactual() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["oracle", "--kind", "quirk", "--out", "q.json"]);
    assert!(out.status.success());
    let id = String::from_utf8(out.stdout).unwrap().trim().to_string();
    assert_eq!(id.len(), 16);

    for (file, want, verdict) in [
        ("goal_removed.json", 1.0, "pass"),
        ("second_goal.json", 0.0, "pass"),
        ("many_goals.json", -8.0, "pass"),
    ] {
        let path = scenario(file);
        let out = run_in(dir.path(), &["counterfactual", "--model", "q.json", "--scenario", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let report = stdout_json(&out);
        assert_eq!(report["counterfactual_reward"].as_f64(), Some(want), "{file}");
        assert_eq!(report["verdict"], verdict);
        assert_eq!(report["checkpoint"], id.as_str());
    }
}

#[test]
fn missing_training_data_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["train", "--data", "missing.jsonl", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["teleport"][..],
        &["oracle", "--kind", "quirk", "--out", "q.json", "--bogus"],
        &["oracle", "--kind", "psychic", "--out", "q.json"],
        &["gen-data", "--env", "coinflip", "--episodes", "0", "--out", "d.jsonl"],
        &["plan", "--env", "coinflip", "--true-reward", "--gamma", "1.5", "--out", "p.json"],
    ] {
        let out = run_in(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let help = run_in(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("saliency"));
}

#[test]
fn corrupt_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"format\":\"something-else\"}").unwrap();
    let path = scenario("goal_removed.json");
    let out = run_in(dir.path(), &["counterfactual", "--model", "bad.json", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

fn write_transition(dir: &Path) {
    let out = run_in(dir, &["gen-data", "--env", "twogoals", "--episodes", "1", "--seed", "3", "--out", "d.jsonl"]);
    assert!(out.status.success());
    let line = std::fs::read_to_string(dir.join("d.jsonl")).unwrap();
    std::fs::write(dir.join("t.json"), line.lines().next().unwrap()).unwrap();
}

#[test]
fn saliency_grad_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    write_transition(dir.path());
    assert!(run_in(dir.path(), &["oracle", "--kind", "quirk", "--out", "q.json"]).status.success());
    let out = run_in(
        dir.path(),
        &["saliency", "grad", "--model", "q.json", "--transition", "t.json", "--out-prefix", "sal"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = std::fs::read_to_string(dir.path().join("sal_s.pgm")).unwrap();
    let sp = std::fs::read_to_string(dir.path().join("sal_sprime.pgm")).unwrap();
    assert!(s.starts_with("P2\n11 11\n255\n") && sp.starts_with("P2\n11 11\n255\n"));
    // Quirk saliency on s is zero everywhere; s' peaks at the visible goal.
    assert!(s.lines().skip(3).flat_map(|l| l.split(' ')).all(|v| v == "0"));
    assert!(sp.contains("255"));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sal.json")).unwrap()).unwrap();
    assert_eq!(json["method"], "gradient");
    assert_eq!(json["mass_ratio"].as_f64(), Some(1.0));
    assert_eq!(json["map_s"].as_array().unwrap().len(), 11);
}

#[test]
fn saliency_occlude_accepts_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write_transition(dir.path());
    assert!(run_in(dir.path(), &["oracle", "--kind", "score", "--out", "s.json"]).status.success());
    let out = run_in(
        dir.path(),
        &[
            "saliency", "occlude", "--model", "s.json", "--transition", "t.json", "--out-prefix", "occ",
            "--sigma-mask", "0.5", "--metric", "squared",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("occ.json")).unwrap()).unwrap();
    assert_eq!(json["method"], "occlusion");
    let bad = run_in(
        dir.path(),
        &["saliency", "occlude", "--model", "s.json", "--transition", "t.json", "--out-prefix", "x", "--stride", "0"],
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn data_root_prefixes_relative_paths() {
    let root = tempfile::tempdir().unwrap();
    let cwd = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(cwd.path())
        .env("REWARD_LENS_DATA", root.path())
        .args(["oracle", "--kind", "score", "--out", "score.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.path().join("score.json").exists());
    assert!(!cwd.path().join("score.json").exists());
}

#[test]
fn train_plan_eval_transfer_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let out = run_in(d, args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["gen-data", "--env", "coinflip", "--episodes", "60", "--seed", "1", "--out", "d.jsonl"]);
    let trained = stdout_json(&ok(&[
        "train", "--data", "d.jsonl", "--out", "m.json", "--epochs", "2", "--hidden", "16,8", "--report", "r.json",
    ]));
    assert!(trained["validation_mse"].as_f64().unwrap().is_finite());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["epoch_train_mse"].as_array().unwrap().len(), 2);

    ok(&["oracle", "--kind", "quirk", "--out", "q.json"]);
    let plan = stdout_json(&ok(&["plan", "--env", "twogoals", "--model", "q.json", "--out", "p.json"]));
    assert_eq!(plan["states"], 121);
    let stats = stdout_json(&ok(&["eval", "--policy", "p.json", "--episodes", "100"]));
    assert_eq!(stats["mean"].as_f64(), Some(1.0));
    let random = stdout_json(&ok(&["eval", "--random", "--env", "twogoals", "--episodes", "100"]));
    assert!(random["mean"].as_f64().unwrap() < 1.0);

    let scaled = stdout_json(&ok(&["plan", "--env", "twogoals", "--model", "q.json", "--scale", "10", "--out", "p10.json"]));
    assert!(scaled["reward_source"].as_str().unwrap().starts_with("10*"));
    let p1: Value = serde_json::from_str(&std::fs::read_to_string(d.join("p.json")).unwrap()).unwrap();
    let p10: Value = serde_json::from_str(&std::fs::read_to_string(d.join("p10.json")).unwrap()).unwrap();
    assert_eq!(p1["actions"], p10["actions"]);

    let transfer = stdout_json(&ok(&[
        "transfer", "--model", "q.json", "--train-env", "coinflip", "--eval-env", "twogoals", "--stat-episodes", "20",
        "--eval-episodes", "50",
    ]));
    assert_eq!(transfer["train"]["mean_goal_output"].as_f64(), Some(1.0));
    assert_eq!(transfer["eval"]["mean_goal_output"].as_f64(), Some(0.0));

    let csv = String::from_utf8(ok(&["timeseries", "--model", "q.json", "--env", "coinflip", "--seed", "2"]).stdout).unwrap();
    assert!(csv.starts_with("step,predicted,true\n"));
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap(), cols[2].parse::<f64>().unwrap());
    }
}
