use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fairsample(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairsample"))
        .args(args)
        .env_remove("FAIRSAMPLE_SEED")
        .output()
        .unwrap()
}

fn small_spec(dir: &Path) -> String {
    let spec = fairsample::datagen::SbmSpec::two_group(
        [150, 100],
        0.06,
        0.008,
        8,
        fairsample::datagen::TwoGroupSignal {
            label: 0.6,
            group: 0.3,
            noise: 0.5,
        },
        [0.6, 0.4],
        0,
    )
    .with_split(1.0, 100, 0.2, 0.2);
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn synth(dir: &Path) -> String {
    let out = dir.join("graph");
    let spec = small_spec(dir);
    let o = fairsample(&["synth", "--spec", &spec, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = synth(tmp.path());
    let out = tmp.path().join("run");
    let o = fairsample(&[
        "train",
        "--graph",
        &graph,
        "--override",
        "max_epochs=5",
        "--override",
        "injected_edges=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "checkpoint.json", "injection.json", "graph/edges.tsv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let ck = out.join("checkpoint.json");
    let aug = out.join("graph");
    let o = fairsample(&["eval", "--graph", aug.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--part", "test"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval: Value = serde_json::from_slice(&o.stdout).unwrap();
    let report = read_json(&out.join("report.json"));
    assert_eq!(eval["accuracy"], report["test"]["accuracy"]);
    assert_eq!(eval["delta_dp"], report["test"]["delta_dp"]);
}

#[test]
fn seed_comes_from_environment_unless_given() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = synth(tmp.path());
    let run = |name: &str, env_seed: Option<&str>, flag: Option<&str>| -> Value {
        let out = tmp.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fairsample"));
        cmd.args(["train", "--graph", &graph, "--override", "max_epochs=2", "--override", "no_injection=true", "--out"])
            .arg(&out)
            .env_remove("FAIRSAMPLE_SEED");
        if let Some(s) = env_seed {
            cmd.env("FAIRSAMPLE_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        read_json(&out.join("report.json"))
    };
    assert_eq!(run("env", Some("42"), None)["config"]["seed"], 42);
    assert_eq!(run("flag", Some("42"), Some("7"))["config"]["seed"], 7);
    assert_eq!(run("none", None, None)["config"]["seed"], 0);
}

#[test]
fn inject_edges_writes_augmented_graph() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = synth(tmp.path());
    let out = tmp.path().join("aug");
    let o = fairsample(&[
        "inject-edges",
        "--graph",
        &graph,
        "--m",
        "3",
        "--mode",
        "homophilic",
        "--override",
        "max_epochs=5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("injection.json"));
    let added = report["edges"].as_array().unwrap().len();
    let before = std::fs::read_to_string(Path::new(&graph).join("edges.tsv")).unwrap().lines().count();
    let after = std::fs::read_to_string(out.join("edges.tsv")).unwrap().lines().count();
    assert_eq!(after, before + added);

    let none = tmp.path().join("none");
    let o = fairsample(&["inject-edges", "--graph", &graph, "--m", "0", "--out", none.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(none.join("edges.tsv")).unwrap().lines().count(), before);
}

#[test]
fn verify_bound_prints_one_row_per_trial() {
    let o = fairsample(&["verify-bound", "--trials", "25", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "trial,nodes,dim,steps,empirical,bound,holds");
    assert_eq!(lines.len(), 26);
    assert!(lines[1..].iter().all(|l| l.ends_with(",true")));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let o = fairsample(&["train", "--graph", missing.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let graph = synth(tmp.path());
    let o = fairsample(&["train", "--graph", &graph, "--override", "bogus=1", "--out", tmp.path().join("y").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let o = fairsample(&["eval", "--graph", &graph, "--checkpoint", "missing.json", "--part", "sideways"]);
    assert_eq!(o.status.code(), Some(1));

    let o = fairsample(&["no-such-command"]);
    assert!(!o.status.success());
}

#[test]
fn suite_and_report_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let spec: Value = serde_json::from_str(&std::fs::read_to_string(small_spec(tmp.path())).unwrap()).unwrap();
    let grid = serde_json::json!({
        "graph": spec,
        "base": {"max_epochs": 3, "injected_edges": 1},
        "methods": ["fairsample", "graphsage"],
        "grid": {"alpha": [0.0, 1.0]},
        "seeds": [0, 1],
    });
    let grid_path = tmp.path().join("grid.json");
    std::fs::write(&grid_path, grid.to_string()).unwrap();
    let out = tmp.path().join("suite");
    let o = fairsample(&["suite", "--grid", grid_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    // header + (2 fairsample cells + 1 graphsage cell) x 2 seeds
    assert_eq!(runs.lines().count(), 7);

    let table = tmp.path().join("table.csv");
    let o = fairsample(&["report", "--runs", out.join("runs.csv").to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&table).unwrap(), std::fs::read_to_string(out.join("table.csv")).unwrap());
}
