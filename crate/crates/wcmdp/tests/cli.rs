use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wcmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wcmdp")).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn emitted_example_solves_like_the_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("nonindexable.json");
    assert!(wcmdp(&["example", "nonindexable", "--emit", path(&file)]).status.success());
    let from_file = json(&wcmdp(&["solve", path(&file)]));
    let builtin = json(&wcmdp(&["solve", "nonindexable"]));
    assert_eq!(from_file, builtin);
    assert!((builtin["g_r"].as_f64().unwrap() - 0.3437).abs() < 5e-4);
}

#[test]
fn solve_reports_constraint_slack() {
    let v = json(&wcmdp(&["solve", "taxi"]));
    assert_eq!(v["ineq_slack"].as_array().unwrap().len(), 2);
    assert_eq!(v["y_star"].as_array().unwrap().len(), 8);
    assert!(!v["support"].as_array().unwrap().is_empty());
}

#[test]
fn missing_or_malformed_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(wcmdp(&["solve", path(&missing)]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"num_states": 2, "num_actions": 1, "transitions": [[[0.5, 0.6], [1, 0]]], "rewards": [[0, 0]]}"#,
    )
    .unwrap();
    let out = wcmdp(&["solve", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn infeasible_relaxation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("infeasible.json");
    // The only action uses one unit of a resource capped at one half.
    fs::write(
        &file,
        r#"{"num_states": 2, "num_actions": 1,
            "transitions": [[[0.5, 0.5], [0.5, 0.5]]], "rewards": [[1, 0]],
            "ineq_constraints": {"E": [[[1], [1]]], "f": [0.5]}}"#,
    )
    .unwrap();
    assert_eq!(wcmdp(&["solve", path(&file)]).status.code(), Some(3));
}

#[test]
fn unknown_names_exit_2_and_list_choices() {
    let out = wcmdp(&["reproduce", "fig9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fig2_right"));
    let out = wcmdp(&["example", "nothing"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attractor_fail"));
}

#[test]
fn fluid_check_reports_convergence_from_every_vertex() {
    let v = json(&wcmdp(&["fluid-check", "attractor_fail", "--samples", "20"]));
    assert_eq!(v["condition"]["satisfied"], true);
    let conv = v["convergence"].as_array().unwrap();
    assert_eq!(conv.len(), 3);
    assert!(conv.iter().all(|c| c["steps"].is_u64() && c["beta_monotone"] == true));
    assert_eq!(v["psi"]["variant"], "bandit");
}

#[test]
fn simulate_is_deterministic_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let args = [
        "simulate",
        "nonindexable",
        "--policy",
        "fluid-discrete",
        "--n",
        "50",
        "--t",
        "100",
        "--reps",
        "2",
        "--seed",
        "7",
    ];
    let a = json(&wcmdp(&args));
    let mut with_trace = args.to_vec();
    with_trace.extend(["--trace", path(&trace)]);
    let b = json(&wcmdp(&with_trace));
    assert_eq!(a, b);
    assert_eq!(a["burn_in"], 20);
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,state,frequency"));
    assert_eq!(lines.count(), 101 * 3);
}

#[test]
fn simulate_agent_policies() {
    for policy in ["id", "priority-agent", "priority"] {
        let v = json(&wcmdp(&["simulate", "attractor_fail", "--policy", policy, "--n", "40", "--t", "50"]));
        assert!(v["gain_mean"].as_f64().unwrap() <= v["g_r"].as_f64().unwrap() + 0.1, "{policy}");
    }
    let out = wcmdp(&["simulate", "taxi", "--policy", "id", "--n", "40", "--t", "50"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("exp.json");
    let text = serde_json::json!({
        "model": {"builtin": "attractor_fail"},
        "policies": [{"kind": "fluid_discrete"}, {"kind": "priority", "order": [2, 1, 0], "label": "reversed"}],
        "n": [10, 30],
        "horizon": 60,
        "replications": 2,
        "seed": 1,
        "output_dir": out_dir,
    });
    fs::write(&config, text.to_string()).unwrap();
    let v = json(&wcmdp(&["sweep", path(&config)]));
    assert_eq!(v["cells"].as_array().unwrap().len(), 4);
    assert!(out_dir.join("results.csv").exists());

    fs::write(
        &config,
        r#"{"model": {"builtin": "taxi"}, "policies": [], "n": [10], "horizon": 10,
        "replications": 1, "seed": 0, "output_dir": "x"}"#,
    )
    .unwrap();
    assert_eq!(wcmdp(&["sweep", path(&config)]).status.code(), Some(2));
}

#[test]
fn reproduce_dry_run_prints_preset() {
    let v = json(&wcmdp(&["reproduce", "fig2_left", "--dry-run"]));
    assert_eq!(v["model"]["builtin"], "nonindexable");
    assert_eq!(v["policies"].as_array().unwrap().len(), 3);
}
