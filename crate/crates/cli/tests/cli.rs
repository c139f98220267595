use std::fs;
use std::process::{Command, Output};

fn anondesa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anondesa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn round_robin_run_passes_every_check() {
    let out = anondesa(&[
        "run",
        "--n",
        "2",
        "--m",
        "3",
        "--variant",
        "v1",
        "--scheduler",
        "rr",
        "--checks",
        "all",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS safety"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn infeasible_register_count_is_a_config_error() {
    let out = anondesa(&["run", "--n", "2", "--m", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gcd(2,4)=2"));

    let out = anondesa(&[
        "run",
        "--n",
        "2",
        "--m",
        "4",
        "--allow-infeasible",
        "--json",
    ]);
    assert_eq!(json(&out)["outcome"]["status"], "completed");
}

#[test]
fn second_variant_run_with_json_report() {
    let out = anondesa(&[
        "run",
        "--n",
        "2",
        "--m",
        "3",
        "--variant",
        "v2",
        "--v2-mode",
        "indexed",
        "--seed",
        "1",
        "--checks",
        "all",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["passed"], true);
    let names: Vec<&str> = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"winner") && names.contains(&"equivariance"));
}

#[test]
fn trace_file_is_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let out = anondesa(&[
        "run",
        "--n",
        "3",
        "--m",
        "5",
        "--seed",
        "4",
        "--checks",
        "safety,counter",
        "--trace-out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&path).unwrap();
    let mut steps = Vec::new();
    for line in text.lines() {
        let e: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "step",
            "ordinal",
            "kind",
            "local_index",
            "physical_index",
            "before",
            "after",
            "pc",
        ] {
            assert!(e.get(key).is_some(), "missing {key}");
        }
        steps.push(e["step"].as_u64().unwrap());
    }
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn perm_file_is_honored_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, "[[2,3,1],[3,1,2]]").unwrap();
    let out = anondesa(&[
        "run",
        "--n",
        "2",
        "--m",
        "3",
        "--perm-file",
        good.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "[[1,1,3],[3,1,2]]").unwrap();
    let out = anondesa(&[
        "run",
        "--n",
        "2",
        "--m",
        "3",
        "--perm-file",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&bad, "[[1,2,3]]").unwrap();
    let out = anondesa(&[
        "run",
        "--n",
        "2",
        "--m",
        "3",
        "--perm-file",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn budget_exhaustion_exits_one() {
    let out = anondesa(&["run", "--n", "2", "--m", "3", "--budget", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_check_and_bad_flags_exit_two() {
    assert_eq!(
        anondesa(&["run", "--n", "2", "--m", "3", "--checks", "nope"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        anondesa(&["run", "--n", "2", "--m", "3", "--variant", "v9"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        anondesa(&["run", "--n", "1", "--m", "3"]).status.code(),
        Some(2)
    );
}

#[test]
fn mutant_run_batch_reports_failures() {
    let out = anondesa(&[
        "run",
        "--n",
        "2",
        "--m",
        "3",
        "--mutate",
        "double-increment",
        "--parallel-seeds",
        "20",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["runs"], 20);
    assert_eq!(v["passed"], 0);

    let out = anondesa(&[
        "run",
        "--n",
        "3",
        "--m",
        "5",
        "--variant",
        "v2",
        "--parallel-seeds",
        "50",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["passed"], 50);
}

#[test]
fn explore_reports_terminals() {
    let out = anondesa(&["explore", "--n", "2", "--m", "3", "--variant", "v1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["terminals"].as_u64().unwrap() > 0);
    assert!(v["states_visited"].as_u64().unwrap() > 0);
    assert_eq!(v["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn explore_mutant_writes_a_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let out = anondesa(&[
        "explore",
        "--n",
        "2",
        "--m",
        "3",
        "--mutate",
        "skip-desa-broadcast",
        "--cex-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    let file = v["counterexample_files"][0].as_str().unwrap();
    let trace = fs::read_to_string(file).unwrap();
    assert!(trace.lines().count() > 0);
    assert!(trace.contains("DESA-07"));
}

#[test]
fn explore_rejects_large_systems() {
    let out = anondesa(&["explore", "--n", "3", "--m", "25"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mtable_examples() {
    let out = anondesa(&["mtable", "--n", "4", "--max", "12", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["members"], serde_json::json!([5, 7, 11]));

    let out = anondesa(&["mtable", "--n", "2", "--next", "3"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "5");

    let out = anondesa(&["mtable", "--n", "2", "--max", "1", "--json"]);
    assert_eq!(json(&out)["members"], serde_json::json!([]));
}
