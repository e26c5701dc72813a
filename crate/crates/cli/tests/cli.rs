use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cavmech"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cavmech")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let scenario = fixture("worked_resource.json");
    let o = run(&["solve", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(&out);
    let nu = report["solver"]["nu"]["1"].as_f64().unwrap();
    assert!((nu - 5.0 / 12.0).abs() < 1e-6);
    assert_eq!(report["exit_code"], 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("kkt_certificate"));
}

#[test]
fn paper_literal_verify_exits_flagged() {
    let scenario = fixture("paper_literal_shared_edge.json");
    let o = run(&["verify", "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FLAGGED"));
}

#[test]
fn infeasible_scenario_exits_failed() {
    let scenario = fixture("infeasible.json");
    assert_eq!(code(&run(&["solve", "--scenario", scenario.to_str().unwrap()])), 2);
}

#[test]
fn input_errors_exit_four() {
    assert_eq!(code(&run(&["solve", "--scenario", "/definitely/not/here.json"])), 4);
    assert_eq!(code(&run(&["solve", "--no-such-flag"])), 4);
    assert_eq!(code(&run(&["no-such-command"])), 4);

    let scenario = fixture("worked_resource.json");
    let o = run(&["solve", "--scenario", scenario.to_str().unwrap(), "--orientation", "paper_literal"]);
    assert_eq!(code(&o), 4);

    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ \"network\": ").unwrap();
    assert_eq!(code(&run(&["solve", "--scenario", broken.to_str().unwrap()])), 4);

    let text = fs::read_to_string(&scenario).unwrap().replace("\"capacity\": 10.0", "\"capacity\": -1.0");
    let negative = dir.path().join("negative.json");
    fs::write(&negative, text).unwrap();
    let o = run(&["solve", "--scenario", negative.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("edge 1"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn generate_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let o = run(&["generate", "--seed", "42", "--all-shared", "--out", path.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let o = run(&["solve", "--scenario", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn mechanism_eval_on_profile_file() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profile.json");
    let nu = 5.0 / 12.0;
    let body = serde_json::json!({
        "messages": {
            "1": { "demanded_times": { "1": 3.8 }, "bid_prices": { "1": nu } },
            "2": { "demanded_times": { "1": 6.2 }, "bid_prices": { "1": nu } }
        }
    });
    fs::write(&profile, body.to_string()).unwrap();
    let out = dir.path().join("eval.json");
    let scenario = fixture("worked_resource.json");
    let o = run(&[
        "mechanism-eval",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        profile.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(&out);
    let p1 = report["outcome"]["payments"]["1"].as_f64().unwrap();
    let p2 = report["outcome"]["payments"]["2"].as_f64().unwrap();
    assert!((p1 + 0.5).abs() < 1e-5 && (p2 - 0.5).abs() < 1e-5, "{p1} {p2}");

    // A profile that misses a traveler is an input error.
    let partial = serde_json::json!({
        "messages": { "1": { "demanded_times": { "1": 3.8 }, "bid_prices": { "1": nu } } }
    });
    fs::write(&profile, partial.to_string()).unwrap();
    let o = run(&["mechanism-eval", "--scenario", scenario.to_str().unwrap(), profile.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
}

#[test]
fn full_suite_writes_trajectory_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture("paper_literal_shared_edge.json");
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}.json"));
        let csv = dir.path().join(format!("t{k}.csv"));
        let o = run(&[
            "full",
            "--scenario",
            scenario.to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
            "--trajectory",
            csv.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 3);
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("iteration,traveler,edge,demanded,bid,utility,nu_source"));
        let mut report = json(&out);
        report.as_object_mut().unwrap().remove("timing");
        reports.push((report, text));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn epsilon_flag_reaches_the_report() {
    let scenario = fixture("worked_resource.json");
    let o = run(&["find-ne", "--scenario", scenario.to_str().unwrap(), "--epsilon", "0.5", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["ne_reports"][0]["epsilon"], 0.5);
    assert_eq!(code(&run(&["find-ne", "--scenario", scenario.to_str().unwrap(), "--epsilon", "-1"])), 4);
}
