use std::path::PathBuf;
use std::process::{Command, Output};

fn spec(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name)
}

fn instream(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_instream"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_on(cmd: &str, file: &str, flags: &[&str]) -> Output {
    let path = spec(file);
    let mut args = vec![cmd, path.to_str().unwrap()];
    args.extend_from_slice(flags);
    instream(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn check_branch_thread_is_equivalent() {
    let o = run_on("check", "branch.bta", &["--maxlen", "1", "--mode", "safe"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("equivalent"));
}

#[test]
fn strict_exploration_prints_deadlocks() {
    let o = run_on("explore", "branch.bta", &["--maxlen", "0", "--mode", "strict"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("deadlocks: ")).unwrap();
    let n: usize = line["deadlocks: ".len()..].parse().unwrap();
    assert!(n >= 1, "{text}");

    let o = run_on("explore", "branch.bta", &["--maxlen", "0", "--mode", "strict", "--fail-on-deadlock"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run_on("explore", "branch.bta", &["--maxlen", "0", "--fail-on-deadlock"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("deadlocks: 0\n"));
}

#[test]
fn unknown_variable_is_a_usage_error() {
    let o = run_on("validate", "bad.bta", &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unknown variable W at line 1"), "{err}");
    assert_eq!(run_on("validate", "branch.bta", &[]).status.code(), Some(0));
}

#[test]
fn bad_flags_and_files_exit_two() {
    assert_eq!(run_on("check", "branch.bta", &["--bogus"]).status.code(), Some(2));
    assert_eq!(run_on("check", "branch.bta", &["--mode", "lenient"]).status.code(), Some(2));
    assert_eq!(run_on("check", "branch.bta", &["--rhs-abstract", "jact,nope"]).status.code(), Some(2));
    assert_eq!(run_on("check", "missing.bta", &[]).status.code(), Some(2));
    assert_eq!(instream(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn stp_visible_on_protocol_side_is_not_equivalent() {
    let o = run_on("check", "stop.bta", &["--rhs-abstract", "jact", "--json"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["equivalent"], false);
    assert!(v["counterexample"].is_array());
    assert_eq!(run_on("check", "stop.bta", &[]).status.code(), Some(0));
}

#[test]
fn outputs_are_deterministic() {
    let cases: Vec<(&str, &str, Vec<&str>)> = vec![
        ("extract", "branch.bta", vec![]),
        ("compose", "branch.bta", vec!["--maxlen", "2"]),
        ("explore", "skewed.bta", vec!["--maxlen", "2", "--strategy", "prob95"]),
        ("check", "skewed.bta", vec!["--maxlen", "2", "--json"]),
        ("simulate", "skewed.bta", vec!["--maxlen", "0,1,2", "--env", "prob", "--seed", "3,4"]),
    ];
    for (cmd, file, flags) in cases {
        let a = run_on(cmd, file, &flags);
        let b = run_on(cmd, file, &flags);
        assert_eq!(a.status.code(), Some(0), "{cmd}");
        assert_eq!(a.stdout, b.stdout, "{cmd}");
    }
}

#[test]
fn lts_json_round_trips() {
    let o = run_on("compose", "branch.bta", &[]);
    let lts: instream_core::lts::LtsJson = serde_json::from_slice(&o.stdout).unwrap();
    let back = instream_core::Lts::from_json(&lts).unwrap();
    assert_eq!(back.to_json(), lts);
}

#[test]
fn simulate_writes_csv_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let log = dir.path().join("events.log");
    let o = run_on(
        "simulate",
        "linear8.bta",
        &[
            "--maxlen",
            "2",
            "--strategy",
            "breadth+wildcard",
            "--csv",
            csv.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("thread,maxlen,strategy,seed,env,busy,idle,total,utilization,msgs,replies,discarded")
    );
    assert!(lines.next().unwrap().starts_with("linear8,2,breadth+wildcard,0,all-true,8,"));
    assert!(!std::fs::read_to_string(&log).unwrap().is_empty());

    // a log needs a single run
    let o = run_on("simulate", "linear8.bta", &["--maxlen", "0,2", "--log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
