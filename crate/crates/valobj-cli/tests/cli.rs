use std::process::{Command, Output};

fn valobj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valobj"))
        .args(args)
        .output()
        .expect("the binary runs")
}

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("the binary exits")
}

#[test]
fn seeded_punching_run_reports_twelve_acks() {
    let out = valobj(&["run", &fixture("punching.scn"), "--seed", "7"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("12 ops, 12 ACK"));
}

#[test]
fn malformed_scenarios_fail_with_the_offending_line() {
    let out = valobj(&["run", &fixture("bad.scn")]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 4"), "stderr: {}", stderr(&out));
}

#[test]
fn traces_written_by_run_pass_both_checks() {
    let dir = tempfile::tempdir().expect("a scratch directory");
    let path = dir.path().join("punching.trc");
    let path = path.to_str().expect("utf-8 path");
    let out = valobj(&[
        "run",
        &fixture("punching.scn"),
        "--seed",
        "7",
        "--trace-out",
        path,
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let written = std::fs::read_to_string(path).expect("the trace was written");
    assert!(written.starts_with("valobj-v1 trace"));

    for mode in ["regular", "total"] {
        let out = valobj(&["check", path, "--object", "punching", "--mode", mode]);
        assert_eq!(code(&out), 0, "mode {mode} stderr: {}", stderr(&out));
        assert!(stdout(&out).contains(&format!("check {mode}: PASS")));
    }
}

#[test]
fn conflicting_writes_fail_the_check_with_a_witness() {
    let out = valobj(&["check", &fixture("overwrite.trc"), "--object", "versioned"]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains("check regular: FAIL"));
    assert!(text.contains("ordered prefix: [1.1]"));
    assert!(text.contains("2.1"));
}

#[test]
fn unknown_objects_are_usage_errors() {
    let out = valobj(&["check", &fixture("overwrite.trc"), "--object", "nosuch"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown object"));
}

#[test]
fn properties_split_for_the_token_accounts() {
    let out = valobj(&["properties", "crypto:ibalance=2", "--depth", "4"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("persistent validity: PASS"));
    assert!(text.contains("persistent execution: FAIL"));
}

#[test]
fn properties_hold_for_the_punching_clock() {
    let out = valobj(&["properties", "punching", "--depth", "4"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("persistent validity: PASS"));
    assert!(text.contains("persistent execution: PASS"));
}

#[test]
fn properties_fail_fast_for_task_sharing() {
    let out = valobj(&["properties", "doall:T=1", "--depth", "3", "--procs", "3"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("persistent validity: FAIL"));
}

#[test]
fn reduce_refuses_objects_that_keep_validity() {
    let out = valobj(&["reduce", "punching"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("spec has bounded persistent validity"));
}

#[test]
fn reduce_agrees_on_every_schedule_for_racy_objects() {
    for (object, proposals) in [("versioned", "x,y,z"), ("doall:T=1", "a,b,c")] {
        let out = valobj(&["reduce", object, "--proposals", proposals]);
        assert_eq!(code(&out), 0, "{object} stderr: {}", stderr(&out));
        let text = stdout(&out);
        assert!(text.contains("agreement: PASS"), "{object}: {text}");
        assert!(text.contains("validity: PASS"));
        assert!(text.contains("termination: PASS"));
    }
}

#[test]
fn exhaustive_table_rows_sum_to_the_branch_count() {
    let out = valobj(&["run", &fixture("crypto.scn"), "--exhaustive"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let branches: u64 = text
        .lines()
        .find_map(|l| l.strip_prefix("branches: "))
        .expect("a branch count line")
        .parse()
        .expect("a number");
    let summed: u64 = text
        .lines()
        .filter(|l| l.starts_with("  "))
        .map(|l| {
            l.split_whitespace()
                .next()
                .expect("a count column")
                .parse::<u64>()
                .expect("a number")
        })
        .sum();
    assert_eq!(summed, branches);
    assert!(text.contains("ACK"));
}

#[test]
fn json_reports_parse_and_carry_the_verdicts() {
    let out = valobj(&["run", &fixture("crypto.scn"), "--seed", "11", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid JSON");
    assert_eq!(v["ops"], 4);
    assert!(v["results"].as_array().expect("a result list").len() == 4);

    let out = valobj(&["properties", "crypto:ibalance=2", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid JSON");
    assert_eq!(v["persistent_validity"]["holds"], true);
    assert_eq!(v["persistent_execution"]["holds"], false);

    let out = valobj(&["reduce", "versioned", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid JSON");
    assert_eq!(v["agreement"], true);
    assert!(v["branches"].as_u64().expect("a branch count") > 0);

    let out = valobj(&[
        "check",
        &fixture("overwrite.trc"),
        "--object",
        "versioned",
        "--json",
    ]);
    assert_eq!(code(&out), 1);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid JSON");
    assert!(v["report"]["verdict"]["Fail"].is_object());
}

#[test]
fn identical_commands_give_identical_output() {
    let a = valobj(&["run", &fixture("crypto.scn"), "--seed", "11"]);
    let b = valobj(&["run", &fixture("crypto.scn"), "--seed", "11"]);
    assert_eq!(stdout(&a), stdout(&b));
    let a = valobj(&["run", &fixture("crypto.scn"), "--exhaustive"]);
    let b = valobj(&["run", &fixture("crypto.scn"), "--exhaustive"]);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn crash_flags_must_fit_the_fault_budget() {
    let out = valobj(&[
        "run",
        &fixture("punching.scn"),
        "--seed",
        "1",
        "--crash",
        "p1@2",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("f=0"));
}
