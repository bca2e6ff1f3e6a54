use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios")
}

fn amagf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amagf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn worked() -> String {
    scenarios().join("worked_scenario.json").display().to_string()
}

#[test]
fn run_exports_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let csv = dir.path().join("run.csv");
    let o = amagf(&["run", &worked(), "--log", log.to_str().unwrap(), "--export-csv", csv.to_str().unwrap(), "--profiles", "0,28,45"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("t=28   CQS 0.580 Restricted"), "{out}");
    assert!(out.contains("expectations: 40/40 ok"), "{out}");
    assert!(out.contains("profile t=45"));
    assert!(fs::read_to_string(&csv).unwrap().starts_with("t,n1,n2,n3,n4,n5,n6,cqs,level\n"));

    let o = amagf(&["replay", log.to_str().unwrap(), "--against", &worked()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("byte-identical"));

    let o = amagf(&["pigr", log.to_str().unwrap(), "--window", "23..45"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("feed-7"));
    let o = amagf(&["pigr", log.to_str().unwrap(), "--window", "0..10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not required"));

    // a snapshot whose level disagrees with its CQS fails the audit
    let tampered = fs::read_to_string(&log).unwrap().replacen("\"level\":\"Restricted\"", "\"level\":\"Normal\"", 1);
    fs::write(&log, tampered).unwrap();
    let o = amagf(&["replay", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("violation"));
}

#[test]
fn golden_mismatch_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let mut script: serde_json::Value = serde_json::from_str(&fs::read_to_string(worked()).unwrap()).unwrap();
    script["expect"][2]["cqs"] = serde_json::json!(0.5);
    let path = dir.path().join("wrong.json");
    fs::write(&path, script.to_string()).unwrap();
    let o = amagf(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("mismatch t=28 cqs"), "{}", stdout(&o));
}

#[test]
fn validate_reports_problems() {
    assert!(amagf(&["validate", &worked()]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"name":"bad","duration":5,"config":{"operator_assessments":{"a":0.5}},"agents":[{"id":"u1"},{"id":"u1"}],
           "timeline":[{"at":4,"kind":"pin","metric":"cir","value":0.5},{"at":2,"kind":"pin","metric":"cir","value":2.0}]}"#,
    )
    .unwrap();
    let o = amagf(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().count() >= 2, "{}", stdout(&o));

    fs::write(&path, r#"{"name":"bad","duration":"soon","agents":[]}"#).unwrap();
    let o = amagf(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duration"));
}

#[test]
fn certification_verdicts_set_exit_code() {
    let iat = scenarios().join("iat_suite.json");
    let o = amagf(&["certify", "iat", iat.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));

    let cec = scenarios().join("cec_suite.json");
    let o = amagf(&["certify", "cec", cec.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["classes"]["large"]["pass"], false);
    assert_eq!(report["classes"]["moderate"]["pass"], true);
}
