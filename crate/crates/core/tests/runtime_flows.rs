use amagf_core::corrective::generate_pigr;
use amagf_core::corrective::pigr::{timeline_is_subsequence, RecommendationKind, RootCause};
use amagf_core::response::{GateReason, ResponseLevel, Verdict};
use amagf_core::scenario::export::{profiles, trajectory_csv};
use amagf_core::scenario::{worked_scenario, Ack, CommandKind, EventBody, EventLog, OperatorCommand, RejectionCode, Runtime, ScenarioScript};
use serde_json::{json, Value};

fn script(value: Value) -> ScenarioScript {
    ScenarioScript::from_json(&value.to_string()).unwrap()
}

fn quiet(duration: u64, extra: Value) -> ScenarioScript {
    let mut base = json!({
        "name": "quiet",
        "duration": duration,
        "config": {
            "sync": {"interval": null},
            "sf_max": 1000.0,
            "operator_assessments": {"route": 0.5},
            "actions": [{"id": "hold", "iota": 0.0}, {"id": "strike", "iota": 1.0}, {"id": "finish", "iota": 0.5}],
        },
        "agents": [{"id": "u1"}, {"id": "u2"}],
    });
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    script(base)
}

fn command(id: &str, kind: CommandKind) -> OperatorCommand {
    OperatorCommand {
        command_id: id.into(),
        kind,
    }
}

#[test]
fn empty_timeline_stays_normal() {
    let rt = Runtime::run(quiet(20, json!({}))).unwrap();
    let snaps: Vec<_> = rt.log().snapshots().collect();
    assert_eq!(snaps.len(), 21);
    assert!(snaps.iter().all(|(_, s)| s.level == ResponseLevel::Normal && s.values[..4] == [1.0; 4] && s.values[5] == 1.0));
    assert!(!rt.log().events().iter().any(|e| matches!(e.body, EventBody::LevelTransition { .. } | EventBody::Alert { .. })));
}

#[test]
fn csv_and_profiles_from_worked_scenario() {
    let rt = Runtime::run(worked_scenario()).unwrap();
    let csv = trajectory_csv(rt.log()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,n1,n2,n3,n4,n5,n6,cqs,level"));
    assert_eq!(lines.clone().count(), 51);
    let row28: Vec<&str> = lines.find(|l| l.starts_with("28,")).unwrap().split(',').collect();
    assert!((row28[3].parse::<f64>().unwrap() - 0.58).abs() < 0.005);
    assert_eq!(row28[8].to_lowercase(), "restricted");

    let p = profiles(rt.log(), &[0, 28, 45, 99]);
    assert_eq!(p.iter().map(|p| p.t).collect::<Vec<_>>(), [0, 28, 45]);
    assert!(p[1].values[2] < p[0].values[2]);
}

#[test]
fn jsonl_roundtrip_and_order_checks() {
    let rt = Runtime::run(worked_scenario()).unwrap();
    let text = rt.log().to_jsonl();
    let back = EventLog::from_jsonl(&text).unwrap();
    assert_eq!(&back, rt.log());
    assert_eq!(back.to_jsonl(), text);

    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(3, 4);
    assert!(EventLog::from_jsonl(&lines.join("\n")).is_err());
    assert!(EventLog::from_jsonl("{\"seq\":0}").is_err());
}

#[test]
fn live_commands_apply_next_tick_once() {
    let mut rt = Runtime::new(quiet(10, json!({}))).unwrap();
    rt.step().unwrap();
    rt.step().unwrap();
    let cmd = command("live-1", CommandKind::IssueProbe { agents: vec!["u1".into()] });
    assert_eq!(rt.submit(cmd.clone()), Ok(Ack::Accepted { apply_at: 2 }));
    assert_eq!(rt.submit(cmd), Ok(Ack::Duplicate { apply_at: 2 }));
    assert!(!rt.log().events().iter().any(|e| matches!(e.body, EventBody::Probe(_))));
    let snap = rt.step().unwrap();
    assert_eq!(snap.tick, 2);
    let probes: Vec<_> = rt.log().events().iter().filter(|e| matches!(e.body, EventBody::Probe(_))).collect();
    assert_eq!(probes.len(), 1);
    assert_eq!(probes[0].t, 2);
    while !rt.is_finished() {
        rt.step().unwrap();
    }
    let late = command("late", CommandKind::IssueProbe { agents: vec![] });
    assert_eq!(rt.submit(late).unwrap_err().code, RejectionCode::Finished);
}

#[test]
fn malformed_and_unknown_commands_rejected() {
    let mut rt = Runtime::new(quiet(5, json!({}))).unwrap();
    let r = rt.submit_json(r#"{"command_id":"x","kind":"issue-probe","agents":"u1"}"#).unwrap_err();
    assert_eq!(r.code, RejectionCode::Malformed);
    let r = rt.submit(command("y", CommandKind::IsolateAgent { agent: "ghost".into() })).unwrap_err();
    assert_eq!(r.code, RejectionCode::UnknownAgent);
    let r = rt.submit(command("z", CommandKind::AuthorizeAction { token: "00".into() })).unwrap_err();
    assert_eq!(r.code, RejectionCode::UnknownToken);
}

#[test]
fn per_action_authorization_flow() {
    // CIR 0.18 against a 0.6 target puts the formation in Minimal
    let s = quiet(
        8,
        json!({
            "agents": [{"id": "u1", "plan": [{"at": 3, "action": "hold"}]}],
            "timeline": [{"at": 1, "kind": "pin", "metric": "cir", "value": 0.18}],
        }),
    );
    let mut rt = Runtime::new(s).unwrap();
    for _ in 0..4 {
        rt.step().unwrap();
    }
    let pending = rt.pending()["u1"].clone();
    assert_eq!(pending.reason, GateReason::PerActionAuthorization);
    assert_eq!(pending.token.len(), 16);
    rt.step().unwrap();
    assert!(rt.pending().contains_key("u1"), "still waiting without authorisation");

    let ack = rt.submit(command("ok-1", CommandKind::AuthorizeAction { token: pending.token.clone() })).unwrap();
    assert_eq!(ack, Ack::Accepted { apply_at: 5 });
    rt.step().unwrap();
    assert!(rt.pending().is_empty());
    let granted = rt.log().events().iter().find(|e| matches!(e.body, EventBody::AuthorizationGranted { .. })).unwrap();
    assert_eq!(granted.t, 5);
    let allowed = rt
        .log()
        .events()
        .iter()
        .find_map(|e| match &e.body {
            EventBody::GateDecision(g) if g.authorized => Some((e.t, g.decision.verdict)),
            _ => None,
        })
        .unwrap();
    assert_eq!(allowed, (5, Verdict::Allow));
}

#[test]
fn budget_authorization_releases_crossing_action() {
    let s = quiet(
        10,
        json!({
            "agents": [{"id": "u1", "plan": [
                {"at": 1, "action": "strike"}, {"at": 2, "action": "strike"}, {"at": 3, "action": "strike"},
                {"at": 4, "action": "strike"}, {"at": 5, "action": "finish"}, {"at": 6, "action": "strike"}
            ]}],
        }),
    );
    let mut rt = Runtime::new(s).unwrap();
    for _ in 0..7 {
        rt.step().unwrap();
    }
    assert_eq!(rt.pending()["u1"].reason, GateReason::BudgetCrossing);
    assert_eq!(rt.agents()["u1"].ledger.consumed(), 4.5);
    rt.submit(command("budget", CommandKind::AuthorizeBudget { agents: vec![] })).unwrap();
    rt.step().unwrap();
    assert!(rt.pending().is_empty());
    assert_eq!(rt.agents()["u1"].ledger.consumed(), 1.0);
    let released = rt.log().events().iter().find_map(|e| match &e.body {
        EventBody::BudgetReplenished { released, .. } => Some(released.clone()),
        _ => None,
    });
    assert_eq!(released.unwrap().len(), 1);
}

#[test]
fn missed_checkpoints_alone_produce_an_f5_review() {
    let s = script(json!({
        "name": "stale-sync",
        "duration": 30,
        "config": {
            "sync": {"interval": 5, "timeout": 2},
            "sf_max": 20.0,
            "operator_assessments": {"route": 0.5},
        },
        "agents": [{"id": "u1"}, {"id": "u2"}],
    }));
    let rt = Runtime::run(s).unwrap();
    let report = generate_pigr(rt.log(), (0, 30)).unwrap();
    let tags: Vec<&str> = report.failure_modes.iter().map(|f| f.tag.as_str()).collect();
    assert_eq!(tags, ["F5"]);
    assert_eq!(report.root_cause, RootCause::OperatorError);
    assert!(report
        .recommendations
        .iter()
        .any(|r| r.kind == RecommendationKind::ProcedureChange && r.detail.contains("checkpoint")));
    assert!(timeline_is_subsequence(&report, rt.log()));
}
