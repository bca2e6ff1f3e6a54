//! Post-incident governance review built from the event log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, SourceId};
use crate::metrics::Metric;
use crate::response::{ResponseLevel, Verdict};
use crate::scenario::event::{audit_log, EventBody, EventLog, GovernanceEvent};
use crate::scenario::script::EnvironmentEvent;
use crate::sync::SyncEvent;
use crate::Tick;

/// Corrections below this CIR count as absorption.
pub const ABSORPTION_CIR: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PigrError {
    #[error("PIGR not required: minimum CQS {min_cqs} in the window is not below {trigger}")]
    NotRequired { min_cqs: f64, trigger: f64 },
    #[error("no metric snapshots in window {0}..{1}")]
    EmptyWindow(Tick, Tick),
    #[error("log has no run header")]
    MissingHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootCause {
    AdversaryAction,
    DesignDeficiency,
    OperatorError,
    Environmental,
    Combination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccountabilityTag {
    Developer,
    Procurement,
    Commander,
    Regulator,
    International,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecommendationKind {
    ThresholdRecalibration,
    TestSuiteAddition,
    ProcedureChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub kind: RecommendationKind,
    pub target: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureMode {
    /// `F1`..`F6`.
    pub tag: String,
    pub metric: Metric,
    pub first_alert: Tick,
    pub worst: f64,
}

/// A log event cited by the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineItem {
    pub seq: u64,
    pub t: Tick,
    pub kind: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub final_level: ResponseLevel,
    pub final_cqs: f64,
    /// Tick at which the level returned to Normal, if it did.
    pub recovered_at: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PigrReport {
    pub window: (Tick, Tick),
    pub trigger: f64,
    pub min_cqs: f64,
    pub min_cqs_at: Tick,
    /// First alert or level change in the window.
    pub detection: Option<Tick>,
    pub failure_modes: Vec<FailureMode>,
    pub timeline: Vec<TimelineItem>,
    pub root_cause: RootCause,
    /// Individual causes when the root cause is a combination.
    pub contributing: Vec<RootCause>,
    pub flagged_sources: Vec<SourceId>,
    pub accountability: Vec<AccountabilityTag>,
    pub recommendations: Vec<Recommendation>,
    pub validations: Vec<String>,
    pub outcome: Outcome,
}

struct Header<'a> {
    trigger: f64,
    classes: &'a BTreeMap<AgentId, String>,
}

fn header(log: &EventLog) -> Option<Header<'_>> {
    log.events().iter().find_map(|e| match &e.body {
        EventBody::RunStarted {
            pigr_trigger, classes, ..
        } => Some(Header {
            trigger: *pigr_trigger,
            classes,
        }),
        _ => None,
    })
}

fn summary(e: &GovernanceEvent) -> Option<String> {
    let text = match &e.body {
        EventBody::Command(c) => match &c.rejected {
            None => format!("operator {} ({})", c.command.kind.name(), c.command.command_id),
            Some(r) => format!("operator {} rejected: {}", c.command.kind.name(), r.message),
        },
        EventBody::Alert { raised: true, alert } => format!(
            "{} alert: {} = {:.3} below {:.2}",
            alert.metric.failure(),
            alert.metric,
            alert.value,
            alert.threshold
        ),
        EventBody::Alert { raised: false, alert } => format!("{} alert cleared", alert.metric),
        EventBody::LevelTransition { from, to, cqs, binding } => {
            format!("level {from} -> {to} at CQS {cqs:.3} (binding {binding})")
        }
        EventBody::IncidentOpened { start } => format!("incident opened at {start}"),
        EventBody::PigrFlag { cqs, .. } => format!("review required: CQS {cqs:.3}"),
        EventBody::IncidentClosed { min_cqs, .. } => format!("incident closed, minimum CQS {min_cqs:.3}"),
        EventBody::Correction { agent, outcome, .. } => match outcome {
            Some(o) => format!("correction applied by {agent}: CIR {:.3}", o.cir.value),
            None => format!("correction not acknowledged by {agent}"),
        },
        EventBody::Probe(p) => format!(
            "probe {} to {}: responsive {}, coherent {}",
            p.probe_id, p.agent, p.status.responsive, p.status.coherent
        ),
        EventBody::Override { agent, assessment, adopted, .. } => {
            format!("override of {assessment} {} by {agent}", if *adopted { "adopted" } else { "ignored" })
        }
        EventBody::Reset(r) => format!("reset of {} ({} assessments changed)", r.agent, r.changed.len()),
        EventBody::Audit(a) => match a.detection {
            Some(d) => format!("provenance audit: divergence from {d}, flagged [{}]", join(&a.flagged)),
            None => "provenance audit: no divergence".to_string(),
        },
        EventBody::SourcesFlagged { sources } => format!("sources flagged formation-wide: [{}]", join(sources)),
        EventBody::Ingest {
            agent,
            source,
            refused: true,
            ..
        } => format!("evidence from flagged source {source} refused by {agent}"),
        EventBody::Isolation(o) => format!(
            "isolation: {} severed, SCS {:.3} -> {:.3}",
            o.isolated.len(),
            o.scs_before,
            o.scs_after
        ),
        EventBody::Checkpoint(SyncEvent::Missed(c)) => format!("checkpoint for {} missed", c.agent),
        EventBody::Checkpoint(SyncEvent::Confirmed(c)) => format!("checkpoint for {} confirmed", c.agent),
        EventBody::GateDecision(g) if g.decision.verdict != Verdict::Allow => format!(
            "{} {} for {} under {}",
            g.decision.action_id,
            match g.decision.verdict {
                Verdict::Reject => "rejected",
                _ => "held for authorisation",
            },
            g.agent,
            g.level
        ),
        EventBody::BudgetReplenished { agents, .. } => format!("budget replenished for {} agents", agents.len()),
        EventBody::Environment(EnvironmentEvent::CommsLoss { agents }) => format!("comms lost to [{}]", join(agents)),
        EventBody::Environment(EnvironmentEvent::CommsRestored { agents }) => {
            format!("comms restored to [{}]", join(agents))
        }
        _ => return None,
    };
    Some(text)
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

/// Parses a window written `A..B` (inclusive).
pub fn parse_window(text: &str) -> Result<(Tick, Tick), String> {
    let (a, b) = text.split_once("..").ok_or_else(|| format!("window `{text}` is not of the form A..B"))?;
    let from: Tick = a.trim().parse().map_err(|_| format!("bad window start `{a}`"))?;
    let to: Tick = b.trim().parse().map_err(|_| format!("bad window end `{b}`"))?;
    if from > to {
        return Err(format!("window {from}..{to} is empty"));
    }
    Ok((from, to))
}

/// Builds the review for `window` (inclusive). Fails unless the minimum CQS
/// inside the window is below the run's review trigger.
pub fn generate_pigr(log: &EventLog, window: (Tick, Tick)) -> Result<PigrReport, PigrError> {
    let header = header(log).ok_or(PigrError::MissingHeader)?;
    let (from, to) = window;
    let events = log.range(from, to);

    let mut min: Option<(f64, Tick)> = None;
    let mut last = None;
    for e in events {
        if let EventBody::MetricSnapshot(s) = &e.body {
            if min.is_none_or(|(m, _)| s.cqs < m) {
                min = Some((s.cqs, e.t));
            }
            last = Some(s);
        }
    }
    let (Some((min_cqs, min_cqs_at)), Some(last)) = (min, last) else {
        return Err(PigrError::EmptyWindow(from, to));
    };
    if !(min_cqs < header.trigger) {
        return Err(PigrError::NotRequired {
            min_cqs,
            trigger: header.trigger,
        });
    }

    let mut failures: BTreeMap<Metric, FailureMode> = BTreeMap::new();
    let mut detection = None;
    let mut timeline = Vec::new();
    let mut flagged: BTreeSet<SourceId> = BTreeSet::new();
    let mut absorbing: BTreeSet<AgentId> = BTreeSet::new();
    let mut refused = 0usize;
    let mut missed_operator = false;
    let mut missed_environment = false;
    let mut comms_down: BTreeSet<AgentId> = BTreeSet::new();
    let mut comms_events = false;
    let mut deactivated = false;
    let mut recovered_at = None;

    // comms state at window start
    for e in log.events().iter().take_while(|e| e.t < from) {
        track_comms(&e.body, &mut comms_down);
    }

    for e in events {
        if let Some(s) = summary(e) {
            timeline.push(TimelineItem {
                seq: e.seq,
                t: e.t,
                kind: e.body.kind().to_string(),
                summary: s,
            });
        }
        match &e.body {
            EventBody::Alert { raised: true, alert } => {
                detection.get_or_insert(e.t);
                failures
                    .entry(alert.metric)
                    .and_modify(|f| f.worst = f.worst.min(alert.value))
                    .or_insert(FailureMode {
                        tag: alert.metric.failure().to_string(),
                        metric: alert.metric,
                        first_alert: e.t,
                        worst: alert.value,
                    });
            }
            EventBody::MetricSnapshot(s) => {
                for (m, f) in failures.iter_mut() {
                    f.worst = f.worst.min(s.values[m.index()]);
                }
            }
            EventBody::LevelTransition { to, .. } => {
                detection.get_or_insert(e.t);
                if *to == ResponseLevel::Normal {
                    recovered_at = Some(e.t);
                }
            }
            EventBody::Correction {
                agent, outcome: Some(o), ..
            } if o.cir.value < ABSORPTION_CIR => {
                absorbing.insert(agent.clone());
                let worst = failures.entry(Metric::N2).or_insert(FailureMode {
                    tag: Metric::N2.failure().to_string(),
                    metric: Metric::N2,
                    first_alert: e.t,
                    worst: 1.0,
                });
                worst.first_alert = worst.first_alert.min(e.t);
            }
            EventBody::SourcesFlagged { sources } => flagged.extend(sources.iter().cloned()),
            EventBody::Ingest { refused: true, .. } => refused += 1,
            EventBody::Checkpoint(SyncEvent::Missed(c)) => {
                if comms_down.contains(&c.agent) {
                    missed_environment = true;
                } else {
                    missed_operator = true;
                }
            }
            EventBody::Environment(_) => comms_events = true,
            EventBody::AgentStatus { status, .. } if *status == crate::agent::AgentStatus::Deactivated => {
                deactivated = true;
            }
            _ => {}
        }
        track_comms(&e.body, &mut comms_down);
    }

    let mut causes = BTreeSet::new();
    if !flagged.is_empty() || deactivated {
        causes.insert(RootCause::AdversaryAction);
    } else if !absorbing.is_empty() {
        causes.insert(RootCause::DesignDeficiency);
    }
    if missed_operator {
        causes.insert(RootCause::OperatorError);
    }
    if missed_environment || comms_events {
        causes.insert(RootCause::Environmental);
    }
    if causes.is_empty() {
        causes.insert(RootCause::DesignDeficiency);
    }
    let contributing: Vec<RootCause> = causes.iter().copied().collect();
    let root_cause = if contributing.len() == 1 {
        contributing[0]
    } else {
        RootCause::Combination
    };

    let mut accountability = BTreeSet::from([AccountabilityTag::Regulator]);
    for c in &contributing {
        match c {
            RootCause::AdversaryAction => {
                accountability.extend([AccountabilityTag::Developer, AccountabilityTag::Commander]);
            }
            RootCause::DesignDeficiency => {
                accountability.extend([AccountabilityTag::Developer, AccountabilityTag::Procurement]);
            }
            RootCause::OperatorError | RootCause::Environmental => {
                accountability.insert(AccountabilityTag::Commander);
            }
            RootCause::Combination => {}
        }
    }

    let mut recommendations = Vec::new();
    let classes: BTreeSet<String> = absorbing
        .iter()
        .map(|a| header.classes.get(a).cloned().unwrap_or_else(|| a.to_string()))
        .collect();
    for class in classes {
        recommendations.push(Recommendation {
            kind: RecommendationKind::ThresholdRecalibration,
            target: class.clone(),
            detail: format!(
                "tighten correction-effectiveness certification thresholds for agent class `{class}`: a correction was absorbed below CIR {ABSORPTION_CIR}"
            ),
        });
    }
    for source in &flagged {
        recommendations.push(Recommendation {
            kind: RecommendationKind::TestSuiteAddition,
            target: "iat".into(),
            detail: format!("add sensor-contamination cases modelled on source `{source}` to the interpretive alignment suite"),
        });
    }
    if failures.contains_key(&Metric::N1) {
        recommendations.push(Recommendation {
            kind: RecommendationKind::TestSuiteAddition,
            target: "iat".into(),
            detail: "add the manipulated instruction contexts seen in this incident to the interpretive alignment suite".into(),
        });
    }
    if failures.contains_key(&Metric::N5) {
        recommendations.push(Recommendation {
            kind: RecommendationKind::ProcedureChange,
            target: "checkpoint-interval".into(),
            detail: "shorten the checkpoint interval or add redundant confirmation paths".into(),
        });
    }
    if failures.contains_key(&Metric::N6) {
        recommendations.push(Recommendation {
            kind: RecommendationKind::ProcedureChange,
            target: "cascade-resistance".into(),
            detail: "enable cascade resistance so agents report anomalous peers instead of reacting to them".into(),
        });
    }
    if failures.contains_key(&Metric::N4) {
        recommendations.push(Recommendation {
            kind: RecommendationKind::ThresholdRecalibration,
            target: "irreversibility-budget".into(),
            detail: "review irreversibility budgets and related action scores".into(),
        });
    }

    let mut validations = Vec::new();
    if !flagged.is_empty() {
        validations.push(format!(
            "provenance tracking functioned: divergence attributed to [{}]; {refused} later ingestion attempts from flagged sources refused",
            join(&flagged.iter().cloned().collect::<Vec<_>>())
        ));
    }
    let audit = audit_log(log, &Default::default());
    if audit.violations.is_empty() {
        validations.push(format!(
            "enforcement consistent: {} gate decisions and {} level transitions match the restriction table",
            audit.gate_decisions, audit.transitions
        ));
    } else {
        validations.push(format!("enforcement inconsistencies: {}", audit.violations.join("; ")));
    }
    if let Some(t) = recovered_at {
        validations.push(format!("graduated response returned the formation to Normal at t={t}"));
    }

    Ok(PigrReport {
        window,
        trigger: header.trigger,
        min_cqs,
        min_cqs_at,
        detection,
        failure_modes: failures.into_values().collect(),
        timeline,
        root_cause,
        contributing,
        flagged_sources: flagged.into_iter().collect(),
        accountability: accountability.into_iter().collect(),
        recommendations,
        validations,
        outcome: Outcome {
            final_level: last.level,
            final_cqs: last.cqs,
            recovered_at,
        },
    })
}

fn track_comms(body: &EventBody, down: &mut BTreeSet<AgentId>) {
    match body {
        EventBody::Environment(EnvironmentEvent::CommsLoss { agents }) => down.extend(agents.iter().cloned()),
        EventBody::Environment(EnvironmentEvent::CommsRestored { agents }) => {
            for a in agents {
                down.remove(a);
            }
        }
        _ => {}
    }
}

/// Every cited event exists in the log with the same time and kind, in
/// log order.
pub fn timeline_is_subsequence(report: &PigrReport, log: &EventLog) -> bool {
    let events = log.events();
    let mut previous: Option<u64> = None;
    report.timeline.iter().all(|item| {
        let ordered = previous.is_none_or(|p| item.seq > p);
        previous = Some(item.seq);
        ordered
            && events
                .get(item.seq as usize)
                .is_some_and(|e| e.seq == item.seq && e.t == item.t && e.body.kind() == item.kind)
    })
}

fn label<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Plain-text rendering for reviewers.
pub fn render_pigr(report: &PigrReport) -> String {
    let mut out = String::new();
    let (a, b) = report.window;
    let _ = writeln!(out, "POST-INCIDENT GOVERNANCE REVIEW  t={a}..{b}");
    let _ = writeln!(
        out,
        "minimum CQS {:.3} at t={} (review trigger {:.2})",
        report.min_cqs, report.min_cqs_at, report.trigger
    );
    if let Some(d) = report.detection {
        let _ = writeln!(out, "first detection t={d}");
    }
    let _ = writeln!(out, "\nFailure modes");
    for f in &report.failure_modes {
        let _ = writeln!(out, "  {} ({}) first at t={}, worst {:.3}", f.tag, f.metric.label(), f.first_alert, f.worst);
    }
    let _ = writeln!(out, "\nTimeline");
    for item in &report.timeline {
        let _ = writeln!(out, "  t={:<4} #{:<5} {}", item.t, item.seq, item.summary);
    }
    let _ = writeln!(out, "\nRoot cause: {}", label(&report.root_cause));
    if report.contributing.len() > 1 {
        let parts: Vec<String> = report.contributing.iter().map(label).collect();
        let _ = writeln!(out, "  contributing: {}", parts.join(", "));
    }
    if !report.flagged_sources.is_empty() {
        let _ = writeln!(out, "  flagged sources: {}", join(&report.flagged_sources));
    }
    let tags: Vec<String> = report.accountability.iter().map(label).collect();
    let _ = writeln!(out, "Accountability: {}", tags.join(", "));
    let _ = writeln!(out, "\nGovernance updates");
    for r in &report.recommendations {
        let _ = writeln!(out, "  [{}] {}", label(&r.kind), r.detail);
    }
    let _ = writeln!(out, "\nValidations");
    for v in &report.validations {
        let _ = writeln!(out, "  {v}");
    }
    let _ = writeln!(
        out,
        "\nOutcome: {} at CQS {:.3}{}",
        report.outcome.final_level,
        report.outcome.final_cqs,
        report
            .outcome
            .recovered_at
            .map(|t| format!(", Normal restored at t={t}"))
            .unwrap_or_default()
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_syntax() {
        assert_eq!(parse_window("23..45"), Ok((23, 45)));
        assert_eq!(parse_window(" 3 .. 3"), Ok((3, 3)));
        assert!(parse_window("45..23").is_err());
        assert!(parse_window("23-45").is_err());
    }
}
