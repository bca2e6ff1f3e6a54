//! Append-only governance event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::command::{CommandRejection, OperatorCommand};
use super::script::{AdversarialEvent, EnvironmentEvent, RawMetric};
use crate::agent::{AgentStatus, CorrectionOutcome, SwarmEvent};
use crate::corrective::{AuditReport, IsolationOutcome, ResetReport};
use crate::ids::{ActionId, AgentId, AssessmentId, SourceId};
use crate::metrics::{Metric, RawMetrics};
use crate::response::{allow_is_permitted, ActionGateDecision, ActionRequest, Alert, BandConfig, BudgetState, ResponseLevel, Verdict};
use crate::sync::{ControlProbe, SyncEvent};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Actor {
    System,
    Operator,
    Adversary,
    Environment,
    Agent,
}

/// One tick's metric evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub values: [f64; 6],
    pub cqs: f64,
    pub level: ResponseLevel,
    pub binding: Metric,
    pub raw: RawMetrics,
    /// Raw inputs overridden by pins this tick.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pinned: Vec<RawMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub agent: AgentId,
    /// Level the decision was taken under, after reduced autonomy.
    pub level: ResponseLevel,
    pub request: ActionRequest,
    /// Budget state the decision was taken against.
    pub budget: BudgetState,
    pub authorized: bool,
    pub decision: ActionGateDecision,
    /// Nonce to quote when authorising a paused action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: OperatorCommand,
    /// Submitted through the control plane rather than scripted.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub live: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<CommandRejection>,
}

/// Event payloads, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum EventBody {
    RunStarted {
        scenario: String,
        seed: u64,
        pigr_trigger: f64,
        /// Agent class per agent.
        classes: BTreeMap<AgentId, String>,
    },
    Command(CommandRecord),
    Probe(ControlProbe),
    MetricSnapshot(MetricSnapshot),
    Alert {
        raised: bool,
        alert: Alert,
    },
    LevelTransition {
        from: ResponseLevel,
        to: ResponseLevel,
        cqs: f64,
        binding: Metric,
    },
    GateDecision(GateRecord),
    AuthorizationGranted {
        agent: AgentId,
        action_id: ActionId,
        token: String,
    },
    BudgetReplenished {
        agents: Vec<AgentId>,
        released: Vec<ActionId>,
    },
    Reset(ResetReport),
    Isolation(IsolationOutcome),
    Checkpoint(SyncEvent),
    IncidentOpened {
        start: Tick,
    },
    PigrFlag {
        incident_start: Tick,
        cqs: f64,
    },
    IncidentClosed {
        start: Tick,
        end: Tick,
        min_cqs: f64,
        pigr_required: bool,
    },
    Correction {
        agent: AgentId,
        command_id: String,
        /// `None` when the agent did not answer.
        outcome: Option<CorrectionOutcome>,
    },
    Instruction {
        agent: AgentId,
        instruction_id: String,
        distance: Option<f64>,
    },
    Ingest {
        agent: AgentId,
        source: SourceId,
        assessment: AssessmentId,
        delta: f64,
        /// Confidence after ingestion; `None` when refused.
        confidence: Option<f64>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        refused: bool,
    },
    Override {
        agent: AgentId,
        assessment: AssessmentId,
        confidence: f64,
        adopted: bool,
    },
    Adversary(AdversarialEvent),
    Audit(AuditReport),
    SourcesFlagged {
        sources: Vec<SourceId>,
    },
    Swarm(SwarmEvent),
    AgentStatus {
        agent: AgentId,
        status: AgentStatus,
    },
    Environment(EnvironmentEvent),
    Pin {
        metric: RawMetric,
        value: f64,
    },
    RunFinished {
        ticks: Tick,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::RunStarted { .. } => "run-started",
            EventBody::Command(_) => "command",
            EventBody::Probe(_) => "probe",
            EventBody::MetricSnapshot(_) => "metric-snapshot",
            EventBody::Alert { .. } => "alert",
            EventBody::LevelTransition { .. } => "level-transition",
            EventBody::GateDecision(_) => "gate-decision",
            EventBody::AuthorizationGranted { .. } => "authorization-granted",
            EventBody::BudgetReplenished { .. } => "budget-replenished",
            EventBody::Reset(_) => "reset",
            EventBody::Isolation(_) => "isolation",
            EventBody::Checkpoint(_) => "checkpoint",
            EventBody::IncidentOpened { .. } => "incident-opened",
            EventBody::PigrFlag { .. } => "pigr-flag",
            EventBody::IncidentClosed { .. } => "incident-closed",
            EventBody::Correction { .. } => "correction",
            EventBody::Instruction { .. } => "instruction",
            EventBody::Ingest { .. } => "ingest",
            EventBody::Override { .. } => "override",
            EventBody::Adversary(_) => "adversary",
            EventBody::Audit(_) => "audit",
            EventBody::SourcesFlagged { .. } => "sources-flagged",
            EventBody::Swarm(_) => "swarm",
            EventBody::AgentStatus { .. } => "agent-status",
            EventBody::Environment(_) => "environment",
            EventBody::Pin { .. } => "pin",
            EventBody::RunFinished { .. } => "run-finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceEvent {
    pub seq: u64,
    pub t: Tick,
    pub actor: Actor,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: seq {seq} does not follow {previous}")]
    Sequence { line: usize, seq: u64, previous: u64 },
    #[error("line {line}: time {t} precedes {previous}")]
    Time { line: usize, t: Tick, previous: Tick },
}

/// Append-only log with strictly increasing sequence numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<GovernanceEvent>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, t: Tick, actor: Actor, body: EventBody) -> &GovernanceEvent {
        let seq = self.events.len() as u64;
        self.events.push(GovernanceEvent { seq, t, actor, body });
        self.events.last().expect("just pushed")
    }

    pub fn events(&self) -> &[GovernanceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `from <= t <= to`.
    pub fn range(&self, from: Tick, to: Tick) -> &[GovernanceEvent] {
        let start = self.events.partition_point(|e| e.t < from);
        let end = self.events.partition_point(|e| e.t <= to);
        &self.events[start..end.max(start)]
    }

    pub fn since_seq(&self, seq: u64) -> &[GovernanceEvent] {
        let start = (seq as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn line(event: &GovernanceEvent) -> String {
        serde_json::to_string(event).expect("event serialisation is infallible")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&Self::line(e));
            out.push('\n');
        }
        out
    }

    /// Parses a JSON-lines log, checking sequence and time order.
    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        let mut events: Vec<GovernanceEvent> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let e: GovernanceEvent = serde_json::from_str(raw).map_err(|source| LogError::Parse { line, source })?;
            if let Some(prev) = events.last() {
                if e.seq != prev.seq + 1 {
                    return Err(LogError::Sequence {
                        line,
                        seq: e.seq,
                        previous: prev.seq,
                    });
                }
                if e.t < prev.t {
                    return Err(LogError::Time {
                        line,
                        t: e.t,
                        previous: prev.t,
                    });
                }
            }
            events.push(e);
        }
        Ok(Self { events })
    }

    pub fn snapshots(&self) -> impl Iterator<Item = (Tick, &MetricSnapshot)> {
        self.events.iter().filter_map(|e| match &e.body {
            EventBody::MetricSnapshot(s) => Some((e.t, s)),
            _ => None,
        })
    }
}

/// Problems found by [`audit_log`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LogAudit {
    pub gate_decisions: usize,
    pub transitions: usize,
    pub violations: Vec<String>,
}

/// Checks every gate decision against the restriction table of the level
/// it was taken under and that this level is at least as strict as the one
/// in force, and that every level transition follows from the snapshot it
/// accompanies.
pub fn audit_log(log: &EventLog, bands: &BandConfig) -> LogAudit {
    let mut out = LogAudit::default();
    let mut level = ResponseLevel::Normal;
    let mut last_snapshot: Option<&MetricSnapshot> = None;
    for e in log.events() {
        match &e.body {
            EventBody::MetricSnapshot(s) => {
                if bands.classify(s.cqs).ok() != Some(s.level) {
                    out.violations.push(format!("seq {}: snapshot level {} disagrees with CQS {}", e.seq, s.level, s.cqs));
                }
                last_snapshot = Some(s);
                level = s.level;
            }
            EventBody::LevelTransition { from, to, cqs, .. } => {
                out.transitions += 1;
                let backed = last_snapshot.is_some_and(|s| s.cqs == *cqs && s.level == *to);
                if !backed || from == to {
                    out.violations
                        .push(format!("seq {}: transition {from} -> {to} not backed by the preceding snapshot", e.seq));
                }
            }
            EventBody::GateDecision(g) => {
                out.gate_decisions += 1;
                if g.level < level {
                    out.violations.push(format!(
                        "seq {}: decision for `{}` under {} while {} was in force",
                        e.seq, g.agent, g.level, level
                    ));
                }
                if g.decision.verdict == Verdict::Allow && !allow_is_permitted(g.level, &g.request, &g.budget, g.authorized) {
                    out.violations.push(format!(
                        "seq {}: `{}` allowed for `{}` under {}",
                        e.seq, g.decision.action_id, g.agent, g.level
                    ));
                }
            }
            _ => {}
        }
    }
    out
}
