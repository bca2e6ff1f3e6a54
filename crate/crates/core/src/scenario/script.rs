//! Scenario scripts and their validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::command::{CommandKind, CommandRejection, OperatorCommand, RejectionCode};
use crate::agent::{ActionSpec, AgentConfig, InterpretContext, Plan, SwarmDynamics};
use crate::ids::{ActionId, AgentId, AssessmentId, SourceId};
use crate::metrics::{BehaviorVector, InterpretationRecord, NormalizationConfig, DEFAULT_EPSILON_DB};
use crate::response::{ResponseLevel, ThresholdConfig};
use crate::sync::{ProbeConfig, SyncConfig};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub individual_budget: f64,
    pub swarm_budget: f64,
    pub cir_target: f64,
    pub edi_max: f64,
    /// Defaults to twice the checkpoint interval.
    pub sf_max: Option<f64>,
    pub epsilon_db: f64,
    pub sync: SyncConfig,
    pub probes: ProbeConfig,
    pub thresholds: ThresholdConfig,
    pub dynamics: SwarmDynamics,
    pub actions: Vec<ActionSpec>,
    /// Behaviour channel each assessment bears on.
    pub assessment_channels: BTreeMap<AssessmentId, String>,
    /// Operator confidence per monitored assessment at mission start.
    pub operator_assessments: BTreeMap<AssessmentId, f64>,
    /// EDI level treated as divergence by the provenance audit. Defaults to
    /// a fifth of `edi_max`.
    pub audit_bound: Option<f64>,
    pub audit_after_reset: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            individual_budget: 5.0,
            swarm_budget: 25.0,
            cir_target: NormalizationConfig::DEFAULT_CIR_TARGET,
            edi_max: NormalizationConfig::DEFAULT_EDI_MAX,
            sf_max: None,
            epsilon_db: DEFAULT_EPSILON_DB,
            sync: SyncConfig::default(),
            probes: ProbeConfig::default(),
            thresholds: ThresholdConfig::default(),
            dynamics: SwarmDynamics::default(),
            actions: Vec::new(),
            assessment_channels: BTreeMap::new(),
            operator_assessments: BTreeMap::new(),
            audit_bound: None,
            audit_after_reset: true,
        }
    }
}

impl ScenarioConfig {
    /// Normalisation constants. The irreversibility dimension is normalised
    /// against the collective budget.
    pub fn normalization(&self) -> NormalizationConfig {
        let interval = self.sync.interval.unwrap_or(15) as f64;
        NormalizationConfig {
            cir_target: self.cir_target,
            edi_max: self.edi_max,
            irreversibility_budget: self.swarm_budget,
            sf_max: self.sf_max.unwrap_or(2.0 * interval),
        }
    }

    pub fn audit_bound(&self) -> f64 {
        self.audit_bound.unwrap_or(self.edi_max * 0.2)
    }

    pub fn catalog(&self) -> BTreeMap<ActionId, ActionSpec> {
        self.actions.iter().map(|a| (a.id.clone(), a.clone())).collect()
    }
}

/// Raw metric a pin overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawMetric {
    Ias,
    Cir,
    Edi,
    IC,
    Sf,
    Scs,
}

impl RawMetric {
    /// Measured metrics hold a pinned value until the next measurement;
    /// derived ones are recomputed every tick and a pin binds one tick only.
    pub fn is_measured(self) -> bool {
        matches!(self, RawMetric::Ias | RawMetric::Cir)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    SensorContamination,
    FalseContaminationClaim,
    CascadeInduction,
    ProbeSpoof,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialEvent {
    pub kind: AdversaryKind,
    pub targets: Vec<AgentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<AssessmentId>,
    /// Confidence shift per packet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boost: Option<f64>,
    #[serde(default = "one_packet")]
    pub packets: u32,
    /// Spoofed command target behaviour.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intended: Option<BehaviorVector>,
}

fn one_packet() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvironmentEvent {
    CommsLoss { agents: Vec<AgentId> },
    CommsRestored { agents: Vec<AgentId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimelineEvent {
    Pin {
        metric: RawMetric,
        value: f64,
    },
    Operator {
        command: OperatorCommand,
    },
    Adversary {
        event: AdversarialEvent,
    },
    Instruction {
        agents: Vec<AgentId>,
        record: InterpretationRecord,
        #[serde(default)]
        context: InterpretContext,
    },
    Ingest {
        agents: Vec<AgentId>,
        source: SourceId,
        assessment: AssessmentId,
        delta: f64,
    },
    Environment {
        event: EnvironmentEvent,
    },
}

impl TimelineEvent {
    /// Raw metrics this event measures at its tick.
    pub fn measures(&self) -> BTreeSet<RawMetric> {
        let mut out = BTreeSet::new();
        match self {
            TimelineEvent::Pin { .. } | TimelineEvent::Environment { .. } => {}
            TimelineEvent::Instruction { .. } => {
                out.insert(RawMetric::Ias);
            }
            TimelineEvent::Ingest { .. } => {
                out.insert(RawMetric::Edi);
            }
            TimelineEvent::Adversary { event } => {
                if event.kind == AdversaryKind::SensorContamination {
                    out.insert(RawMetric::Edi);
                }
            }
            TimelineEvent::Operator { command } => match &command.kind {
                CommandKind::IssueCorrection { .. } => {
                    out.insert(RawMetric::Cir);
                }
                CommandKind::IssueProbe { .. } => {
                    out.insert(RawMetric::Scs);
                }
                CommandKind::ConfirmCheckpoint { .. } => {
                    out.insert(RawMetric::Sf);
                }
                CommandKind::OverrideAssessment { .. }
                | CommandKind::OrderPartialReset { .. }
                | CommandKind::OrderFullReset { .. } => {
                    out.insert(RawMetric::Edi);
                }
                CommandKind::AuthorizeBudget { .. } => {
                    out.insert(RawMetric::IC);
                }
                CommandKind::IsolateAgent { .. } => {
                    out.insert(RawMetric::Scs);
                }
                _ => {}
            },
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(flatten)]
    pub event: TimelineEvent,
}

fn cqs_tolerance() -> f64 {
    1e-9
}

fn vector_tolerance() -> f64 {
    0.005
}

/// Golden values a run must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub at: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cqs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<ResponseLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<[f64; 6]>,
    #[serde(default = "cqs_tolerance")]
    pub cqs_tolerance: f64,
    /// Vectors are printed to two decimals in the reference material.
    #[serde(default = "vector_tolerance")]
    pub vector_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Last tick simulated; ticks run from 0 through `duration`.
    pub duration: Tick,
    #[serde(default)]
    pub config: ScenarioConfig,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub timeline: Vec<TimelineEntry>,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| format!("{}: {}", e.path(), e.inner()))
    }

    /// Every violation in the script, in a stable order.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        let cfg = &self.config;

        if let Err(e) = cfg.normalization().validate() {
            errors.push(format!("config: {e}"));
        }
        if let Err(e) = cfg.thresholds.validate() {
            errors.push(format!("config.thresholds: {e}"));
        }
        if !(cfg.individual_budget > 0.0) {
            errors.push("config.individual_budget must be positive".into());
        }
        if !(cfg.epsilon_db > 0.0) {
            errors.push("config.epsilon_db must be positive".into());
        }
        if cfg.probes.channels.0 == cfg.probes.channels.1 {
            errors.push("config.probes.channels must be distinct".into());
        }
        if !(cfg.probes.shift > 0.0) || 2.0 * cfg.probes.shift < cfg.epsilon_db {
            errors.push("config.probes.shift must produce an intended change above epsilon_db".into());
        }
        if cfg.operator_assessments.is_empty() {
            errors.push("config.operator_assessments: no monitored assessments".into());
        }
        for (a, c) in &cfg.operator_assessments {
            if !(0.0..=1.0).contains(c) {
                errors.push(format!("config.operator_assessments.{a}: {c} outside [0,1]"));
            }
        }
        let mut action_ids = BTreeSet::new();
        for a in &cfg.actions {
            if !action_ids.insert(a.id.clone()) {
                errors.push(format!("config.actions: duplicate action `{}`", a.id));
            }
            if !(0.0..=1.0).contains(&a.iota) {
                errors.push(format!("config.actions.{}: iota {} outside [0,1]", a.id, a.iota));
            }
        }

        if self.agents.is_empty() {
            errors.push("agents: formation is empty".into());
        }
        let catalog = cfg.catalog();
        let mut agent_ids = BTreeSet::new();
        let mut assessments: BTreeMap<&AgentId, BTreeSet<&AssessmentId>> = BTreeMap::new();
        for agent in &self.agents {
            if !agent_ids.insert(agent.id.clone()) {
                errors.push(format!("agents: duplicate id `{}`", agent.id));
            }
            if let Err(e) = agent.behavior.validate() {
                errors.push(format!("agents.{}.behavior: {e}", agent.id));
            }
            if let Err(e) = Plan::from_entries(&agent.id, &agent.plan, &catalog) {
                errors.push(format!("agents.{}.plan: {e}", agent.id));
            }
            for p in agent.plan.iter().filter(|p| p.at > self.duration) {
                errors.push(format!("agents.{}.plan: step at {} after duration", agent.id, p.at));
            }
            assessments.insert(&agent.id, agent.beliefs.iter().map(|b| &b.assessment).collect());
        }

        let known = |id: &AgentId, path: &str, errors: &mut Vec<String>| {
            if !agent_ids.contains(id) {
                errors.push(format!("{path}: unknown agent `{id}`"));
            }
        };

        let mut previous = 0;
        let mut command_ids = BTreeSet::new();
        let mut measured: BTreeMap<Tick, BTreeSet<RawMetric>> = BTreeMap::new();
        let mut pinned: BTreeMap<Tick, BTreeSet<RawMetric>> = BTreeMap::new();
        for (i, entry) in self.timeline.iter().enumerate() {
            let path = format!("timeline[{i}]");
            if entry.at < previous {
                errors.push(format!("{path}: at {} precedes {}", entry.at, previous));
            }
            previous = previous.max(entry.at);
            if entry.at > self.duration {
                errors.push(format!("{path}: at {} after duration {}", entry.at, self.duration));
            }
            measured.entry(entry.at).or_default().extend(entry.event.measures());
            match &entry.event {
                TimelineEvent::Pin { metric, value } => {
                    if !pinned.entry(entry.at).or_default().insert(*metric) {
                        errors.push(format!("{path}: {metric:?} pinned twice at {}", entry.at));
                    }
                    if !(value.is_finite() && *value >= 0.0) {
                        errors.push(format!("{path}: pin value {value} must be finite and nonnegative"));
                    }
                }
                TimelineEvent::Operator { command } => {
                    if !command_ids.insert(command.command_id.clone()) {
                        errors.push(format!("{path}: duplicate command_id `{}`", command.command_id));
                    }
                    for problem in command_problems(&command.kind, &agent_ids, &assessments, cfg) {
                        let field = problem.field_path.map(|f| format!(".{f}")).unwrap_or_default();
                        errors.push(format!("{path}.command{field}: {}", problem.message));
                    }
                }
                TimelineEvent::Adversary { event } => {
                    for t in &event.targets {
                        known(t, &path, &mut errors);
                    }
                    match event.kind {
                        AdversaryKind::SensorContamination => {
                            if event.source.is_none() || event.assessment.is_none() || event.boost.is_none() {
                                errors.push(format!("{path}: sensor-contamination needs source, assessment and boost"));
                            }
                        }
                        AdversaryKind::FalseContaminationClaim => {
                            if event.source.is_none() {
                                errors.push(format!("{path}: false-contamination-claim needs a source"));
                            }
                        }
                        AdversaryKind::ProbeSpoof => match &event.intended {
                            Some(b) => {
                                if let Err(e) = b.validate() {
                                    errors.push(format!("{path}: {e}"));
                                }
                            }
                            None => errors.push(format!("{path}: probe-spoof needs an intended behaviour")),
                        },
                        AdversaryKind::CascadeInduction => {}
                    }
                }
                TimelineEvent::Instruction { agents, record, .. } => {
                    for a in agents {
                        known(a, &path, &mut errors);
                    }
                    if let Err(e) = record.validate() {
                        errors.push(format!("{path}: {e}"));
                    }
                }
                TimelineEvent::Ingest { agents, .. } => {
                    for a in agents {
                        known(a, &path, &mut errors);
                    }
                }
                TimelineEvent::Environment { event } => {
                    let (EnvironmentEvent::CommsLoss { agents } | EnvironmentEvent::CommsRestored { agents }) = event;
                    for a in agents {
                        known(a, &path, &mut errors);
                    }
                }
            }
        }
        for (t, metrics) in &pinned {
            if let Some(m) = measured.get(t) {
                for metric in metrics.intersection(m) {
                    errors.push(format!(
                        "timeline: {metric:?} is both pinned and measured at {t}"
                    ));
                }
            }
        }
        for (i, e) in self.expect.iter().enumerate() {
            if e.at > self.duration {
                errors.push(format!("expect[{i}]: at {} after duration", e.at));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// Static problems with a command against the script's formation.
pub fn command_problems(
    kind: &CommandKind,
    agents: &BTreeSet<AgentId>,
    assessments: &BTreeMap<&AgentId, BTreeSet<&AssessmentId>>,
    config: &ScenarioConfig,
) -> Vec<CommandRejection> {
    let mut out = Vec::new();
    let check = |id: &AgentId, path: String, out: &mut Vec<CommandRejection>| {
        if !agents.contains(id) {
            out.push(CommandRejection::new(RejectionCode::UnknownAgent, format!("unknown agent `{id}`")).at(path));
        }
    };
    let invalid = |message: String, path: &str| CommandRejection::new(RejectionCode::InvalidValue, message).at(path);
    match kind {
        CommandKind::IssueCorrection { agents: targets, intended, iota } => {
            for (i, a) in targets.iter().enumerate() {
                check(a, format!("agents[{i}]"), &mut out);
            }
            if let Err(e) = intended.validate() {
                out.push(invalid(format!("intended: {e}"), "intended"));
            }
            if !(0.0..=1.0).contains(iota) {
                out.push(invalid(format!("iota {iota} outside [0,1]"), "iota"));
            }
            if targets.is_empty() {
                out.push(invalid("no target agents".into(), "agents"));
            }
        }
        CommandKind::IssueProbe { agents: targets } => {
            for (i, a) in targets.iter().enumerate() {
                check(a, format!("agents[{i}]"), &mut out);
            }
            if targets.is_empty() {
                out.push(invalid("no target agents".into(), "agents"));
            }
        }
        CommandKind::ConfirmCheckpoint { agents: targets } | CommandKind::AuthorizeBudget { agents: targets } => {
            for (i, a) in targets.iter().enumerate() {
                check(a, format!("agents[{i}]"), &mut out);
            }
        }
        CommandKind::OverrideAssessment { assessment, confidence } => {
            if !config.operator_assessments.contains_key(assessment) {
                out.push(
                    CommandRejection::new(RejectionCode::UnknownAssessment, format!("unknown assessment `{assessment}`"))
                        .at("assessment"),
                );
            }
            if !(0.0..=1.0).contains(confidence) {
                out.push(invalid(format!("confidence {confidence} outside [0,1]"), "confidence"));
            }
        }
        CommandKind::OrderPartialReset { agent, assessments: listed, .. } => {
            check(agent, "agent".into(), &mut out);
            if listed.is_empty() {
                out.push(invalid("partial reset lists no assessments".into(), "assessments"));
            }
            if let Some(known) = assessments.get(agent) {
                let unknown: Vec<&str> = listed
                    .iter()
                    .filter(|a| !known.contains(a))
                    .map(|a| a.as_str())
                    .collect();
                if !unknown.is_empty() {
                    out.push(
                        CommandRejection::new(
                            RejectionCode::UnknownAssessment,
                            format!("unknown assessments: {}", unknown.join(", ")),
                        )
                        .at("assessments"),
                    );
                }
            }
        }
        CommandKind::OrderFullReset { agent, .. } | CommandKind::IsolateAgent { agent } => check(agent, "agent".into(), &mut out),
        CommandKind::SetPace { .. } | CommandKind::Pause | CommandKind::Resume | CommandKind::AuthorizeAction { .. } => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioScript {
        ScenarioScript::from_json(
            r#"{
                "name": "t",
                "duration": 5,
                "config": {"operator_assessments": {"hvt": 0.1}},
                "agents": [{"id": "d1", "beliefs": [{"assessment": "hvt", "confidence": 0.1, "source": "recon"}]}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_script_validates() {
        minimal().validate().unwrap();
    }

    #[test]
    fn all_violations_listed() {
        let mut s = minimal();
        s.timeline = serde_json::from_str(
            r#"[
                {"at": 3, "kind": "pin", "metric": "sf", "value": 4},
                {"at": 3, "kind": "operator", "command": {"command_id": "c", "kind": "confirm-checkpoint"}},
                {"at": 2, "kind": "operator", "command": {"command_id": "c", "kind": "issue-probe", "agents": ["ghost"]}},
                {"at": 9, "kind": "pin", "metric": "ias", "value": 1}
            ]"#,
        )
        .unwrap();
        let errors = s.validate().unwrap_err();
        let joined = errors.join("\n");
        assert!(joined.contains("precedes"), "{joined}");
        assert!(joined.contains("duplicate command_id"), "{joined}");
        assert!(joined.contains("unknown agent `ghost`"), "{joined}");
        assert!(joined.contains("after duration"), "{joined}");
        assert!(joined.contains("both pinned and measured at 3"), "{joined}");
        assert_eq!(errors.len(), 5);
    }

    #[test]
    fn unknown_fields_reported_with_path() {
        let err = ScenarioScript::from_json(r#"{"name":"t","duration":1,"agents":[],"config":{"edi_mx":1}}"#).unwrap_err();
        assert!(err.starts_with("config"), "{err}");
    }

    #[test]
    fn timeline_roundtrip() {
        let entry: TimelineEntry = serde_json::from_str(
            r#"{"at": 23, "note": "n", "kind": "adversary", "event": {"kind": "sensor-contamination", "targets": ["d1"], "source": "feed-7", "assessment": "hvt", "boost": 0.36}}"#,
        )
        .unwrap();
        let json = serde_json::to_string(&entry).unwrap();
        let back: TimelineEntry = serde_json::from_str(&json).unwrap();
        assert_eq!(back, entry);
    }
}
