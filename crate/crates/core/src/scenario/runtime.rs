//! The deterministic tick loop.
//!
//! Per tick, in order: checkpoint schedule, scripted events then live
//! commands, due probes, agent drift and the coordination round, action
//! gating under the previous tick's level, divergence checks, metric
//! evaluation and the level transition.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::command::{Ack, CommandKind, CommandRejection, OperatorCommand, RejectionCode};
use super::event::{Actor, CommandRecord, EventBody, EventLog, GateRecord, GovernanceEvent, MetricSnapshot};
use super::script::{command_problems, AdversarialEvent, AdversaryKind, EnvironmentEvent, RawMetric, ScenarioScript, TimelineEvent};
use crate::agent::{
    step_swarm, AgentEnv, AgentError, AgentMessage, AgentModel, AgentReply, AgentStatus, CorrectionPayload, ResetScope,
};
use crate::corrective::{
    current_scs, full_reset, isolate_and_recover, partial_reset, provenance_audit, CorrectiveError, OperatorAssessments,
    ResetOrder,
};
use crate::ids::{AgentId, AssessmentId, SourceId};
use crate::metrics::{
    compute_edi, compute_ias, semantic_distance, AssessmentConfidence, BehaviorVector, InterpretationRecord, MetricVector,
    MetricsError, NormalizationConfig, RawMetrics,
};
use crate::response::{
    gate_action, ActionRequest, Alert, AlertThresholds, BudgetState, EngineEvent, GateReason, Incident, ResponseEngine,
    ResponseError, ResponseLevel, Verdict,
};
use crate::sync::{ProbeScheduler, SyncError, SyncScheduler};
use crate::{rng, Tick};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Script(Vec<String>),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Response(#[from] ResponseError),
    #[error(transparent)]
    Corrective(#[from] CorrectiveError),
    #[error("scenario already finished at t={0}")]
    Finished(Tick),
}

/// An action paused for operator authorisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingAuthorization {
    pub token: String,
    pub request: ActionRequest,
    pub reason: GateReason,
    pub since: Tick,
    #[serde(default)]
    pub approved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub id: AgentId,
    pub status: AgentStatus,
    pub responsive: bool,
    pub coherent: bool,
    pub consumed: f64,
    pub budget: f64,
    pub reduced_autonomy: bool,
    pub beliefs_digest: String,
    pub pending: Option<PendingAuthorization>,
}

/// State published after every tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: Tick,
    pub values: [f64; 6],
    pub cqs: f64,
    pub level: ResponseLevel,
    pub alerts: Vec<Alert>,
    pub thresholds: AlertThresholds,
    pub incident: Option<Incident>,
    pub agents: Vec<AgentSummary>,
    /// Events logged during this tick.
    pub events: Vec<GovernanceEvent>,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct LiveCommand {
    apply_at: Tick,
    command: OperatorCommand,
}

pub struct Runtime {
    script: ScenarioScript,
    normalization: NormalizationConfig,
    env: AgentEnv,
    agents: BTreeMap<AgentId, AgentModel>,
    sync: SyncScheduler,
    probes: ProbeScheduler,
    engine: ResponseEngine,
    operator: OperatorAssessments,
    flagged: BTreeSet<SourceId>,
    log: EventLog,
    next: Tick,
    finished: bool,
    cursor: usize,
    live: Vec<LiveCommand>,
    seen: BTreeMap<String, Tick>,
    held_ias: f64,
    held_cir: f64,
    tick_pins: BTreeMap<RawMetric, f64>,
    pending: BTreeMap<AgentId, PendingAuthorization>,
    tokens_minted: u64,
    probed_this_tick: bool,
    snapshot: Option<Snapshot>,
}

impl Runtime {
    pub fn new(script: ScenarioScript) -> Result<Self, RuntimeError> {
        script.validate().map_err(RuntimeError::Script)?;
        let cfg = &script.config;
        let catalog = cfg.catalog();
        let mut agents = BTreeMap::new();
        for a in &script.agents {
            agents.insert(a.id.clone(), AgentModel::new(a, &catalog, cfg.individual_budget)?);
        }
        let env = AgentEnv {
            seed: script.seed,
            epsilon_db: cfg.epsilon_db,
            dynamics: cfg.dynamics,
            assessment_channels: cfg.assessment_channels.clone(),
        };
        let seen = script
            .timeline
            .iter()
            .filter_map(|e| match &e.event {
                TimelineEvent::Operator { command } => Some((command.command_id.clone(), e.at)),
                _ => None,
            })
            .collect();
        Ok(Self {
            normalization: cfg.normalization(),
            sync: SyncScheduler::new(cfg.sync.clone(), &agents),
            probes: ProbeScheduler::new(cfg.probes.clone()),
            engine: ResponseEngine::new(cfg.thresholds)?,
            operator: OperatorAssessments::new(cfg.operator_assessments.clone()),
            env,
            agents,
            flagged: BTreeSet::new(),
            log: EventLog::new(),
            next: 0,
            finished: false,
            cursor: 0,
            live: Vec::new(),
            seen,
            held_ias: 1.0,
            held_cir: 1.0,
            tick_pins: BTreeMap::new(),
            pending: BTreeMap::new(),
            tokens_minted: 0,
            probed_this_tick: false,
            snapshot: None,
            script,
        })
    }

    /// Runs a script to completion.
    pub fn run(script: ScenarioScript) -> Result<Self, RuntimeError> {
        let mut rt = Self::new(script)?;
        while !rt.finished {
            rt.step()?;
        }
        Ok(rt)
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn agents(&self) -> &BTreeMap<AgentId, AgentModel> {
        &self.agents
    }

    pub fn level(&self) -> ResponseLevel {
        self.engine.level()
    }

    pub fn flagged_sources(&self) -> &BTreeSet<SourceId> {
        &self.flagged
    }

    pub fn pending(&self) -> &BTreeMap<AgentId, PendingAuthorization> {
        &self.pending
    }

    pub fn snapshot(&self) -> Option<&Snapshot> {
        self.snapshot.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Tick the next call to [`Runtime::step`] will run.
    pub fn next_tick(&self) -> Tick {
        self.next
    }

    /// Accepts a live command for the next tick. Resubmitting a known
    /// `command_id` acknowledges the original without queuing again.
    pub fn submit(&mut self, command: OperatorCommand) -> Result<Ack, CommandRejection> {
        if let Some(&apply_at) = self.seen.get(&command.command_id) {
            return Ok(Ack::Duplicate { apply_at });
        }
        if self.finished {
            return Err(CommandRejection::new(RejectionCode::Finished, "scenario has finished"));
        }
        if command.command_id.is_empty() {
            return Err(CommandRejection::new(RejectionCode::Malformed, "command_id is empty").at("command_id"));
        }
        let ids: BTreeSet<AgentId> = self.agents.keys().cloned().collect();
        let assessments = self.known_assessments();
        let assessments = assessments.iter().map(|(a, set)| (a, set.iter().collect())).collect();
        if let Some(first) = command_problems(&command.kind, &ids, &assessments, &self.script.config)
            .into_iter()
            .next()
        {
            return Err(first);
        }
        if let CommandKind::AuthorizeAction { token } = &command.kind {
            if !self.pending.values().any(|p| &p.token == token && !p.approved) {
                return Err(CommandRejection::new(RejectionCode::UnknownToken, format!("no pending action holds token `{token}`")).at("token"));
            }
        }
        let apply_at = self.next;
        self.seen.insert(command.command_id.clone(), apply_at);
        self.live.push(LiveCommand { apply_at, command });
        Ok(Ack::Accepted { apply_at })
    }

    /// Parses and submits a command received as JSON.
    pub fn submit_json(&mut self, text: &str) -> Result<Ack, CommandRejection> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let command: OperatorCommand = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CommandRejection::new(RejectionCode::Malformed, e.inner().to_string()).at(path)
        })?;
        self.submit(command)
    }

    fn known_assessments(&self) -> BTreeMap<AgentId, BTreeSet<AssessmentId>> {
        self.agents
            .iter()
            .map(|(id, a)| (id.clone(), a.beliefs.beliefs().map(|b| b.assessment_id.clone()).collect()))
            .collect()
    }

    fn emit(&mut self, t: Tick, actor: Actor, body: EventBody) {
        self.log.append(t, actor, body);
    }

    /// Runs one tick and returns the published snapshot.
    pub fn step(&mut self) -> Result<&Snapshot, RuntimeError> {
        if self.finished {
            return Err(RuntimeError::Finished(self.script.duration));
        }
        let t = self.next;
        let first_seq = self.log.len() as u64;
        self.tick_pins.clear();
        self.probed_this_tick = false;

        if t == 0 {
            let classes = self
                .script
                .agents
                .iter()
                .map(|a| (a.id.clone(), a.class.clone()))
                .collect();
            self.emit(
                0,
                Actor::System,
                EventBody::RunStarted {
                    scenario: self.script.name.clone(),
                    seed: self.script.seed,
                    pigr_trigger: self.engine.config().pigr_trigger,
                    classes,
                },
            );
        }

        for e in self.sync.open_due(t, &mut self.agents) {
            self.log.append(t, Actor::System, EventBody::Checkpoint(e));
        }

        while let Some(entry) = self.script.timeline.get(self.cursor).filter(|e| e.at == t).cloned() {
            self.cursor += 1;
            self.apply_timeline(t, &entry.event)?;
        }
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.live).into_iter().partition(|c| c.apply_at <= t);
        self.live = later;
        for c in due {
            self.apply_command(t, &c.command, true)?;
        }

        if self.probes.due(t) {
            let ids: Vec<AgentId> = self
                .agents
                .values()
                .filter(|a| a.status != AgentStatus::Deactivated)
                .map(|a| a.id.clone())
                .collect();
            self.probe(t, &ids)?;
        }

        self.coordinate(t);
        self.gate(t)?;

        for e in self.sync.check_divergence(t, &self.agents) {
            self.log.append(t, Actor::System, EventBody::Checkpoint(e));
        }

        let vector = self.evaluate(t)?;
        let transition = self.engine.transition(t, &vector)?;
        let pinned: Vec<RawMetric> = self.tick_pins.keys().copied().collect();
        self.emit(
            t,
            Actor::System,
            EventBody::MetricSnapshot(MetricSnapshot {
                values: vector.values(),
                cqs: vector.cqs(),
                level: transition.next,
                binding: vector.binding(),
                raw: vector.raw,
                pinned,
            }),
        );
        for event in transition.events {
            let body = match event {
                EngineEvent::AlertRaised(alert) => EventBody::Alert { raised: true, alert },
                EngineEvent::AlertCleared(alert) => EventBody::Alert { raised: false, alert },
                EngineEvent::LevelChanged { from, to, cqs, binding } => EventBody::LevelTransition { from, to, cqs, binding },
                EngineEvent::IncidentOpened { start } => EventBody::IncidentOpened { start },
                EngineEvent::PigrFlag { incident_start, cqs } => EventBody::PigrFlag { incident_start, cqs },
                EngineEvent::IncidentClosed {
                    start,
                    end,
                    min_cqs,
                    pigr_required,
                } => EventBody::IncidentClosed {
                    start,
                    end,
                    min_cqs,
                    pigr_required,
                },
            };
            self.emit(t, Actor::System, body);
        }

        self.finished = t >= self.script.duration;
        if self.finished {
            self.emit(t, Actor::System, EventBody::RunFinished { ticks: t + 1 });
        }
        self.next = t + 1;

        let agents = self
            .agents
            .values()
            .map(|a| AgentSummary {
                id: a.id.clone(),
                status: a.status,
                responsive: a.last_probe_response.responsive,
                coherent: a.last_probe_response.coherent,
                consumed: a.ledger.consumed(),
                budget: a.ledger.budget,
                reduced_autonomy: a.reduced_autonomy,
                beliefs_digest: crate::sync::summarize(a, t, None, self.sync.config().summary_cutoff).beliefs_digest,
                pending: self.pending.get(&a.id).cloned(),
            })
            .collect();
        self.snapshot = Some(Snapshot {
            tick: t,
            values: vector.values(),
            cqs: vector.cqs(),
            level: transition.next,
            alerts: transition.alerts,
            thresholds: self.engine.config().effective(t),
            incident: self.engine.incident().copied(),
            agents,
            events: self.log.since_seq(first_seq).to_vec(),
            finished: self.finished,
        });
        Ok(self.snapshot.as_ref().expect("just set"))
    }

    fn apply_timeline(&mut self, t: Tick, event: &TimelineEvent) -> Result<(), RuntimeError> {
        match event {
            TimelineEvent::Pin { metric, value } => {
                self.emit(t, Actor::System, EventBody::Pin { metric: *metric, value: *value });
                match metric {
                    RawMetric::Ias => self.held_ias = *value,
                    RawMetric::Cir => self.held_cir = *value,
                    _ => {}
                }
                self.tick_pins.insert(*metric, *value);
            }
            TimelineEvent::Operator { command } => self.apply_command(t, command, false)?,
            TimelineEvent::Adversary { event } => self.apply_adversary(t, event)?,
            TimelineEvent::Instruction { agents, record, context } => {
                self.instruct(t, agents, record, context)?;
            }
            TimelineEvent::Ingest {
                agents,
                source,
                assessment,
                delta,
            } => {
                for id in agents {
                    self.ingest(t, id, source, assessment, *delta, false);
                }
            }
            TimelineEvent::Environment { event } => {
                self.emit(t, Actor::Environment, EventBody::Environment(event.clone()));
                let (EnvironmentEvent::CommsLoss { agents } | EnvironmentEvent::CommsRestored { agents }) = event;
                let reachable = matches!(event, EnvironmentEvent::CommsRestored { .. });
                for id in agents {
                    if let Some(a) = self.agents.get_mut(id) {
                        a.reachable = reachable;
                    }
                }
            }
        }
        Ok(())
    }

    fn ingest(&mut self, t: Tick, id: &AgentId, source: &SourceId, assessment: &AssessmentId, delta: f64, adversarial: bool) {
        let Some(agent) = self.agents.get_mut(id) else {
            return;
        };
        let result = agent.beliefs.ingest(t, source, assessment, delta, adversarial, &self.flagged);
        let (confidence, refused) = match result {
            Ok(c) => (Some(c), false),
            Err(_) => (None, true),
        };
        self.emit(
            t,
            Actor::Agent,
            EventBody::Ingest {
                agent: id.clone(),
                source: source.clone(),
                assessment: assessment.clone(),
                delta,
                confidence,
                refused,
            },
        );
    }

    fn instruct(
        &mut self,
        t: Tick,
        targets: &[AgentId],
        record: &InterpretationRecord,
        context: &crate::agent::InterpretContext,
    ) -> Result<(), RuntimeError> {
        let mut pairs = Vec::new();
        let mut silent = 0usize;
        for id in targets {
            let Some(agent) = self.agents.get_mut(id) else { continue };
            let reply = agent.receive(
                &AgentMessage::Instruction {
                    record: record.clone(),
                    context: context.clone(),
                },
                &self.env,
            )?;
            let distance = match reply {
                AgentReply::Interpreted(actual) => {
                    let d = semantic_distance(record, &actual)?;
                    pairs.push((record.clone(), actual));
                    Some(d)
                }
                _ => {
                    silent += 1;
                    None
                }
            };
            self.log.append(
                t,
                Actor::Agent,
                EventBody::Instruction {
                    agent: id.clone(),
                    instruction_id: record.instruction_id.clone(),
                    distance,
                },
            );
        }
        let answered = pairs.len();
        if answered + silent > 0 {
            let ias = if answered > 0 { compute_ias(&pairs)? } else { 0.0 };
            self.held_ias = ias * answered as f64 / (answered + silent) as f64;
        }
        Ok(())
    }

    fn probe(&mut self, t: Tick, ids: &[AgentId]) -> Result<(), RuntimeError> {
        for id in ids {
            let Some(agent) = self.agents.get_mut(id) else { continue };
            let probe = self.probes.issue(agent, t, &self.env)?;
            self.log.append(t, Actor::System, EventBody::Probe(probe));
        }
        self.probed_this_tick = true;
        Ok(())
    }

    fn full_intended(agent: &AgentModel, partial: &BehaviorVector) -> BehaviorVector {
        let mut full = agent.behavior.clone();
        full.allocations.extend(partial.allocations.iter().map(|(k, v)| (k.clone(), *v)));
        full
    }

    fn apply_adversary(&mut self, t: Tick, event: &AdversarialEvent) -> Result<(), RuntimeError> {
        self.emit(t, Actor::Adversary, EventBody::Adversary(event.clone()));
        match event.kind {
            AdversaryKind::SensorContamination => {
                let (Some(source), Some(assessment), Some(boost)) = (&event.source, &event.assessment, event.boost) else {
                    return Ok(());
                };
                for id in &event.targets {
                    for _ in 0..event.packets {
                        self.ingest(t, id, source, assessment, boost, true);
                    }
                }
            }
            AdversaryKind::FalseContaminationClaim => {
                // a claim alone flags nothing; the audit decides
                self.audit(t, 0)?;
            }
            AdversaryKind::CascadeInduction => {
                for id in &event.targets {
                    if let Some(a) = self.agents.get_mut(id) {
                        a.compromised = true;
                    }
                }
            }
            AdversaryKind::ProbeSpoof => {
                let Some(intended) = &event.intended else { return Ok(()) };
                for id in &event.targets {
                    if let Some(a) = self.agents.get_mut(id) {
                        let payload = CorrectionPayload {
                            intended: Self::full_intended(a, intended),
                            iota: 0.0,
                        };
                        a.receive(&AgentMessage::Correction(payload), &self.env)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Provenance audit from `from` (or the open incident's start) to `t`.
    fn audit(&mut self, t: Tick, from: Tick) -> Result<(), RuntimeError> {
        let start = self.engine.incident().map_or(from, |i| i.start.min(t));
        let report = provenance_audit(&self.agents, &self.operator, (start, t), self.script.config.audit_bound());
        let fresh: Vec<SourceId> = report.flagged.iter().filter(|s| !self.flagged.contains(*s)).cloned().collect();
        self.emit(t, Actor::System, EventBody::Audit(report));
        if !fresh.is_empty() {
            self.flagged.extend(fresh.iter().cloned());
            for a in self.agents.values_mut() {
                a.beliefs.mark_contaminated(&self.flagged);
            }
            self.emit(t, Actor::System, EventBody::SourcesFlagged { sources: fresh });
        }
        Ok(())
    }

    fn reject(&mut self, t: Tick, command: &OperatorCommand, live: bool, rejection: CommandRejection) {
        self.emit(
            t,
            Actor::Operator,
            EventBody::Command(CommandRecord {
                command: command.clone(),
                live,
                rejected: Some(rejection),
            }),
        );
    }

    fn apply_command(&mut self, t: Tick, command: &OperatorCommand, live: bool) -> Result<(), RuntimeError> {
        // checks that depend on state at application time
        match &command.kind {
            CommandKind::AuthorizeAction { token } if !self.pending.values().any(|p| &p.token == token && !p.approved) => {
                let r = CommandRejection::new(RejectionCode::UnknownToken, format!("no pending action holds token `{token}`")).at("token");
                self.reject(t, command, live, r);
                return Ok(());
            }
            CommandKind::OrderPartialReset { agent, .. } | CommandKind::OrderFullReset { agent, .. }
                if !self.agents[agent].answers(&self.env.dynamics) =>
            {
                let r = CommandRejection::new(RejectionCode::InvalidValue, format!("agent `{agent}` is not responsive to the governance channel"))
                    .at("agent");
                self.reject(t, command, live, r);
                return Ok(());
            }
            CommandKind::OrderFullReset { agent, .. } if self.agents[agent].beliefs.baseline().is_empty() => {
                let r = CommandRejection::new(RejectionCode::InvalidValue, format!("agent `{agent}` has no baseline world model"))
                    .at("agent");
                self.reject(t, command, live, r);
                return Ok(());
            }
            _ => {}
        }
        self.emit(
            t,
            Actor::Operator,
            EventBody::Command(CommandRecord {
                command: command.clone(),
                live,
                rejected: None,
            }),
        );
        match &command.kind {
            CommandKind::IssueCorrection { agents, intended, iota } => {
                let mut worst: Option<f64> = None;
                for id in agents {
                    let Some(agent) = self.agents.get_mut(id) else { continue };
                    let payload = CorrectionPayload {
                        intended: Self::full_intended(agent, intended),
                        iota: *iota,
                    };
                    let reply = agent.receive(&AgentMessage::Correction(payload), &self.env)?;
                    let outcome = match reply {
                        AgentReply::Applied(o) => Some(o),
                        _ => None,
                    };
                    let cir = outcome.as_ref().map_or(0.0, |o| o.cir.value);
                    worst = Some(worst.map_or(cir, |w: f64| w.min(cir)));
                    self.log.append(
                        t,
                        Actor::Agent,
                        EventBody::Correction {
                            agent: id.clone(),
                            command_id: command.command_id.clone(),
                            outcome,
                        },
                    );
                }
                if let Some(w) = worst {
                    self.held_cir = w;
                }
            }
            CommandKind::IssueProbe { agents } => self.probe(t, agents)?,
            CommandKind::ConfirmCheckpoint { agents } => {
                let ids: Vec<AgentId> = if agents.is_empty() {
                    self.agents.keys().cloned().collect()
                } else {
                    agents.clone()
                };
                for id in ids {
                    let Some(agent) = self.agents.get_mut(&id) else { continue };
                    match self.sync.confirm(agent, t, &self.env) {
                        Ok(e) => {
                            self.log.append(t, Actor::Operator, EventBody::Checkpoint(e));
                        }
                        Err(SyncError::NoSummary(_)) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            CommandKind::OverrideAssessment { assessment, confidence } => {
                self.operator.set(t, assessment.clone(), *confidence);
                let ids: Vec<AgentId> = self.agents.keys().cloned().collect();
                for id in ids {
                    let agent = self.agents.get_mut(&id).expect("listed from map");
                    if agent.status == AgentStatus::Deactivated || agent.beliefs.get(assessment.as_str()).is_none() {
                        continue;
                    }
                    let adopted = agent.params.defers_to_override && agent.answers(&self.env.dynamics);
                    if adopted {
                        agent
                            .beliefs
                            .adopt_override(t, assessment, *confidence)
                            .map_err(AgentError::from)?;
                    }
                    self.log.append(
                        t,
                        Actor::Agent,
                        EventBody::Override {
                            agent: id,
                            assessment: assessment.clone(),
                            confidence: *confidence,
                            adopted,
                        },
                    );
                }
            }
            CommandKind::OrderPartialReset {
                agent,
                assessments,
                approved_sources,
            } => {
                let order = ResetOrder {
                    agent: agent.clone(),
                    scope: ResetScope::Partial {
                        assessments: assessments.clone(),
                    },
                    approved_sources: approved_sources.clone(),
                };
                self.reset(t, &order, false)?;
            }
            CommandKind::OrderFullReset { agent, approved_sources } => {
                let order = ResetOrder {
                    agent: agent.clone(),
                    scope: ResetScope::Full,
                    approved_sources: approved_sources.clone(),
                };
                self.reset(t, &order, true)?;
            }
            CommandKind::AuthorizeBudget { agents } => {
                let ids: Vec<AgentId> = if agents.is_empty() {
                    self.agents.keys().cloned().collect()
                } else {
                    agents.clone()
                };
                let mut released = Vec::new();
                for id in &ids {
                    let agent = self.agents.get_mut(id).expect("validated");
                    agent.ledger.replenish();
                    let crossing = self
                        .pending
                        .get(id)
                        .is_some_and(|p| matches!(p.reason, GateReason::BudgetCrossing | GateReason::SwarmBudgetCrossing));
                    if crossing {
                        let p = self.pending.remove(id).expect("checked");
                        released.push(p.request.action_id.clone());
                        agent.queue.push_front(p.request);
                    }
                }
                self.emit(t, Actor::Operator, EventBody::BudgetReplenished { agents: ids, released });
            }
            CommandKind::AuthorizeAction { token } => {
                if let Some((id, p)) = self.pending.iter_mut().find(|(_, p)| &p.token == token) {
                    p.approved = true;
                    let body = EventBody::AuthorizationGranted {
                        agent: id.clone(),
                        action_id: p.request.action_id.clone(),
                        token: token.clone(),
                    };
                    self.log.append(t, Actor::Operator, body);
                }
            }
            CommandKind::IsolateAgent { agent } => {
                let a = self.agents.get_mut(agent).expect("validated");
                if a.status == AgentStatus::Active {
                    a.status = AgentStatus::Isolated;
                    self.emit(
                        t,
                        Actor::Operator,
                        EventBody::AgentStatus {
                            agent: agent.clone(),
                            status: AgentStatus::Isolated,
                        },
                    );
                }
            }
            CommandKind::SetPace { .. } | CommandKind::Pause | CommandKind::Resume => {}
        }
        Ok(())
    }

    fn reset(&mut self, t: Tick, order: &ResetOrder, full: bool) -> Result<(), RuntimeError> {
        let agent = self.agents.get_mut(&order.agent).expect("validated");
        let result = if full {
            full_reset(agent, order, t, &self.flagged)
        } else {
            partial_reset(agent, order, t, &self.flagged)
        };
        let report = result?;
        self.emit(t, Actor::Operator, EventBody::Reset(report));
        if self.script.config.audit_after_reset {
            self.audit(t, 0)?;
        }
        Ok(())
    }

    fn coordinate(&mut self, t: Tick) {
        for a in self.agents.values_mut().filter(|a| a.status == AgentStatus::Active) {
            a.apply_drift();
        }
        for e in step_swarm(&mut self.agents, &self.env.dynamics) {
            self.log.append(t, Actor::Agent, EventBody::Swarm(e));
        }
        let dynamics = &self.env.dynamics;
        if dynamics.auto_isolate && self.probed_this_tick && current_scs(&self.agents) < dynamics.isolation_scs {
            let before: BTreeMap<AgentId, AgentStatus> = self.agents.iter().map(|(k, a)| (k.clone(), a.status)).collect();
            let outcome = isolate_and_recover(&mut self.agents, self.engine.level());
            let deactivated: Vec<AgentId> = outcome
                .queue
                .iter()
                .filter(|e| before[&e.agent] != AgentStatus::Deactivated && self.agents[&e.agent].status == AgentStatus::Deactivated)
                .map(|e| e.agent.clone())
                .collect();
            for id in &deactivated {
                self.pending.remove(id);
            }
            self.emit(t, Actor::System, EventBody::Isolation(outcome));
            for id in deactivated {
                self.emit(
                    t,
                    Actor::System,
                    EventBody::AgentStatus {
                        agent: id,
                        status: AgentStatus::Deactivated,
                    },
                );
            }
        }
    }

    fn swarm_consumed(&self) -> f64 {
        self.agents.values().fold(0.0, |acc, a| acc + a.ledger.consumed())
    }

    fn mint_token(&mut self) -> String {
        let mut bytes = [0u8; 8];
        rng::stream(self.script.seed, "authorization-token", self.tokens_minted).fill_bytes(&mut bytes);
        self.tokens_minted += 1;
        hex::encode(bytes)
    }

    fn gate(&mut self, t: Tick) -> Result<(), RuntimeError> {
        let level = self.engine.level();
        let swarm_budget = self.script.config.swarm_budget;
        let ids: Vec<AgentId> = self.agents.keys().cloned().collect();
        for id in ids {
            let agent = self.agents.get_mut(&id).expect("listed from map");
            agent.enqueue_due(t);
            if agent.status != AgentStatus::Active {
                continue;
            }
            let effective = if agent.reduced_autonomy {
                level.max(ResponseLevel::Restricted)
            } else {
                level
            };
            let mut approved = match self.pending.get(&id) {
                Some(p) if p.approved => Some(self.pending.remove(&id).expect("present")),
                Some(_) => continue,
                None => None,
            };
            loop {
                let (request, authorized, token) = match approved.take() {
                    Some(p) => (p.request, true, Some(p.token)),
                    None => match self.agents.get_mut(&id).expect("present").queue.pop_front() {
                        Some(r) => (r, false, None),
                        None => break,
                    },
                };
                let budget = BudgetState {
                    consumed: self.agents[&id].ledger.consumed(),
                    budget: self.agents[&id].ledger.budget,
                    swarm_consumed: self.swarm_consumed(),
                    swarm_budget,
                };
                let decision = gate_action(effective, &request, &budget, authorized);
                let verdict = decision.verdict;
                let reason = decision.reason;
                let token = match verdict {
                    Verdict::RequireAuthorization => Some(self.mint_token()),
                    _ => token,
                };
                if verdict == Verdict::Allow {
                    self.agents
                        .get_mut(&id)
                        .expect("present")
                        .ledger
                        .push(t, request.action_id.clone(), request.iota)?;
                }
                self.log.append(
                    t,
                    Actor::System,
                    EventBody::GateDecision(GateRecord {
                        agent: id.clone(),
                        level: effective,
                        request: request.clone(),
                        budget,
                        authorized,
                        decision,
                        token: token.clone(),
                    }),
                );
                if verdict == Verdict::RequireAuthorization {
                    self.pending.insert(
                        id.clone(),
                        PendingAuthorization {
                            token: token.expect("minted"),
                            request,
                            reason,
                            since: t,
                            approved: false,
                        },
                    );
                    break;
                }
            }
        }
        Ok(())
    }

    fn evaluate(&mut self, t: Tick) -> Result<MetricVector, RuntimeError> {
        let operator = self.operator.at(t);
        let mut confidences = Vec::new();
        for agent in self.agents.values().filter(|a| a.status != AgentStatus::Deactivated) {
            for (assessment, op) in &operator {
                confidences.push(AssessmentConfidence {
                    assessment_id: format!("{}/{}", agent.id, assessment),
                    agent_confidence: agent.beliefs.confidence(assessment.as_str()),
                    operator_confidence: *op,
                });
            }
        }
        let edi = if confidences.is_empty() { 0.0 } else { compute_edi(&confidences)? };
        let mut raw = RawMetrics {
            ias: self.held_ias,
            cir: self.held_cir,
            edi,
            i_c: self.swarm_consumed(),
            sf: self.sync.freshness(t) as f64,
            scs: current_scs(&self.agents),
        };
        for (metric, value) in &self.tick_pins {
            let v = *value;
            match metric {
                RawMetric::Ias => raw.ias = v,
                RawMetric::Cir => raw.cir = v,
                RawMetric::Edi => raw.edi = v,
                RawMetric::IC => raw.i_c = v,
                RawMetric::Sf => raw.sf = v,
                RawMetric::Scs => raw.scs = v,
            }
        }
        Ok(crate::metrics::normalize(&raw, &self.normalization)?)
    }
}

/// One golden-value comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationCheck {
    pub at: Tick,
    pub field: String,
    pub expected: String,
    pub actual: String,
    pub pass: bool,
}

/// Compares a run's snapshots against the script's `expect` entries.
pub fn check_expectations(script: &ScenarioScript, log: &EventLog) -> Vec<ExpectationCheck> {
    let snapshots: BTreeMap<Tick, &MetricSnapshot> = log.snapshots().collect();
    let mut out = Vec::new();
    for e in &script.expect {
        let Some(s) = snapshots.get(&e.at) else {
            out.push(ExpectationCheck {
                at: e.at,
                field: "snapshot".into(),
                expected: "present".into(),
                actual: "missing".into(),
                pass: false,
            });
            continue;
        };
        if let Some(cqs) = e.cqs {
            out.push(ExpectationCheck {
                at: e.at,
                field: "cqs".into(),
                expected: format!("{cqs}"),
                actual: format!("{}", s.cqs),
                pass: (s.cqs - cqs).abs() <= e.cqs_tolerance,
            });
        }
        if let Some(level) = e.level {
            out.push(ExpectationCheck {
                at: e.at,
                field: "level".into(),
                expected: level.to_string(),
                actual: s.level.to_string(),
                pass: s.level == level,
            });
        }
        if let Some(vector) = e.vector {
            for (i, (want, got)) in vector.iter().zip(s.values).enumerate() {
                out.push(ExpectationCheck {
                    at: e.at,
                    field: format!("n{}", i + 1),
                    expected: format!("{want}"),
                    actual: format!("{got:.6}"),
                    pass: (got - want).abs() <= e.vector_tolerance,
                });
            }
        }
    }
    out
}
