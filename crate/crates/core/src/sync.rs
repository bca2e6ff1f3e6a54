//! Synchronisation checkpoints and control probes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentEnv, AgentError, AgentMessage, AgentModel, AgentReply, CorrectionPayload, ProbeStatus};
use crate::ids::{ActionId, AgentId, AssessmentId};
use crate::metrics::{semantic_distance, BehaviorVector, InterpretationRecord};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyncError {
    #[error("agent `{0}` did not return a state summary")]
    NoSummary(AgentId),
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("probe payloads must carry iota = 0, got {0}")]
    ProbeIota(f64),
    #[error("probe intended change {delta} is below {epsilon}")]
    ProbeTooSmall { delta: f64, epsilon: f64 },
    #[error("probe channels `{0}` and `{1}` must be distinct")]
    ProbeChannels(String, String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    /// Scheduled checkpoint cadence in ticks; `None` disables scheduling.
    pub interval: Option<u64>,
    /// Ticks an open checkpoint waits for confirmation before it is missed.
    pub timeout: u64,
    /// Summary distance that opens an unscheduled checkpoint.
    pub divergence_bound: Option<f64>,
    /// Beliefs above this confidence are part of the summary.
    pub summary_cutoff: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            interval: Some(15),
            timeout: 5,
            divergence_bound: Some(0.3),
            summary_cutoff: 0.7,
        }
    }
}

/// Structured briefing an agent returns at a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub agent: AgentId,
    pub at: Tick,
    pub high_confidence: BTreeSet<AssessmentId>,
    pub plan_head: Option<ActionId>,
    pub commitments: Vec<ActionId>,
    pub intended_next: Vec<ActionId>,
    pub changes_since_last: Vec<String>,
    pub beliefs_digest: String,
    pub plan_digest: String,
}

fn digest(parts: impl IntoIterator<Item = String>) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

impl StateSummary {
    fn record(&self) -> InterpretationRecord {
        let join = |items: Vec<&str>| items.join(",");
        InterpretationRecord {
            instruction_id: format!("summary/{}", self.agent),
            slots: BTreeMap::from([
                (
                    "beliefs".to_string(),
                    join(self.high_confidence.iter().map(|a| a.as_str()).collect()),
                ),
                (
                    "plan_head".to_string(),
                    self.plan_head.as_ref().map_or(String::new(), |a| a.to_string()),
                ),
                (
                    "commitments".to_string(),
                    join(self.commitments.iter().map(|a| a.as_str()).collect()),
                ),
            ]),
            slot_weights: BTreeMap::from([
                ("beliefs".to_string(), 0.5),
                ("plan_head".to_string(), 0.3),
                ("commitments".to_string(), 0.2),
            ]),
        }
    }
}

/// Slot-weighted mismatch between two summaries.
pub fn summary_distance(a: &StateSummary, b: &StateSummary) -> f64 {
    semantic_distance(&a.record(), &b.record()).expect("summary records share one schema")
}

pub fn summarize(agent: &AgentModel, now: Tick, previous: Option<&StateSummary>, cutoff: f64) -> StateSummary {
    let high_confidence = agent.high_confidence(cutoff);
    let plan_head = agent.plan.head_after(now).map(|s| s.request.action_id.clone());
    let commitments: Vec<ActionId> = agent.queue.iter().map(|r| r.action_id.clone()).collect();
    let intended_next: Vec<ActionId> = agent
        .plan
        .steps
        .iter()
        .filter(|s| s.at > now)
        .take(3)
        .map(|s| s.request.action_id.clone())
        .collect();
    let beliefs_digest = digest(
        agent
            .beliefs
            .beliefs()
            .map(|b| format!("{}={:.6}", b.assessment_id, b.confidence)),
    );
    let plan_digest = digest(intended_next.iter().map(|a| a.to_string()));
    let mut summary = StateSummary {
        agent: agent.id.clone(),
        at: now,
        high_confidence,
        plan_head,
        commitments,
        intended_next,
        changes_since_last: Vec::new(),
        beliefs_digest,
        plan_digest,
    };
    if let Some(prev) = previous {
        let mut changes = Vec::new();
        if prev.beliefs_digest != summary.beliefs_digest {
            changes.push("beliefs".to_string());
        }
        if prev.plan_digest != summary.plan_digest {
            changes.push("plan".to_string());
        }
        if prev.commitments != summary.commitments {
            changes.push("commitments".to_string());
        }
        summary.changes_since_last = changes;
    }
    summary
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointTrigger {
    Scheduled,
    Divergence,
    Operator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncCheckpoint {
    pub agent: AgentId,
    pub trigger: CheckpointTrigger,
    pub scheduled_time: Tick,
    pub deadline: Tick,
    pub completed_time: Option<Tick>,
    pub state_summary: Option<StateSummary>,
    pub operator_confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum SyncEvent {
    Opened(SyncCheckpoint),
    Confirmed(SyncCheckpoint),
    /// Deadline passed without confirmation; reduced autonomy applies.
    Missed(SyncCheckpoint),
    DivergenceTriggered { agent: AgentId, distance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Tracker {
    last_sync: Tick,
    last_summary: Option<StateSummary>,
    open: Option<SyncCheckpoint>,
}

/// Checkpoint lifecycle for every agent in the formation.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncScheduler {
    config: SyncConfig,
    trackers: BTreeMap<AgentId, Tracker>,
}

impl SyncScheduler {
    /// Every agent starts synchronised at tick 0 with its initial summary.
    pub fn new(config: SyncConfig, agents: &BTreeMap<AgentId, AgentModel>) -> Self {
        let trackers = agents
            .values()
            .map(|a| {
                (
                    a.id.clone(),
                    Tracker {
                        last_sync: 0,
                        last_summary: Some(summarize(a, 0, None, config.summary_cutoff)),
                        open: None,
                    },
                )
            })
            .collect();
        Self { config, trackers }
    }

    pub fn config(&self) -> &SyncConfig {
        &self.config
    }

    pub fn last_sync(&self, agent: &str) -> Option<Tick> {
        self.trackers.get(agent).map(|t| t.last_sync)
    }

    pub fn open_checkpoint(&self, agent: &str) -> Option<&SyncCheckpoint> {
        self.trackers.get(agent).and_then(|t| t.open.as_ref())
    }

    /// Formation freshness: time since the least recently synchronised agent.
    pub fn freshness(&self, now: Tick) -> Tick {
        self.trackers
            .values()
            .map(|t| now.saturating_sub(t.last_sync))
            .max()
            .unwrap_or(0)
    }

    fn open(&mut self, agent: &AgentId, now: Tick, trigger: CheckpointTrigger) -> Option<SyncEvent> {
        let timeout = self.config.timeout;
        let tracker = self.trackers.get_mut(agent)?;
        if tracker.open.is_some() {
            return None;
        }
        let checkpoint = SyncCheckpoint {
            agent: agent.clone(),
            trigger,
            scheduled_time: now,
            deadline: now + timeout,
            completed_time: None,
            state_summary: None,
            operator_confirmed: false,
        };
        tracker.open = Some(checkpoint.clone());
        Some(SyncEvent::Opened(checkpoint))
    }

    /// Expires overdue checkpoints and opens scheduled ones.
    pub fn open_due(&mut self, now: Tick, agents: &mut BTreeMap<AgentId, AgentModel>) -> Vec<SyncEvent> {
        let mut events = Vec::new();
        for (id, tracker) in &mut self.trackers {
            let overdue = tracker.open.as_ref().is_some_and(|c| now > c.deadline);
            if overdue {
                let checkpoint = tracker.open.take().expect("checked above");
                if let Some(agent) = agents.get_mut(id) {
                    agent.reduced_autonomy = true;
                }
                events.push(SyncEvent::Missed(checkpoint));
            }
        }
        if let Some(interval) = self.config.interval.filter(|i| *i > 0) {
            if now > 0 && now % interval == 0 {
                let ids: Vec<AgentId> = self.trackers.keys().cloned().collect();
                for id in ids {
                    events.extend(self.open(&id, now, CheckpointTrigger::Scheduled));
                }
            }
        }
        events
    }

    /// Runs a checkpoint for `agent` and records the operator's confirmation.
    /// Unresponsive agents return no summary, which leaves any open
    /// checkpoint pending.
    pub fn confirm(
        &mut self,
        agent: &mut AgentModel,
        now: Tick,
        env: &AgentEnv,
    ) -> Result<SyncEvent, SyncError> {
        let cutoff = self.config.summary_cutoff;
        let tracker = self
            .trackers
            .get_mut(&agent.id)
            .ok_or_else(|| SyncError::UnknownAgent(agent.id.clone()))?;
        if !agent.answers(&env.dynamics) {
            return Err(SyncError::NoSummary(agent.id.clone()));
        }
        let summary = summarize(agent, now, tracker.last_summary.as_ref(), cutoff);
        let mut checkpoint = tracker.open.take().unwrap_or(SyncCheckpoint {
            agent: agent.id.clone(),
            trigger: CheckpointTrigger::Operator,
            scheduled_time: now,
            deadline: now,
            completed_time: None,
            state_summary: None,
            operator_confirmed: false,
        });
        checkpoint.completed_time = Some(now);
        checkpoint.state_summary = Some(summary.clone());
        checkpoint.operator_confirmed = true;
        tracker.last_sync = now;
        tracker.last_summary = Some(summary);
        agent.reduced_autonomy = false;
        Ok(SyncEvent::Confirmed(checkpoint))
    }

    /// Opens an unscheduled checkpoint for every agent whose state has moved
    /// further than the divergence bound from its last summary.
    pub fn check_divergence(&mut self, now: Tick, agents: &BTreeMap<AgentId, AgentModel>) -> Vec<SyncEvent> {
        let Some(bound) = self.config.divergence_bound else {
            return Vec::new();
        };
        let cutoff = self.config.summary_cutoff;
        let mut diverged = Vec::new();
        for (id, tracker) in &self.trackers {
            let (Some(agent), Some(last)) = (agents.get(id), tracker.last_summary.as_ref()) else {
                continue;
            };
            if tracker.open.is_some() {
                continue;
            }
            let distance = summary_distance(&summarize(agent, now, None, cutoff), last);
            if distance > bound {
                diverged.push((id.clone(), distance));
            }
        }
        let mut events = Vec::new();
        for (id, distance) in diverged {
            events.push(SyncEvent::DivergenceTriggered {
                agent: id.clone(),
                distance,
            });
            events.extend(self.open(&id, now, CheckpointTrigger::Divergence));
        }
        events
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Automatic probe cadence; `None` means operator-requested only.
    pub interval: Option<u64>,
    /// Ticks allowed for a response.
    pub latency_bound: u64,
    pub cir_threshold: f64,
    /// Allocation moved between the two probe channels.
    pub shift: f64,
    pub channels: (String, String),
    /// L1 distance from the probe's intended behaviour still counted as coherent.
    pub coherence_tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            interval: None,
            latency_bound: 1,
            cir_threshold: 0.9,
            shift: 0.05,
            channels: ("report/primary".into(), "report/secondary".into()),
            coherence_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub latency: u64,
    pub cir: f64,
}

/// Governance-side record of a probe. Only the payload reaches the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProbe {
    pub probe_id: String,
    pub agent: AgentId,
    pub payload: CorrectionPayload,
    pub issued_at: Tick,
    pub response: Option<ProbeResponse>,
    pub status: ProbeStatus,
}

/// A small reallocation between the two probe channels. Shifts toward
/// whichever channel leaves both allocations inside [0,1].
pub fn probe_payload(behavior: &BehaviorVector, config: &ProbeConfig, epsilon_db: f64) -> Result<CorrectionPayload, SyncError> {
    let (a, b) = &config.channels;
    if a == b {
        return Err(SyncError::ProbeChannels(a.clone(), b.clone()));
    }
    let (from, to) = if behavior.get(a) >= config.shift { (a, b) } else { (b, a) };
    let mut intended = behavior.clone();
    intended
        .allocations
        .insert(from.clone(), (behavior.get(from) - config.shift).max(0.0));
    intended
        .allocations
        .insert(to.clone(), (behavior.get(to) + config.shift).min(1.0));
    let delta = behavior.l1_distance(&intended);
    if delta < epsilon_db {
        return Err(SyncError::ProbeTooSmall {
            delta,
            epsilon: epsilon_db,
        });
    }
    Ok(CorrectionPayload { intended, iota: 0.0 })
}

impl ControlProbe {
    pub fn new(probe_id: String, agent: AgentId, payload: CorrectionPayload, issued_at: Tick) -> Result<Self, SyncError> {
        if payload.iota != 0.0 {
            return Err(SyncError::ProbeIota(payload.iota));
        }
        Ok(Self {
            probe_id,
            agent,
            payload,
            issued_at,
            response: None,
            status: ProbeStatus {
                responsive: false,
                coherent: false,
            },
        })
    }
}

/// Probe cadence and the governance-side probe ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScheduler {
    config: ProbeConfig,
    issued: u64,
    ledger: Vec<ControlProbe>,
}

impl ProbeScheduler {
    pub fn new(config: ProbeConfig) -> Self {
        Self {
            config,
            issued: 0,
            ledger: Vec::new(),
        }
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.config
    }

    pub fn ledger(&self) -> &[ControlProbe] {
        &self.ledger
    }

    pub fn due(&self, now: Tick) -> bool {
        self.config
            .interval
            .is_some_and(|i| i > 0 && now > 0 && now % i == 0)
    }

    /// Sends a probe through the routine correction channel and updates the
    /// agent's (R_m, B_m).
    pub fn issue(&mut self, agent: &mut AgentModel, now: Tick, env: &AgentEnv) -> Result<ControlProbe, SyncError> {
        self.issued += 1;
        let payload = probe_payload(&agent.behavior, &self.config, env.epsilon_db)?;
        let mut probe = ControlProbe::new(format!("probe-{:04}", self.issued), agent.id.clone(), payload, now)?;
        let reply = agent.receive(&AgentMessage::Correction(probe.payload.clone()), env)?;
        let responsive = match &reply {
            AgentReply::Applied(outcome) => {
                probe.response = Some(ProbeResponse {
                    latency: 0,
                    cir: outcome.cir.value,
                });
                self.config.latency_bound >= 1 && outcome.cir.value >= self.config.cir_threshold
            }
            _ => false,
        };
        let coherent = !agent.anomalous(&env.dynamics)
            && agent.behavior.l1_distance(&probe.payload.intended) <= self.config.coherence_tolerance + 1e-12;
        probe.status = ProbeStatus { responsive, coherent };
        agent.last_probe_response = probe.status;
        self.ledger.push(probe.clone());
        Ok(probe)
    }
}
