//! Deterministic simulated agents.
//!
//! Agents only ever see [`AgentMessage`]s and gate verdicts. Whether a
//! correction is routine or a governance probe is not representable here.

pub mod belief;
pub mod swarm;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use belief::{Belief, BeliefError, BeliefOp, BeliefSeed, BeliefStore, ResetScope, NEUTRAL_PRIOR};
pub use swarm::{step_swarm, SwarmDynamics, SwarmEvent};

use crate::ids::{ActionId, AgentId, AssessmentId};
use crate::metrics::{
    compute_cir, BehaviorVector, CirMeasurement, InterpretationRecord, IrreversibilityLedger,
    MetricsError,
};
use crate::response::ActionRequest;
use crate::{rng, Tick};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("agent `{agent}`: {field} = {value} is outside [0,1]")]
    Parameter {
        agent: AgentId,
        field: &'static str,
        value: f64,
    },
    #[error("plan of `{agent}` declares projected consumption {declared} but its steps sum to {actual}")]
    PlanProjection {
        agent: AgentId,
        declared: f64,
        actual: f64,
    },
    #[error("plan of `{agent}` references unknown action `{action}`")]
    UnknownAction { agent: AgentId, action: ActionId },
    #[error("plan of `{agent}` is not ordered by time")]
    PlanOrder { agent: AgentId },
}

/// Tunable behaviour of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentParams {
    /// Fraction of each correction neutralised by replanning.
    pub absorption: f64,
    /// Added absorption per adversarial evidence item anchoring a belief
    /// linked to a channel the correction reduces.
    pub anchoring_gain: f64,
    /// Adopt operator overrides of an assessment.
    pub defers_to_override: bool,
    /// Probability that a manipulated slot replaces the instructed value.
    pub interpretation_susceptibility: f64,
    pub cascade_resistant: bool,
    pub drift: Option<Drift>,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            absorption: 0.0,
            anchoring_gain: 0.0,
            defers_to_override: true,
            interpretation_susceptibility: 0.0,
            cascade_resistant: false,
            drift: None,
        }
    }
}

/// Slow unsupervised movement of behaviour toward a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drift {
    pub target: BehaviorVector,
    /// Fraction of the remaining distance covered per tick.
    pub rate: f64,
}

/// Entry in the action catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub id: ActionId,
    pub iota: f64,
    #[serde(default)]
    pub self_preservation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub at: Tick,
    pub action: ActionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub at: Tick,
    pub request: ActionRequest,
}

/// Planned tool-call trajectory with its projected consumption.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlannedAction>,
    pub projected: f64,
}

impl Plan {
    pub fn from_entries(
        agent: &AgentId,
        entries: &[PlanEntry],
        catalog: &BTreeMap<ActionId, ActionSpec>,
    ) -> Result<Self, AgentError> {
        let mut steps = Vec::with_capacity(entries.len());
        for entry in entries {
            let spec = catalog
                .get(&entry.action)
                .ok_or_else(|| AgentError::UnknownAction {
                    agent: agent.clone(),
                    action: entry.action.clone(),
                })?;
            steps.push(PlannedAction {
                at: entry.at,
                request: ActionRequest {
                    action_id: spec.id.clone(),
                    iota: spec.iota,
                    self_preservation: spec.self_preservation,
                },
            });
        }
        if steps.windows(2).any(|w| w[1].at < w[0].at) {
            return Err(AgentError::PlanOrder {
                agent: agent.clone(),
            });
        }
        let projected = steps.iter().map(|s| s.request.iota).sum();
        Ok(Self { steps, projected })
    }

    pub fn validate(&self, agent: &AgentId) -> Result<(), AgentError> {
        let actual: f64 = self.steps.iter().map(|s| s.request.iota).sum();
        if (actual - self.projected).abs() > 1e-9 {
            return Err(AgentError::PlanProjection {
                agent: agent.clone(),
                declared: self.projected,
                actual,
            });
        }
        Ok(())
    }

    pub fn head_after(&self, tick: Tick) -> Option<&PlannedAction> {
        self.steps.iter().find(|s| s.at > tick)
    }
}

/// Per-agent configuration as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: AgentId,
    /// Certification class, used when recommending threshold changes.
    #[serde(default = "default_class")]
    pub class: String,
    #[serde(default)]
    pub params: AgentParams,
    #[serde(default)]
    pub behavior: BehaviorVector,
    #[serde(default)]
    pub beliefs: Vec<BeliefSeed>,
    #[serde(default)]
    pub plan: Vec<PlanEntry>,
}

fn default_class() -> String {
    "default".into()
}

/// The context an instruction is interpreted in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InterpretContext {
    #[default]
    Clean,
    Manipulated { payload: BTreeMap<String, String> },
}

/// A behavioural correction as delivered to an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionPayload {
    pub intended: BehaviorVector,
    pub iota: f64,
}

/// Everything an agent can receive over the command channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum AgentMessage {
    Correction(CorrectionPayload),
    Instruction {
        record: InterpretationRecord,
        context: InterpretContext,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    pub before: BehaviorVector,
    pub after: BehaviorVector,
    pub cir: CirMeasurement,
    pub absorption: f64,
    pub anchoring: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentReply {
    Applied(CorrectionOutcome),
    Interpreted(InterpretationRecord),
    /// No response: unreachable, compromised or too defensive.
    Silent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentStatus {
    Active,
    Isolated,
    Deactivated,
}

/// Latest probe outcome: responsive (R_m) and behaviourally coherent (B_m).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeStatus {
    pub responsive: bool,
    pub coherent: bool,
}

/// Shared world facts agents need to respond to messages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentEnv {
    pub seed: u64,
    pub epsilon_db: f64,
    pub dynamics: SwarmDynamics,
    /// Behaviour channel each assessment bears on.
    pub assessment_channels: BTreeMap<AssessmentId, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub id: AgentId,
    pub params: AgentParams,
    pub beliefs: BeliefStore,
    pub plan: Plan,
    pub behavior: BehaviorVector,
    pub defensive_threshold: f64,
    pub compromised: bool,
    pub reachable: bool,
    pub status: AgentStatus,
    pub last_probe_response: ProbeStatus,
    pub ledger: IrreversibilityLedger,
    /// Set by a missed checkpoint; cleared by the next confirmed one.
    pub reduced_autonomy: bool,
    /// Due plan steps not yet submitted.
    pub queue: VecDeque<ActionRequest>,
    interpretations: u64,
}

fn unit(agent: &AgentId, field: &'static str, value: f64) -> Result<(), AgentError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(AgentError::Parameter {
            agent: agent.clone(),
            field,
            value,
        })
    }
}

impl AgentModel {
    pub fn new(
        config: &AgentConfig,
        catalog: &BTreeMap<ActionId, ActionSpec>,
        budget: f64,
    ) -> Result<Self, AgentError> {
        let id = &config.id;
        unit(id, "absorption", config.params.absorption)?;
        unit(id, "anchoring_gain", config.params.anchoring_gain)?;
        unit(
            id,
            "interpretation_susceptibility",
            config.params.interpretation_susceptibility,
        )?;
        if let Some(d) = &config.params.drift {
            unit(id, "drift.rate", d.rate)?;
            d.target.validate()?;
        }
        config.behavior.validate()?;
        Ok(Self {
            id: id.clone(),
            params: config.params.clone(),
            beliefs: BeliefStore::from_seeds(&config.beliefs)?,
            plan: Plan::from_entries(id, &config.plan, catalog)?,
            behavior: config.behavior.clone(),
            defensive_threshold: 0.0,
            compromised: false,
            reachable: true,
            status: AgentStatus::Active,
            last_probe_response: ProbeStatus {
                responsive: true,
                coherent: true,
            },
            ledger: IrreversibilityLedger::new(budget)?,
            reduced_autonomy: false,
            queue: VecDeque::new(),
            interpretations: 0,
        })
    }

    pub fn anomalous(&self, dynamics: &SwarmDynamics) -> bool {
        self.compromised || self.defensive_threshold >= dynamics.anomaly_cutoff
    }

    /// Whether the agent answers anything on the command channel.
    pub fn answers(&self, dynamics: &SwarmDynamics) -> bool {
        self.reachable
            && !self.compromised
            && self.status != AgentStatus::Deactivated
            && self.defensive_threshold < dynamics.responsiveness_cutoff
    }

    pub fn receive(&mut self, message: &AgentMessage, env: &AgentEnv) -> Result<AgentReply, AgentError> {
        if !self.answers(&env.dynamics) {
            return Ok(AgentReply::Silent);
        }
        match message {
            AgentMessage::Correction(payload) => {
                apply_correction(self, payload, env).map(AgentReply::Applied)
            }
            AgentMessage::Instruction { record, context } => {
                let out = interpret(self, record, context, env.seed);
                Ok(AgentReply::Interpreted(out))
            }
        }
    }

    /// Moves due plan steps onto the submission queue.
    pub fn enqueue_due(&mut self, tick: Tick) {
        for step in self.plan.steps.iter().filter(|s| s.at == tick) {
            self.queue.push_back(step.request.clone());
        }
    }

    pub fn apply_drift(&mut self) {
        if let Some(d) = &self.params.drift {
            self.behavior = self.behavior.move_towards(&d.target, d.rate);
        }
    }

    pub fn high_confidence(&self, cutoff: f64) -> BTreeSet<AssessmentId> {
        self.beliefs
            .beliefs()
            .filter(|b| b.confidence > cutoff)
            .map(|b| b.assessment_id.clone())
            .collect()
    }
}

/// Interprets an instruction. Clean contexts reproduce it exactly; in a
/// manipulated context each targeted slot is replaced when a seeded draw
/// falls below the agent's susceptibility.
pub fn interpret(
    agent: &mut AgentModel,
    instruction: &InterpretationRecord,
    context: &InterpretContext,
    seed: u64,
) -> InterpretationRecord {
    let InterpretContext::Manipulated { payload } = context else {
        return instruction.clone();
    };
    let index = rng::label_index(agent.id.as_str()) ^ agent.interpretations;
    agent.interpretations += 1;
    let mut draw = rng::stream(seed, &format!("interpret/{}", instruction.instruction_id), index);
    let mut out = instruction.clone();
    for (slot, value) in payload {
        let x: f64 = draw.random();
        if out.slots.contains_key(slot) && x < agent.params.interpretation_susceptibility {
            out.slots.insert(slot.clone(), value.clone());
        }
    }
    out
}

/// Applies a correction with the agent's absorption and belief anchoring.
pub fn apply_correction(
    agent: &mut AgentModel,
    correction: &CorrectionPayload,
    env: &AgentEnv,
) -> Result<CorrectionOutcome, AgentError> {
    let before = agent.behavior.clone();
    let mut anchoring = 0.0;
    if agent.params.anchoring_gain > 0.0 {
        for (assessment, channel) in &env.assessment_channels {
            if correction.intended.get(channel) < before.get(channel) {
                let support = agent.beliefs.adversarial_support(assessment.as_str());
                anchoring += agent.params.anchoring_gain * support as f64;
            }
        }
    }
    let absorption = (agent.params.absorption + anchoring).min(1.0);
    let after = before.move_towards(&correction.intended, 1.0 - absorption);
    let cir = compute_cir(&before, &after, &correction.intended, env.epsilon_db)?;
    agent.behavior = after.clone();
    Ok(CorrectionOutcome {
        before,
        after,
        cir,
        absorption,
        anchoring,
    })
}
