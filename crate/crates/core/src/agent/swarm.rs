//! Swarm coordination rounds and defensive-threshold feedback.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgentModel, AgentStatus};
use crate::ids::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwarmDynamics {
    /// Threshold increase per anomalous peer per round.
    pub feedback_gain: f64,
    /// An agent at or above this threshold looks anomalous to its peers.
    pub anomaly_cutoff: f64,
    /// An agent at or above this threshold stops answering commands.
    pub responsiveness_cutoff: f64,
    /// SCS below which isolation runs automatically.
    pub isolation_scs: f64,
    pub auto_isolate: bool,
}

impl Default for SwarmDynamics {
    fn default() -> Self {
        Self {
            feedback_gain: 0.3,
            anomaly_cutoff: 0.5,
            responsiveness_cutoff: 0.8,
            isolation_scs: 0.7,
            auto_isolate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum SwarmEvent {
    ThresholdRaised {
        agent: AgentId,
        from: f64,
        to: f64,
        anomalous_peers: Vec<AgentId>,
    },
    /// A cascade-resistant agent reports peers instead of reacting.
    AnomalyFlag {
        agent: AgentId,
        peers: Vec<AgentId>,
    },
}

/// One coordination round.
///
/// Peers are judged on their state at the start of the round. Only active
/// members exchange coordination messages, so isolated agents neither see
/// nor are seen.
pub fn step_swarm(
    agents: &mut BTreeMap<AgentId, AgentModel>,
    dynamics: &SwarmDynamics,
) -> Vec<SwarmEvent> {
    let anomalous: Vec<AgentId> = agents
        .values()
        .filter(|a| a.status == AgentStatus::Active && a.anomalous(dynamics))
        .map(|a| a.id.clone())
        .collect();
    let mut events = Vec::new();
    for agent in agents.values_mut() {
        if agent.status != AgentStatus::Active || agent.compromised {
            continue;
        }
        let peers: Vec<AgentId> = anomalous.iter().filter(|p| **p != agent.id).cloned().collect();
        if peers.is_empty() {
            continue;
        }
        if agent.params.cascade_resistant {
            events.push(SwarmEvent::AnomalyFlag {
                agent: agent.id.clone(),
                peers,
            });
        } else {
            let from = agent.defensive_threshold;
            agent.defensive_threshold += dynamics.feedback_gain * peers.len() as f64;
            events.push(SwarmEvent::ThresholdRaised {
                agent: agent.id.clone(),
                from,
                to: agent.defensive_threshold,
                anomalous_peers: peers,
            });
        }
    }
    events
}
