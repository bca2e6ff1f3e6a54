//! Swarm isolation, reformation and recovery.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentModel, AgentStatus};
use crate::ids::AgentId;
use crate::metrics::{swarm_metrics, MemberState, SwarmSnapshot};
use crate::response::ResponseLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryStatus {
    /// Direct command accepted; rejoins the coordination graph.
    Recovered,
    Deactivated,
    /// Neither recovery path reached the agent; stays isolated and queued.
    Unrecovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryEntry {
    pub agent: AgentId,
    pub risk: f64,
    pub status: RecoveryStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationOutcome {
    pub responsive: Vec<AgentId>,
    pub isolated: Vec<AgentId>,
    pub queue: Vec<RecoveryEntry>,
    pub scs_before: f64,
    pub scs_after: f64,
}

/// Risk of continued autonomous operation: autonomy weight of the level the
/// agent operates at, times the share of its budget already consumed.
pub fn risk_score(agent: &AgentModel, level: ResponseLevel) -> f64 {
    let effective = if agent.reduced_autonomy {
        level.max(ResponseLevel::Restricted)
    } else {
        level
    };
    f64::from(effective.autonomy()) * agent.ledger.consumed() / agent.ledger.budget
}

pub fn member_states(agents: &BTreeMap<AgentId, AgentModel>) -> Vec<MemberState> {
    agents
        .values()
        .map(|a| MemberState {
            responsive: a.last_probe_response.responsive,
            coherent: a.last_probe_response.coherent,
            consumed: a.ledger.consumed(),
        })
        .collect()
}

pub fn current_scs(agents: &BTreeMap<AgentId, AgentModel>) -> f64 {
    swarm_metrics(&SwarmSnapshot {
        members: member_states(agents),
        swarm_budget: 1.0,
    })
    .map_or(0.0, |m| m.scs)
}

/// Severs every agent that failed its last probe, then works the recovery
/// queue in descending risk order (ties by id).
pub fn isolate_and_recover(agents: &mut BTreeMap<AgentId, AgentModel>, level: ResponseLevel) -> IsolationOutcome {
    let scs_before = current_scs(agents);
    let severed: Vec<AgentId> = agents
        .values()
        .filter(|a| a.status != AgentStatus::Deactivated)
        .filter(|a| !(a.last_probe_response.responsive && a.last_probe_response.coherent))
        .map(|a| a.id.clone())
        .collect();
    for id in &severed {
        agents.get_mut(id).expect("listed from map").status = AgentStatus::Isolated;
    }
    let responsive: Vec<AgentId> = agents
        .values()
        .filter(|a| a.status == AgentStatus::Active)
        .map(|a| a.id.clone())
        .collect();

    let mut ranked: Vec<(f64, AgentId)> = severed
        .iter()
        .map(|id| (risk_score(&agents[id], level), id.clone()))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    let mut queue = Vec::with_capacity(ranked.len());
    for (risk, id) in ranked {
        let agent = agents.get_mut(&id).expect("listed from map");
        let status = if agent.reachable && !agent.compromised {
            agent.defensive_threshold = 0.0;
            agent.status = AgentStatus::Active;
            RecoveryStatus::Recovered
        } else if agent.reachable {
            agent.status = AgentStatus::Deactivated;
            agent.queue.clear();
            RecoveryStatus::Deactivated
        } else {
            RecoveryStatus::Unrecovered
        };
        queue.push(RecoveryEntry { agent: id, risk, status });
    }
    IsolationOutcome {
        responsive,
        isolated: severed,
        queue,
        scs_before,
        scs_after: current_scs(agents),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, AgentParams, ProbeStatus};
    use crate::metrics::BehaviorVector;
    use crate::ActionId;

    fn formation(n: usize) -> BTreeMap<AgentId, AgentModel> {
        (1..=n)
            .map(|i| {
                let config = AgentConfig {
                    id: AgentId::new(format!("d{i}")),
                    params: AgentParams::default(),
                    behavior: BehaviorVector::default(),
                    beliefs: vec![],
                    plan: vec![],
                    class: "default".into(),
                };
                let a = AgentModel::new(&config, &BTreeMap::new(), 5.0).unwrap();
                (a.id.clone(), a)
            })
            .collect()
    }

    fn sever(agents: &mut BTreeMap<AgentId, AgentModel>, id: &str) {
        agents.get_mut(id).unwrap().last_probe_response = ProbeStatus {
            responsive: false,
            coherent: false,
        };
    }

    #[test]
    fn two_of_eight_severed() {
        let mut agents = formation(8);
        sever(&mut agents, "d2");
        sever(&mut agents, "d7");
        for id in ["d2", "d7"] {
            agents.get_mut(id).unwrap().reachable = false;
        }
        let out = isolate_and_recover(&mut agents, ResponseLevel::Elevated);
        assert_eq!(out.responsive.len(), 6);
        assert_eq!(out.isolated, vec![AgentId::from("d2"), AgentId::from("d7")]);
        assert_eq!(out.scs_after, 0.75);
        assert!(out.queue.iter().all(|e| e.status == RecoveryStatus::Unrecovered));
    }

    #[test]
    fn nothing_severed_is_identity() {
        let mut agents = formation(8);
        let before = agents.clone();
        let out = isolate_and_recover(&mut agents, ResponseLevel::Normal);
        assert!(out.isolated.is_empty() && out.queue.is_empty());
        assert_eq!(agents, before);
    }

    #[test]
    fn highest_consumption_ranked_first() {
        let mut agents = formation(3);
        for (id, iota) in [("d1", 0.5), ("d2", 1.0), ("d3", 0.2)] {
            sever(&mut agents, id);
            agents.get_mut(id).unwrap().ledger.push(1, ActionId::from("x"), iota).unwrap();
        }
        agents.get_mut("d1").unwrap().compromised = true;
        let out = isolate_and_recover(&mut agents, ResponseLevel::Elevated);
        let order: Vec<&str> = out.queue.iter().map(|e| e.agent.as_str()).collect();
        assert_eq!(order, ["d2", "d1", "d3"]);
        assert!((out.queue[0].risk - 3.0 * 1.0 / 5.0).abs() < 1e-12);
        assert_eq!(out.queue[1].status, RecoveryStatus::Deactivated);
        assert_eq!(out.queue[0].status, RecoveryStatus::Recovered);
    }

    #[test]
    fn responsive_agents_never_removed() {
        let mut agents = formation(8);
        for id in ["d1", "d4", "d8"] {
            sever(&mut agents, id);
        }
        let healthy: Vec<AgentId> = ["d2", "d3", "d5", "d6", "d7"].iter().map(|s| AgentId::from(*s)).collect();
        let out = isolate_and_recover(&mut agents, ResponseLevel::Normal);
        for id in &healthy {
            assert!(out.responsive.contains(id));
            assert!(!out.isolated.contains(id));
        }
    }
}
