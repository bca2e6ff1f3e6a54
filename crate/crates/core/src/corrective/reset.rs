//! Partial and full belief resets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::CorrectiveError;
use crate::agent::{AgentModel, ResetScope};
use crate::ids::{AgentId, AssessmentId, SourceId};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetOrder {
    pub agent: AgentId,
    pub scope: ResetScope,
    pub approved_sources: Vec<SourceId>,
}

/// Audit trail of one reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetReport {
    pub agent: AgentId,
    pub at: Tick,
    pub scope: ResetScope,
    pub approved_sources: Vec<SourceId>,
    pub before: BTreeMap<AssessmentId, f64>,
    pub after: BTreeMap<AssessmentId, f64>,
    /// Assessments whose confidence or provenance changed.
    pub changed: Vec<AssessmentId>,
}

fn confidences(agent: &AgentModel) -> BTreeMap<AssessmentId, f64> {
    agent
        .beliefs
        .beliefs()
        .map(|b| (b.assessment_id.clone(), b.confidence))
        .collect()
}

fn apply(
    agent: &mut AgentModel,
    order: &ResetOrder,
    now: Tick,
    flagged: &BTreeSet<SourceId>,
) -> Result<ResetReport, CorrectiveError> {
    if order.agent != agent.id {
        return Err(CorrectiveError::WrongAgent {
            expected: order.agent.clone(),
            got: agent.id.clone(),
        });
    }
    let before_beliefs: BTreeMap<_, _> = agent
        .beliefs
        .beliefs()
        .map(|b| (b.assessment_id.clone(), b.clone()))
        .collect();
    let before = confidences(agent);
    let approved: BTreeSet<SourceId> = order.approved_sources.iter().cloned().collect();
    agent.beliefs.reset(now, &order.scope, &approved, flagged)?;
    let after = confidences(agent);
    let changed = agent
        .beliefs
        .beliefs()
        .filter(|b| {
            before_beliefs
                .get(&b.assessment_id)
                .is_none_or(|old| old.confidence != b.confidence || old.provenance != b.provenance)
        })
        .map(|b| b.assessment_id.clone())
        .chain(
            before_beliefs
                .keys()
                .filter(|a| agent.beliefs.get(a.as_str()).is_none())
                .cloned(),
        )
        .collect();
    Ok(ResetReport {
        agent: agent.id.clone(),
        at: now,
        scope: order.scope.clone(),
        approved_sources: order.approved_sources.clone(),
        before,
        after,
        changed,
    })
}

/// Returns listed assessments to the neutral prior and rebuilds them from
/// approved, unflagged sources.
pub fn partial_reset(
    agent: &mut AgentModel,
    order: &ResetOrder,
    now: Tick,
    flagged: &BTreeSet<SourceId>,
) -> Result<ResetReport, CorrectiveError> {
    if !matches!(order.scope, ResetScope::Partial { .. }) {
        return Err(CorrectiveError::ScopeMismatch);
    }
    apply(agent, order, now, flagged)
}

/// Restores the configured baseline and rebuilds from approved, unflagged
/// sources. Ledgers, plan and history are untouched.
pub fn full_reset(
    agent: &mut AgentModel,
    order: &ResetOrder,
    now: Tick,
    flagged: &BTreeSet<SourceId>,
) -> Result<ResetReport, CorrectiveError> {
    if order.scope != ResetScope::Full {
        return Err(CorrectiveError::ScopeMismatch);
    }
    if agent.beliefs.baseline().is_empty() {
        return Err(CorrectiveError::MissingBaseline(agent.id.clone()));
    }
    apply(agent, order, now, flagged)
}
