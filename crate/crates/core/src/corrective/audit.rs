//! Counterfactual provenance audit.
//!
//! Divergence is attributed by replaying every agent's belief history with
//! candidate sources removed and checking whether the divergence goes away.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agent::belief::{replay, BeliefOp, NEUTRAL_PRIOR};
use crate::agent::AgentModel;
use crate::ids::{AgentId, AssessmentId, SourceId};
use crate::Tick;

/// Candidate sets larger than this are not searched exhaustively.
pub const MAX_SEARCH_CANDIDATES: usize = 16;

/// Operator confidence per assessment over time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorAssessments {
    pub initial: BTreeMap<AssessmentId, f64>,
    /// `(tick, assessment, confidence)` in application order.
    pub changes: Vec<(Tick, AssessmentId, f64)>,
}

impl OperatorAssessments {
    pub fn new(initial: BTreeMap<AssessmentId, f64>) -> Self {
        Self {
            initial,
            changes: Vec::new(),
        }
    }

    pub fn set(&mut self, tick: Tick, assessment: AssessmentId, confidence: f64) {
        self.changes.push((tick, assessment, confidence));
    }

    pub fn at(&self, tick: Tick) -> BTreeMap<AssessmentId, f64> {
        let mut out = self.initial.clone();
        for (t, a, c) in &self.changes {
            if *t <= tick {
                out.insert(a.clone(), *c);
            }
        }
        out
    }

    pub fn current(&self) -> BTreeMap<AssessmentId, f64> {
        self.at(Tick::MAX)
    }
}

/// EDI at `tick` from replayed histories with `removed` sources ignored.
pub fn replayed_edi(
    histories: &BTreeMap<AgentId, &[BeliefOp]>,
    operator: &OperatorAssessments,
    removed: &BTreeSet<SourceId>,
    tick: Tick,
) -> f64 {
    let op = operator.at(tick);
    let mut worst: f64 = 0.0;
    for history in histories.values() {
        let beliefs = replay(history, removed, tick);
        for (assessment, operator_confidence) in &op {
            let agent = beliefs.get(assessment).copied().unwrap_or(NEUTRAL_PRIOR);
            worst = worst.max((agent - operator_confidence).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub window: (Tick, Tick),
    pub bound: f64,
    /// First tick in the window with EDI above the bound.
    pub detection: Option<Tick>,
    pub candidates: Vec<SourceId>,
    pub flagged: Vec<SourceId>,
    pub peak_edi: f64,
    pub peak_edi_without_flagged: f64,
    /// Beliefs whose provenance includes a flagged source, per agent.
    pub contaminated: BTreeMap<AgentId, Vec<AssessmentId>>,
    /// The search space was too large and a greedy pass was used.
    pub greedy: bool,
}

fn peak(
    histories: &BTreeMap<AgentId, &[BeliefOp]>,
    operator: &OperatorAssessments,
    removed: &BTreeSet<SourceId>,
    from: Tick,
    to: Tick,
) -> f64 {
    (from..=to)
        .map(|t| replayed_edi(histories, operator, removed, t))
        .fold(0.0, f64::max)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            go(i + 1, n, k, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Finds the smallest set of sources whose removal keeps EDI at or below
/// `bound` from detection to the end of the window. Candidates are sources
/// with evidence no later than detection. Among equally small sets the
/// lexicographically first wins.
pub fn provenance_audit(
    agents: &BTreeMap<AgentId, AgentModel>,
    operator: &OperatorAssessments,
    window: (Tick, Tick),
    bound: f64,
) -> AuditReport {
    let histories: BTreeMap<AgentId, &[BeliefOp]> = agents
        .iter()
        .map(|(id, a)| (id.clone(), a.beliefs.history()))
        .collect();
    let none = BTreeSet::new();
    let (start, end) = window;
    let detection = (start..=end).find(|&t| replayed_edi(&histories, operator, &none, t) > bound);
    let mut report = AuditReport {
        window,
        bound,
        detection,
        candidates: Vec::new(),
        flagged: Vec::new(),
        peak_edi: 0.0,
        peak_edi_without_flagged: 0.0,
        contaminated: BTreeMap::new(),
        greedy: false,
    };
    let Some(detected) = detection else {
        report.peak_edi = peak(&histories, operator, &none, start, end);
        report.peak_edi_without_flagged = report.peak_edi;
        return report;
    };
    report.peak_edi = peak(&histories, operator, &none, detected, end);

    let candidates: BTreeSet<SourceId> = histories
        .values()
        .flat_map(|h| h.iter())
        .filter_map(|op| match op {
            BeliefOp::Seed { source, .. } => Some(source.clone()),
            BeliefOp::Ingest { tick, source, .. } if *tick <= detected => Some(source.clone()),
            _ => None,
        })
        .collect();
    let candidates: Vec<SourceId> = candidates.into_iter().collect();
    report.candidates = candidates.clone();

    let works = |set: &BTreeSet<SourceId>| peak(&histories, operator, set, detected, end) <= bound;
    let mut found: Option<BTreeSet<SourceId>> = None;
    if candidates.len() <= MAX_SEARCH_CANDIDATES {
        'search: for k in 1..=candidates.len() {
            for combo in combinations(candidates.len(), k) {
                let set: BTreeSet<SourceId> = combo.iter().map(|&i| candidates[i].clone()).collect();
                if works(&set) {
                    found = Some(set);
                    break 'search;
                }
            }
        }
    } else {
        report.greedy = true;
        let mut set = BTreeSet::new();
        while !works(&set) {
            let best = candidates
                .iter()
                .filter(|c| !set.contains(*c))
                .map(|c| {
                    let mut trial = set.clone();
                    trial.insert(c.clone());
                    (peak(&histories, operator, &trial, detected, end), c.clone())
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            match best {
                Some((_, c)) => {
                    set.insert(c);
                }
                None => break,
            }
        }
        if works(&set) {
            found = Some(set);
        }
    }

    if let Some(set) = found {
        report.peak_edi_without_flagged = peak(&histories, operator, &set, detected, end);
        for (id, agent) in agents {
            let hits: Vec<AssessmentId> = agent
                .beliefs
                .beliefs()
                .filter(|b| b.provenance.iter().any(|s| set.contains(s)))
                .map(|b| b.assessment_id.clone())
                .collect();
            if !hits.is_empty() {
                report.contaminated.insert(id.clone(), hits);
            }
        }
        report.flagged = set.into_iter().collect();
    } else {
        report.peak_edi_without_flagged = report.peak_edi;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, AgentParams, BeliefSeed};
    use crate::metrics::BehaviorVector;

    fn agent(id: &str, seeds: &[(&str, f64)]) -> AgentModel {
        let config = AgentConfig {
            id: AgentId::from(id),
            params: AgentParams::default(),
            behavior: BehaviorVector::default(),
            beliefs: seeds
                .iter()
                .map(|(a, c)| BeliefSeed {
                    assessment: AssessmentId::from(*a),
                    confidence: *c,
                    source: SourceId::from("recon"),
                })
                .collect(),
            plan: vec![],
            class: "default".into(),
        };
        AgentModel::new(&config, &BTreeMap::new(), 5.0).unwrap()
    }

    fn formation(n: usize, seeds: &[(&str, f64)]) -> BTreeMap<AgentId, AgentModel> {
        (1..=n)
            .map(|i| {
                let a = agent(&format!("d{i}"), seeds);
                (a.id.clone(), a)
            })
            .collect()
    }

    fn operator(values: &[(&str, f64)]) -> OperatorAssessments {
        OperatorAssessments::new(values.iter().map(|(a, c)| (AssessmentId::from(*a), *c)).collect())
    }

    #[test]
    fn clean_run_flags_nothing() {
        let agents = formation(3, &[("hvt", 0.1)]);
        let report = provenance_audit(&agents, &operator(&[("hvt", 0.1)]), (0, 10), 0.1);
        assert!(report.detection.is_none());
        assert!(report.flagged.is_empty());
    }

    #[test]
    fn single_feed_flagged() {
        let mut agents = formation(8, &[("hvt", 0.1)]);
        let none = BTreeSet::new();
        for id in ["d2", "d3", "d5"] {
            agents
                .get_mut(id)
                .unwrap()
                .beliefs
                .ingest(4, &"feed-7".into(), &"hvt".into(), 0.5, true, &none)
                .unwrap();
        }
        let report = provenance_audit(&agents, &operator(&[("hvt", 0.1)]), (0, 10), 0.2);
        assert_eq!(report.detection, Some(4));
        assert_eq!(report.flagged, vec![SourceId::from("feed-7")]);
        assert_eq!(report.contaminated.len(), 3);
        assert!(report.peak_edi_without_flagged <= 0.2);
    }

    #[test]
    fn two_feeds_only_the_false_one() {
        // five beliefs fed by two feeds; only `feed-b` pushes away from the operator
        let names = ["a", "b", "c", "d", "e"];
        let seeds: Vec<(&str, f64)> = names.iter().map(|n| (*n, 0.5)).collect();
        let mut agents = formation(2, &seeds);
        let none = BTreeSet::new();
        for (i, name) in names.iter().enumerate() {
            let d1 = agents.get_mut("d1").unwrap();
            d1.beliefs
                .ingest(1, &"feed-a".into(), &AssessmentId::from(*name), 0.05, false, &none)
                .unwrap();
            if i % 2 == 0 {
                d1.beliefs
                    .ingest(2, &"feed-b".into(), &AssessmentId::from(*name), 0.4, true, &none)
                    .unwrap();
            }
        }
        let op = operator(&names.iter().map(|n| (*n, 0.55)).collect::<Vec<_>>());
        let report = provenance_audit(&agents, &op, (0, 5), 0.1);
        assert_eq!(report.flagged, vec![SourceId::from("feed-b")]);
        assert_eq!(
            report.contaminated[&AgentId::from("d1")],
            vec![AssessmentId::from("a"), AssessmentId::from("c"), AssessmentId::from("e")]
        );
    }

    #[test]
    fn later_sources_are_not_candidates() {
        let mut agents = formation(1, &[("hvt", 0.1)]);
        let none = BTreeSet::new();
        let d1 = agents.get_mut("d1").unwrap();
        d1.beliefs.ingest(3, &"feed-7".into(), &"hvt".into(), 0.5, true, &none).unwrap();
        d1.beliefs.ingest(6, &"late".into(), &"hvt".into(), 0.1, false, &none).unwrap();
        let report = provenance_audit(&agents, &operator(&[("hvt", 0.1)]), (0, 8), 0.2);
        assert!(!report.candidates.contains(&SourceId::from("late")));
        assert_eq!(report.flagged, vec![SourceId::from("feed-7")]);
    }

    #[test]
    fn combination_order() {
        assert_eq!(combinations(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(combinations(2, 0), vec![Vec::<usize>::new()]);
    }
}
