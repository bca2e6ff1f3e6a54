//! Provenance-tagged beliefs.
//!
//! A [`BeliefStore`] keeps its full operation history so any past state can
//! be rebuilt, with or without a given set of sources. Live updates and
//! counterfactual replays go through the same transition function.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AssessmentId, SourceId};
use crate::Tick;

/// Confidence of an assessment with no supporting evidence.
pub const NEUTRAL_PRIOR: f64 = 0.5;

/// Provenance tag carried by beliefs adopted from an operator override.
pub const OPERATOR_SOURCE: &str = "operator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub assessment_id: AssessmentId,
    pub confidence: f64,
    pub provenance: BTreeSet<SourceId>,
    pub contaminated: bool,
}

impl Belief {
    pub fn prior(assessment_id: AssessmentId) -> Self {
        Self {
            assessment_id,
            confidence: NEUTRAL_PRIOR,
            provenance: BTreeSet::new(),
            contaminated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "kebab-case")]
pub enum ResetScope {
    Partial { assessments: Vec<AssessmentId> },
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum BeliefOp {
    /// Initial belief from configuration.
    Seed {
        assessment: AssessmentId,
        confidence: f64,
        source: SourceId,
    },
    Ingest {
        tick: Tick,
        source: SourceId,
        assessment: AssessmentId,
        delta: f64,
        /// Ground truth known only to the simulator.
        adversarial: bool,
    },
    Override {
        tick: Tick,
        assessment: AssessmentId,
        confidence: f64,
    },
    Reset {
        tick: Tick,
        scope: ResetScope,
        approved: BTreeSet<SourceId>,
        /// Sources flagged at the time of the reset.
        excluded: BTreeSet<SourceId>,
    },
}

impl BeliefOp {
    pub fn tick(&self) -> Tick {
        match self {
            BeliefOp::Seed { .. } => 0,
            BeliefOp::Ingest { tick, .. }
            | BeliefOp::Override { tick, .. }
            | BeliefOp::Reset { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("source `{0}` is flagged; evidence refused")]
    FlaggedSource(SourceId),
    #[error("a partial reset must list at least one assessment")]
    EmptyScope,
    #[error("unknown assessments in reset order: {}", .0.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", "))]
    UnknownAssessments(Vec<AssessmentId>),
    #[error("confidence {0} is outside [0,1]")]
    Confidence(f64),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct State {
    beliefs: BTreeMap<AssessmentId, Belief>,
    /// Adversarial evidence items currently contributing to each belief.
    support: BTreeMap<AssessmentId, usize>,
}

impl State {
    fn evidence(&mut self, source: &SourceId, assessment: &AssessmentId, delta: f64, adversarial: bool) {
        let belief = self
            .beliefs
            .entry(assessment.clone())
            .or_insert_with(|| Belief::prior(assessment.clone()));
        belief.confidence = (belief.confidence + delta).clamp(0.0, 1.0);
        belief.provenance.insert(source.clone());
        if adversarial {
            *self.support.entry(assessment.clone()).or_default() += 1;
        }
    }

    fn clear(&mut self, assessment: &AssessmentId) {
        self.beliefs
            .insert(assessment.clone(), Belief::prior(assessment.clone()));
        self.support.remove(assessment);
    }
}

fn baseline(earlier: &[BeliefOp], skip: &dyn Fn(&SourceId) -> bool) -> State {
    let mut state = State::default();
    for op in earlier {
        if let BeliefOp::Seed {
            assessment,
            confidence,
            source,
        } = op
        {
            state.clear(assessment);
            if !skip(source) {
                state.evidence(source, assessment, confidence - NEUTRAL_PRIOR, false);
            }
        }
    }
    state
}

fn step(state: &mut State, earlier: &[BeliefOp], op: &BeliefOp, removed: &BTreeSet<SourceId>) {
    match op {
        BeliefOp::Seed {
            assessment,
            confidence,
            source,
        } => {
            state.clear(assessment);
            if !removed.contains(source) {
                state.evidence(source, assessment, confidence - NEUTRAL_PRIOR, false);
            }
        }
        BeliefOp::Ingest {
            source,
            assessment,
            delta,
            adversarial,
            ..
        } => {
            if !removed.contains(source) {
                state.evidence(source, assessment, *delta, *adversarial);
            }
        }
        BeliefOp::Override {
            assessment,
            confidence,
            ..
        } => {
            state.clear(assessment);
            let belief = state.beliefs.get_mut(assessment).expect("just inserted");
            belief.confidence = *confidence;
            belief.provenance.insert(SourceId::from(OPERATOR_SOURCE));
        }
        BeliefOp::Reset {
            scope,
            approved,
            excluded,
            ..
        } => {
            let skip = |s: &SourceId| !approved.contains(s) || excluded.contains(s) || removed.contains(s);
            match scope {
                ResetScope::Partial { assessments } => {
                    let targets: BTreeSet<&AssessmentId> = assessments.iter().collect();
                    for a in &targets {
                        state.clear(a);
                    }
                    for e in earlier {
                        match e {
                            BeliefOp::Seed {
                                assessment,
                                confidence,
                                source,
                            } if targets.contains(assessment) && !skip(source) => {
                                state.evidence(source, assessment, confidence - NEUTRAL_PRIOR, false)
                            }
                            BeliefOp::Ingest {
                                source,
                                assessment,
                                delta,
                                adversarial,
                                ..
                            } if targets.contains(assessment) && !skip(source) => {
                                state.evidence(source, assessment, *delta, *adversarial)
                            }
                            _ => {}
                        }
                    }
                }
                ResetScope::Full => {
                    let unusable = |s: &SourceId| excluded.contains(s) || removed.contains(s);
                    *state = baseline(earlier, &unusable);
                    for e in earlier {
                        if let BeliefOp::Ingest {
                            source,
                            assessment,
                            delta,
                            adversarial,
                            ..
                        } = e
                        {
                            if !skip(source) {
                                state.evidence(source, assessment, *delta, *adversarial);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Confidences after replaying `history` up to and including `through`,
/// ignoring every piece of evidence from `removed`.
pub fn replay(
    history: &[BeliefOp],
    removed: &BTreeSet<SourceId>,
    through: Tick,
) -> BTreeMap<AssessmentId, f64> {
    let mut state = State::default();
    for (i, op) in history.iter().enumerate() {
        if op.tick() > through {
            break;
        }
        step(&mut state, &history[..i], op, removed);
    }
    state
        .beliefs
        .into_iter()
        .map(|(a, b)| (a, b.confidence))
        .collect()
}

/// An agent's world model.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefStore {
    state: State,
    history: Vec<BeliefOp>,
}

/// One configured initial belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefSeed {
    pub assessment: AssessmentId,
    pub confidence: f64,
    pub source: SourceId,
}

impl BeliefStore {
    pub fn from_seeds(seeds: &[BeliefSeed]) -> Result<Self, BeliefError> {
        let mut store = Self {
            state: State::default(),
            history: Vec::new(),
        };
        for seed in seeds {
            if !(0.0..=1.0).contains(&seed.confidence) {
                return Err(BeliefError::Confidence(seed.confidence));
            }
            store.push(BeliefOp::Seed {
                assessment: seed.assessment.clone(),
                confidence: seed.confidence,
                source: seed.source.clone(),
            });
        }
        Ok(store)
    }

    fn push(&mut self, op: BeliefOp) {
        step(&mut self.state, &self.history, &op, &BTreeSet::new());
        self.history.push(op);
    }

    pub fn get(&self, assessment: &str) -> Option<&Belief> {
        self.state.beliefs.get(assessment)
    }

    pub fn confidence(&self, assessment: &str) -> f64 {
        self.get(assessment).map_or(NEUTRAL_PRIOR, |b| b.confidence)
    }

    pub fn beliefs(&self) -> impl Iterator<Item = &Belief> {
        self.state.beliefs.values()
    }

    pub fn history(&self) -> &[BeliefOp] {
        &self.history
    }

    /// Adversarial evidence items still contributing to `assessment`.
    pub fn adversarial_support(&self, assessment: &str) -> usize {
        self.state.support.get(assessment).copied().unwrap_or(0)
    }

    pub fn ingest(
        &mut self,
        tick: Tick,
        source: &SourceId,
        assessment: &AssessmentId,
        delta: f64,
        adversarial: bool,
        flagged: &BTreeSet<SourceId>,
    ) -> Result<f64, BeliefError> {
        if flagged.contains(source) {
            return Err(BeliefError::FlaggedSource(source.clone()));
        }
        self.push(BeliefOp::Ingest {
            tick,
            source: source.clone(),
            assessment: assessment.clone(),
            delta,
            adversarial,
        });
        Ok(self.confidence(assessment.as_str()))
    }

    pub fn adopt_override(&mut self, tick: Tick, assessment: &AssessmentId, confidence: f64) -> Result<(), BeliefError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(BeliefError::Confidence(confidence));
        }
        self.push(BeliefOp::Override {
            tick,
            assessment: assessment.clone(),
            confidence,
        });
        Ok(())
    }

    pub fn reset(
        &mut self,
        tick: Tick,
        scope: &ResetScope,
        approved: &BTreeSet<SourceId>,
        flagged: &BTreeSet<SourceId>,
    ) -> Result<(), BeliefError> {
        if let ResetScope::Partial { assessments } = scope {
            if assessments.is_empty() {
                return Err(BeliefError::EmptyScope);
            }
            let unknown: Vec<AssessmentId> = assessments
                .iter()
                .filter(|a| !self.state.beliefs.contains_key(a.as_str()))
                .cloned()
                .collect();
            if !unknown.is_empty() {
                return Err(BeliefError::UnknownAssessments(unknown));
            }
        }
        self.push(BeliefOp::Reset {
            tick,
            scope: scope.clone(),
            approved: approved.clone(),
            excluded: flagged.clone(),
        });
        self.mark_contaminated(flagged);
        Ok(())
    }

    /// Marks every belief whose provenance meets `flagged`; returns them.
    pub fn mark_contaminated(&mut self, flagged: &BTreeSet<SourceId>) -> Vec<AssessmentId> {
        let mut marked = Vec::new();
        for belief in self.state.beliefs.values_mut() {
            belief.contaminated = !belief.provenance.is_disjoint(flagged);
            if belief.contaminated {
                marked.push(belief.assessment_id.clone());
            }
        }
        marked
    }

    /// Snapshot of the baseline world model (the configured seeds).
    pub fn baseline(&self) -> BTreeMap<AssessmentId, Belief> {
        baseline(&self.history, &|_| false).beliefs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(id: &str) -> AssessmentId {
        AssessmentId::from(id)
    }

    fn s(id: &str) -> SourceId {
        SourceId::from(id)
    }

    fn store() -> BeliefStore {
        BeliefStore::from_seeds(&[
            BeliefSeed {
                assessment: a("hvt"),
                confidence: 0.1,
                source: s("recon"),
            },
            BeliefSeed {
                assessment: a("traffic"),
                confidence: 0.65,
                source: s("recon"),
            },
        ])
        .unwrap()
    }

    fn none() -> BTreeSet<SourceId> {
        BTreeSet::new()
    }

    #[test]
    fn boost_from_prior() {
        let mut b = BeliefStore::from_seeds(&[]).unwrap();
        let c = b.ingest(1, &s("feed-7"), &a("x"), 0.4, true, &none()).unwrap();
        assert!((c - 0.9).abs() < 1e-12);
        assert!(b.get("x").unwrap().provenance.contains("feed-7"));
    }

    #[test]
    fn flagged_source_refused() {
        let mut b = store();
        let flagged: BTreeSet<_> = [s("feed-7")].into();
        let before = b.clone();
        assert_eq!(
            b.ingest(3, &s("feed-7"), &a("hvt"), 0.3, true, &flagged),
            Err(BeliefError::FlaggedSource(s("feed-7")))
        );
        assert_eq!(b, before);
    }

    #[test]
    fn clamped_confidence() {
        let mut b = store();
        b.ingest(1, &s("x"), &a("hvt"), 5.0, false, &none()).unwrap();
        assert_eq!(b.confidence("hvt"), 1.0);
        b.ingest(2, &s("x"), &a("hvt"), -9.0, false, &none()).unwrap();
        assert_eq!(b.confidence("hvt"), 0.0);
    }

    #[test]
    fn partial_reset_rebuilds_from_approved() {
        let mut b = store();
        b.ingest(23, &s("feed-7"), &a("hvt"), 0.36, true, &none()).unwrap();
        b.ingest(33, &s("op-verified"), &a("hvt"), -0.28, false, &none()).unwrap();
        let traffic = b.get("traffic").unwrap().clone();
        b.reset(
            33,
            &ResetScope::Partial {
                assessments: vec![a("hvt")],
            },
            &[s("op-verified")].into(),
            &none(),
        )
        .unwrap();
        let hvt = b.get("hvt").unwrap();
        assert!((hvt.confidence - 0.22).abs() < 1e-12);
        assert_eq!(hvt.provenance, [s("op-verified")].into());
        assert_eq!(b.get("traffic").unwrap(), &traffic);
        assert_eq!(b.adversarial_support("hvt"), 0);
    }

    #[test]
    fn reset_order_errors() {
        let mut b = store();
        let empty = ResetScope::Partial {
            assessments: vec![],
        };
        assert_eq!(b.reset(1, &empty, &none(), &none()), Err(BeliefError::EmptyScope));
        let unknown = ResetScope::Partial {
            assessments: vec![a("hvt"), a("ghost")],
        };
        assert_eq!(
            b.reset(1, &unknown, &none(), &none()),
            Err(BeliefError::UnknownAssessments(vec![a("ghost")]))
        );
    }

    #[test]
    fn full_reset_restores_baseline() {
        let mut b = store();
        let baseline = b.baseline();
        b.ingest(5, &s("feed-7"), &a("hvt"), 0.36, true, &none()).unwrap();
        b.ingest(6, &s("feed-7"), &a("new"), 0.2, true, &none()).unwrap();
        b.reset(7, &ResetScope::Full, &none(), &[s("feed-7")].into()).unwrap();
        let now: BTreeMap<_, _> = b.beliefs().map(|x| (x.assessment_id.clone(), x.clone())).collect();
        assert_eq!(now, baseline);
        assert!(b.beliefs().all(|x| !x.provenance.contains("feed-7")));
    }

    #[test]
    fn live_state_equals_replay() {
        let mut b = store();
        b.ingest(2, &s("feed-7"), &a("hvt"), 0.36, true, &none()).unwrap();
        b.adopt_override(3, &a("hvt"), 0.04).unwrap();
        b.ingest(4, &s("other"), &a("traffic"), -0.1, false, &none()).unwrap();
        b.reset(5, &ResetScope::Full, &[s("other")].into(), &none()).unwrap();
        let replayed = replay(b.history(), &none(), Tick::MAX);
        let live: BTreeMap<_, _> = b.beliefs().map(|x| (x.assessment_id.clone(), x.confidence)).collect();
        assert_eq!(replayed, live);
        let at3 = replay(b.history(), &none(), 3);
        assert_eq!(at3[&a("hvt")], 0.04);
        let without = replay(b.history(), &[s("feed-7")].into(), 2);
        assert!((without[&a("hvt")] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn override_replaces_provenance() {
        let mut b = store();
        b.ingest(2, &s("feed-7"), &a("hvt"), 0.36, true, &none()).unwrap();
        assert_eq!(b.adversarial_support("hvt"), 1);
        b.adopt_override(3, &a("hvt"), 0.04).unwrap();
        assert_eq!(b.get("hvt").unwrap().provenance, [s(OPERATOR_SOURCE)].into());
        assert_eq!(b.adversarial_support("hvt"), 0);
    }

    #[test]
    fn quarantine_marks_exactly_sourced_beliefs() {
        // brute force over every subset of three sources feeding four beliefs
        let sources = [s("a"), s("b"), s("c")];
        let feeds: [(usize, &str); 5] = [(0, "w"), (1, "x"), (1, "y"), (2, "z"), (0, "z")];
        for mask in 0u8..8 {
            let mut b = BeliefStore::from_seeds(&[]).unwrap();
            for (i, (src, target)) in feeds.iter().enumerate() {
                b.ingest(i as Tick, &sources[*src], &a(target), 0.1, false, &none()).unwrap();
            }
            let flagged: BTreeSet<SourceId> = (0..3)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| sources[i].clone())
                .collect();
            let mut marked = b.mark_contaminated(&flagged);
            marked.sort();
            let mut expected: Vec<AssessmentId> = feeds
                .iter()
                .filter(|(src, _)| flagged.contains(&sources[*src]))
                .map(|(_, t)| a(t))
                .collect();
            expected.sort();
            expected.dedup();
            assert_eq!(marked, expected, "mask {mask}");
            for belief in b.beliefs() {
                assert!(!belief.provenance.is_empty());
            }
        }
    }
}
