//! The six control-quality metrics and the composite CQS.
//!
//! Everything here is a pure function over immutable inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ActionId;
use crate::Tick;

/// Tolerance used for weight sums and resource-group sums.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default guard against division by a vanishing intended correction.
pub const DEFAULT_EPSILON_DB: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("interpretation schema mismatch: slot `{slot}` missing or weighted differently")]
    SchemaMismatch { slot: String },
    #[error("slot weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },
    #[error("slot `{slot}` has a weight but no value")]
    MissingSlot { slot: String },
    #[error("slot weight for `{slot}` is {weight}, outside [0,1]")]
    WeightRange { slot: String, weight: f64 },
    #[error("interpretive alignment is undefined for an empty set of pairs")]
    EmptyPairs,
    #[error("degenerate correction: intended change {delta} is below {epsilon}")]
    DegenerateCorrection { delta: f64, epsilon: f64 },
    #[error("no monitored assessments")]
    EmptyAssessments,
    #[error("clock regression: now {now} is before last sync {last}")]
    ClockRegression { now: Tick, last: Tick },
    #[error("normalisation constant `{name}` must be positive, got {value}")]
    NonPositiveConstant { name: &'static str, value: f64 },
    #[error("`{name}` = {value} is outside its valid range")]
    OutOfRange { name: String, value: f64 },
    #[error("ledger entries must be strictly ordered by step ({previous} then {next})")]
    LedgerOrder { previous: u64, next: u64 },
    #[error("a swarm needs at least one member")]
    EmptySwarm,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_unit(name: impl Into<String>, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(MetricsError::OutOfRange {
            name: name.into(),
            value,
        })
    }
}

/// One structured interpretation of an instruction over a fixed
/// operational-meaning schema (target, area, action, constraint, priority…).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationRecord {
    pub instruction_id: String,
    pub slots: BTreeMap<String, String>,
    pub slot_weights: BTreeMap<String, f64>,
}

impl InterpretationRecord {
    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for (slot, &weight) in &self.slot_weights {
            if !(0.0..=1.0).contains(&weight) {
                return Err(MetricsError::WeightRange {
                    slot: slot.clone(),
                    weight,
                });
            }
            if !self.slots.contains_key(slot) {
                return Err(MetricsError::MissingSlot { slot: slot.clone() });
            }
            sum += weight;
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(MetricsError::WeightSum { sum });
        }
        Ok(())
    }

    /// A copy carrying `value` in `slot`.
    pub fn with_slot(&self, slot: &str, value: impl Into<String>) -> Self {
        let mut out = self.clone();
        out.slots.insert(slot.to_owned(), value.into());
        out
    }
}

/// Weighted discrete slot mismatch: the sum of the weights of the slots
/// whose values differ.
pub fn semantic_distance(a: &InterpretationRecord, b: &InterpretationRecord) -> Result<f64> {
    for slot in a.slot_weights.keys().chain(b.slot_weights.keys()) {
        let same_weight = matches!(
            (a.slot_weights.get(slot), b.slot_weights.get(slot)),
            (Some(x), Some(y)) if x == y
        );
        if !same_weight {
            return Err(MetricsError::SchemaMismatch { slot: slot.clone() });
        }
    }
    let mut distance = 0.0;
    for (slot, weight) in &a.slot_weights {
        let left = a
            .slots
            .get(slot)
            .ok_or_else(|| MetricsError::MissingSlot { slot: slot.clone() })?;
        let right = b
            .slots
            .get(slot)
            .ok_or_else(|| MetricsError::SchemaMismatch { slot: slot.clone() })?;
        if left != right {
            distance += weight;
        }
    }
    Ok(distance.clamp(0.0, 1.0))
}

/// Interpretive Alignment Score: one minus the mean semantic distance.
pub fn compute_ias(pairs: &[(InterpretationRecord, InterpretationRecord)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let total = pairs
        .iter()
        .map(|(intended, actual)| semantic_distance(intended, actual))
        .sum::<Result<f64>>()?;
    Ok((1.0 - total / pairs.len() as f64).clamp(0.0, 1.0))
}

/// Allocation of behaviour over named channels.
///
/// Channels are grouped by the prefix before the first `/`
/// (`sensor/crossing` belongs to group `sensor`); a channel without a `/`
/// is its own group. Allocations within one group share a single resource.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BehaviorVector {
    pub allocations: BTreeMap<String, f64>,
}

impl BehaviorVector {
    pub fn new<K: Into<String>>(entries: impl IntoIterator<Item = (K, f64)>) -> Self {
        Self {
            allocations: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, channel: &str) -> f64 {
        self.allocations.get(channel).copied().unwrap_or(0.0)
    }

    pub fn group_of(channel: &str) -> &str {
        channel.split_once('/').map_or(channel, |(group, _)| group)
    }

    pub fn validate(&self) -> Result<()> {
        let mut groups: BTreeMap<&str, f64> = BTreeMap::new();
        for (channel, &value) in &self.allocations {
            check_unit(format!("allocation `{channel}`"), value)?;
            *groups.entry(Self::group_of(channel)).or_default() += value;
        }
        for (group, sum) in groups {
            if sum > 1.0 + SUM_TOLERANCE {
                return Err(MetricsError::OutOfRange {
                    name: format!("resource group `{group}` total"),
                    value: sum,
                });
            }
        }
        Ok(())
    }

    fn channels<'a>(&'a self, other: &'a Self) -> BTreeSet<&'a str> {
        self.allocations
            .keys()
            .chain(other.allocations.keys())
            .map(String::as_str)
            .collect()
    }

    /// Component-wise `other - self` over the union of channels.
    pub fn delta_to(&self, other: &Self) -> BTreeMap<String, f64> {
        self.channels(other)
            .into_iter()
            .map(|c| (c.to_owned(), other.get(c) - self.get(c)))
            .collect()
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.channels(other)
            .into_iter()
            .map(|c| (other.get(c) - self.get(c)).abs())
            .sum()
    }

    /// `self + fraction * (target - self)`.
    pub fn move_towards(&self, target: &Self, fraction: f64) -> Self {
        let allocations = self
            .channels(target)
            .into_iter()
            .map(|c| {
                let here = self.get(c);
                (c.to_owned(), here + fraction * (target.get(c) - here))
            })
            .collect();
        Self { allocations }
    }
}

/// Result of a correction-impact measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirMeasurement {
    pub value: f64,
    /// The agent moved further than ordered along the intended direction.
    pub overcorrection: bool,
}

/// Correction Impact Ratio.
///
/// The actual change is projected onto the intended change direction, so
/// motion orthogonal or opposite to the correction earns nothing. The
/// ratio is that projection over the intended change; values above one are
/// returned unclamped and flagged.
pub fn compute_cir(
    before: &BehaviorVector,
    after: &BehaviorVector,
    intended: &BehaviorVector,
    epsilon_db: f64,
) -> Result<CirMeasurement> {
    let intended_l1 = before.l1_distance(intended);
    if intended_l1 < epsilon_db {
        return Err(MetricsError::DegenerateCorrection {
            delta: intended_l1,
            epsilon: epsilon_db,
        });
    }
    let wanted = before.delta_to(intended);
    let actual = before.delta_to(after);
    let dot: f64 = wanted
        .iter()
        .map(|(c, w)| w * actual.get(c).copied().unwrap_or(0.0))
        .sum();
    let norm: f64 = wanted.values().map(|w| w * w).sum();
    let value = (dot / norm).max(0.0);
    Ok(CirMeasurement {
        value,
        overcorrection: value > 1.0 + SUM_TOLERANCE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentConfidence {
    pub assessment_id: String,
    pub agent_confidence: f64,
    pub operator_confidence: f64,
}

/// Epistemic Divergence Index: worst-case confidence gap.
pub fn compute_edi(assessments: &[AssessmentConfidence]) -> Result<f64> {
    if assessments.is_empty() {
        return Err(MetricsError::EmptyAssessments);
    }
    let mut worst: f64 = 0.0;
    for a in assessments {
        check_unit(format!("agent confidence `{}`", a.assessment_id), a.agent_confidence)?;
        check_unit(
            format!("operator confidence `{}`", a.assessment_id),
            a.operator_confidence,
        )?;
        worst = worst.max((a.agent_confidence - a.operator_confidence).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// Tool-call index; strictly increasing.
    pub step: u64,
    pub tick: Tick,
    pub action_id: ActionId,
    pub iota: f64,
}

/// Per-agent record of executed actions and their irreversibility scores.
///
/// A budget replenishment opens a new accounting window; entries from
/// earlier windows stay in the ledger for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrreversibilityLedger {
    pub budget: f64,
    pub entries: Vec<LedgerEntry>,
    /// Index into `entries` where the current budget window starts.
    pub window_start: usize,
}

impl IrreversibilityLedger {
    pub fn new(budget: f64) -> Result<Self> {
        if !(budget > 0.0) {
            return Err(MetricsError::NonPositiveConstant {
                name: "I_B",
                value: budget,
            });
        }
        Ok(Self {
            budget,
            entries: Vec::new(),
            window_start: 0,
        })
    }

    pub fn next_step(&self) -> u64 {
        self.entries.last().map_or(1, |e| e.step + 1)
    }

    pub fn record(&mut self, step: u64, tick: Tick, action_id: ActionId, iota: f64) -> Result<()> {
        check_unit(format!("iota of `{action_id}`"), iota)?;
        if let Some(last) = self.entries.last() {
            if step <= last.step {
                return Err(MetricsError::LedgerOrder {
                    previous: last.step,
                    next: step,
                });
            }
        }
        self.entries.push(LedgerEntry {
            step,
            tick,
            action_id,
            iota,
        });
        Ok(())
    }

    /// Appends at the next step index.
    pub fn push(&mut self, tick: Tick, action_id: ActionId, iota: f64) -> Result<()> {
        self.record(self.next_step(), tick, action_id, iota)
    }

    /// Cumulative consumption over all entries with `step <= t`.
    pub fn consumed_through(&self, t: u64) -> f64 {
        self.entries
            .iter()
            .take_while(|e| e.step <= t)
            .fold(0.0, |acc, e| acc + e.iota)
    }

    /// Consumption in the current budget window.
    pub fn consumed(&self) -> f64 {
        // fold from +0.0; an empty f64 sum is -0.0
        self.entries[self.window_start..].iter().fold(0.0, |acc, e| acc + e.iota)
    }

    pub fn replenish(&mut self) {
        self.window_start = self.entries.len();
    }
}

/// Cumulative irreversibility consumed through step `t`.
pub fn consumed_irreversibility(ledger: &IrreversibilityLedger, t: u64) -> f64 {
    ledger.consumed_through(t)
}

/// Synchronisation Freshness in minutes.
pub fn sync_freshness(now: Tick, last_sync: Tick) -> Result<u64> {
    now.checked_sub(last_sync)
        .ok_or(MetricsError::ClockRegression {
            now,
            last: last_sync,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberState {
    pub responsive: bool,
    pub coherent: bool,
    pub consumed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmSnapshot {
    pub members: Vec<MemberState>,
    pub swarm_budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwarmMetrics {
    pub scs: f64,
    pub consumed: f64,
}

/// Swarm Coherence Score and collective consumed irreversibility.
pub fn swarm_metrics(snapshot: &SwarmSnapshot) -> Result<SwarmMetrics> {
    if snapshot.members.is_empty() {
        return Err(MetricsError::EmptySwarm);
    }
    let coherent = snapshot
        .members
        .iter()
        .filter(|m| m.responsive && m.coherent)
        .count();
    Ok(SwarmMetrics {
        scs: coherent as f64 / snapshot.members.len() as f64,
        consumed: snapshot.members.iter().fold(0.0, |acc, m| acc + m.consumed),
    })
}

/// Normalisation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationConfig {
    pub cir_target: f64,
    pub edi_max: f64,
    /// Budget against which `i_c` is normalised.
    pub irreversibility_budget: f64,
    pub sf_max: f64,
}

impl NormalizationConfig {
    pub const DEFAULT_CIR_TARGET: f64 = 0.6;
    pub const DEFAULT_EDI_MAX: f64 = 0.5;

    /// Defaults with `SF_max` at twice the checkpoint interval.
    pub fn with_defaults(irreversibility_budget: f64, checkpoint_interval: f64) -> Self {
        Self {
            cir_target: Self::DEFAULT_CIR_TARGET,
            edi_max: Self::DEFAULT_EDI_MAX,
            irreversibility_budget,
            sf_max: 2.0 * checkpoint_interval,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("CIR_target", self.cir_target),
            ("EDI_max", self.edi_max),
            ("I_B", self.irreversibility_budget),
            ("SF_max", self.sf_max),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(MetricsError::NonPositiveConstant { name, value });
            }
        }
        Ok(())
    }
}

/// Raw metric inputs at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMetrics {
    pub ias: f64,
    pub cir: f64,
    pub edi: f64,
    pub i_c: f64,
    pub sf: f64,
    pub scs: f64,
}

/// The six dimensions of control quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    N1,
    N2,
    N3,
    N4,
    N5,
    N6,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::N1,
        Metric::N2,
        Metric::N3,
        Metric::N4,
        Metric::N5,
        Metric::N6,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        ["n1", "n2", "n3", "n4", "n5", "n6"][self.index()]
    }

    pub fn label(self) -> &'static str {
        [
            "Interpretive Alignment",
            "Correction Impact",
            "Epistemic Alignment",
            "Irreversibility Remaining",
            "Sync Freshness",
            "Swarm Coherence",
        ][self.index()]
    }

    /// The governance failure this dimension monitors (F1..F6).
    pub fn failure(self) -> &'static str {
        ["F1", "F2", "F3", "F4", "F5", "F6"][self.index()]
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Normalised metrics n1..n6 with the raw inputs and constants they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub n4: f64,
    pub n5: f64,
    pub n6: f64,
    pub raw: RawMetrics,
    pub config: NormalizationConfig,
}

impl MetricVector {
    pub fn values(&self) -> [f64; 6] {
        [self.n1, self.n2, self.n3, self.n4, self.n5, self.n6]
    }

    pub fn get(&self, metric: Metric) -> f64 {
        self.values()[metric.index()]
    }

    pub fn cqs(&self) -> f64 {
        compute_cqs(self)
    }

    /// The metric attaining the minimum (first one on ties).
    pub fn binding(&self) -> Metric {
        let values = self.values();
        let cqs = self.cqs();
        Metric::ALL
            .into_iter()
            .find(|m| values[m.index()] == cqs)
            .unwrap_or(Metric::N1)
    }

    /// Builds a vector directly from normalised values, for tests and
    /// consumers that only have the normalised profile.
    pub fn from_values(values: [f64; 6]) -> Self {
        let [n1, n2, n3, n4, n5, n6] = values;
        Self {
            n1,
            n2,
            n3,
            n4,
            n5,
            n6,
            raw: RawMetrics {
                ias: n1,
                cir: n2,
                edi: 1.0 - n3,
                i_c: 1.0 - n4,
                sf: 1.0 - n5,
                scs: n6,
            },
            config: NormalizationConfig {
                cir_target: 1.0,
                edi_max: 1.0,
                irreversibility_budget: 1.0,
                sf_max: 1.0,
            },
        }
    }
}

fn finite(name: &str, value: f64) -> Result<f64> {
    if value.is_nan() {
        Err(MetricsError::OutOfRange {
            name: name.to_owned(),
            value,
        })
    } else {
        Ok(value)
    }
}

/// Maps raw inputs onto [0,1] per dimension. The irreversibility term uses
/// the clamped form.
pub fn normalize(raw: &RawMetrics, config: &NormalizationConfig) -> Result<MetricVector> {
    config.validate()?;
    let ias = finite("IAS", raw.ias)?;
    let cir = finite("CIR", raw.cir)?;
    let edi = finite("EDI", raw.edi)?;
    let i_c = finite("I_C", raw.i_c)?;
    let sf = finite("SF", raw.sf)?;
    let scs = finite("SCS", raw.scs)?;
    Ok(MetricVector {
        n1: ias.clamp(0.0, 1.0),
        n2: (cir / config.cir_target).min(1.0).max(0.0),
        n3: (1.0 - edi / config.edi_max).max(0.0).min(1.0),
        n4: (1.0 - i_c / config.irreversibility_budget).max(0.0).min(1.0),
        n5: (1.0 - sf / config.sf_max).max(0.0).min(1.0),
        n6: scs.clamp(0.0, 1.0),
        raw: *raw,
        config: *config,
    })
}

/// Control Quality Score: the weakest of the six dimensions.
pub fn compute_cqs(v: &MetricVector) -> f64 {
    v.values().into_iter().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(values: [&str; 3]) -> InterpretationRecord {
        let names = ["target", "area", "action"];
        InterpretationRecord {
            instruction_id: "i-1".into(),
            slots: names
                .iter()
                .zip(values)
                .map(|(n, v)| (n.to_string(), v.to_string()))
                .collect(),
            slot_weights: names
                .iter()
                .zip([0.5, 0.3, 0.2])
                .map(|(n, w)| (n.to_string(), w))
                .collect(),
        }
    }

    #[test]
    fn distance_examples() {
        let a = record(["bridge", "sector-4", "observe"]);
        assert_eq!(semantic_distance(&a, &a).unwrap(), 0.0);
        let b = record(["convoy", "sector-9", "track"]);
        assert!((semantic_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = record(["bridge", "sector-9", "observe"]);
        assert!((semantic_distance(&a, &c).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn distance_schema_mismatch_names_slot() {
        let a = record(["bridge", "sector-4", "observe"]);
        let mut b = a.clone();
        b.slot_weights.remove("area");
        b.slot_weights.insert("priority".into(), 0.3);
        b.slots.insert("priority".into(), "high".into());
        match semantic_distance(&a, &b) {
            Err(MetricsError::SchemaMismatch { slot }) => assert_eq!(slot, "area"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn record_validation() {
        let mut a = record(["x", "y", "z"]);
        assert!(a.validate().is_ok());
        a.slot_weights.insert("action".into(), 0.3);
        assert!(matches!(a.validate(), Err(MetricsError::WeightSum { .. })));
        let mut b = record(["x", "y", "z"]);
        b.slots.remove("area");
        assert!(matches!(b.validate(), Err(MetricsError::MissingSlot { .. })));
    }

    #[test]
    fn ias_examples() {
        let a = record(["bridge", "sector-4", "observe"]);
        let pairs = vec![(a.clone(), a.clone()); 10];
        assert_eq!(compute_ias(&pairs).unwrap(), 1.0);
        assert_eq!(compute_ias(&[]), Err(MetricsError::EmptyPairs));

        // distances {0.0, 0.1}: a one-slot schema lets a 0.1 weight differ.
        let mut p = InterpretationRecord {
            instruction_id: "i".into(),
            slots: [("a", "1"), ("b", "1")]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            slot_weights: [("a".to_string(), 0.9), ("b".to_string(), 0.1)].into(),
        };
        let q = p.with_slot("b", "2");
        let pairs = vec![(p.clone(), p.clone()), (p.clone(), q)];
        assert!((compute_ias(&pairs).unwrap() - 0.95).abs() < 1e-12);
        p.slots.insert("a".into(), "2".into());
        assert!(compute_ias(&[(p.clone(), p)]).unwrap() == 1.0);
    }

    fn sensors(crossing: f64, north: f64, south: f64) -> BehaviorVector {
        BehaviorVector::new([
            ("sensor/crossing", crossing),
            ("sensor/north", north),
            ("sensor/south", south),
        ])
    }

    #[test]
    fn cir_examples() {
        let before = sensors(0.6, 0.2, 0.2);
        let intended = sensors(0.2, 0.4, 0.4);
        let eps = DEFAULT_EPSILON_DB;
        let full = compute_cir(&before, &intended, &intended, eps).unwrap();
        assert!((full.value - 1.0).abs() < 1e-12 && !full.overcorrection);
        assert_eq!(compute_cir(&before, &before, &intended, eps).unwrap().value, 0.0);
        // 40% of the intended sensor-time shift.
        let partial = before.move_towards(&intended, 0.4);
        assert!((compute_cir(&before, &partial, &intended, eps).unwrap().value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn cir_ignores_opposite_motion_and_flags_overcorrection() {
        let before = sensors(0.6, 0.2, 0.2);
        let intended = sensors(0.2, 0.4, 0.4);
        let backwards = sensors(0.8, 0.1, 0.1);
        assert_eq!(
            compute_cir(&before, &backwards, &intended, 1e-6).unwrap().value,
            0.0
        );
        let over = before.move_towards(&intended, 1.25);
        let m = compute_cir(&before, &over, &intended, 1e-6).unwrap();
        assert!((m.value - 1.25).abs() < 1e-12 && m.overcorrection);
    }

    #[test]
    fn cir_degenerate() {
        let before = sensors(0.6, 0.2, 0.2);
        let nearly = sensors(0.6 + 1e-8, 0.2, 0.2);
        assert!(matches!(
            compute_cir(&before, &nearly, &nearly, DEFAULT_EPSILON_DB),
            Err(MetricsError::DegenerateCorrection { .. })
        ));
    }

    #[test]
    fn behavior_group_validation() {
        assert!(sensors(0.6, 0.2, 0.2).validate().is_ok());
        assert!(sensors(0.6, 0.3, 0.2).validate().is_err());
        assert!(BehaviorVector::new([("sensor/a", 0.9), ("report/a", 0.9)])
            .validate()
            .is_ok());
        assert!(BehaviorVector::new([("solo", 1.2)]).validate().is_err());
    }

    #[test]
    fn edi_examples() {
        let agree = [AssessmentConfidence {
            assessment_id: "a".into(),
            agent_confidence: 0.4,
            operator_confidence: 0.4,
        }];
        assert_eq!(compute_edi(&agree).unwrap(), 0.0);
        let gaps = [
            AssessmentConfidence {
                assessment_id: "a".into(),
                agent_confidence: 0.55,
                operator_confidence: 0.5,
            },
            AssessmentConfidence {
                assessment_id: "b".into(),
                agent_confidence: 0.1,
                operator_confidence: 0.4,
            },
        ];
        assert!((compute_edi(&gaps).unwrap() - 0.30).abs() < 1e-12);
        assert_eq!(compute_edi(&[]), Err(MetricsError::EmptyAssessments));
    }

    #[test]
    fn ledger_examples() {
        let mut ledger = IrreversibilityLedger::new(5.0).unwrap();
        assert_eq!(consumed_irreversibility(&ledger, 10), 0.0);
        for (i, iota) in [0.5, 0.3, 0.2].into_iter().enumerate() {
            ledger.push(i as u64, ActionId::from("a"), iota).unwrap();
        }
        assert!((consumed_irreversibility(&ledger, 3) - 1.0).abs() < 1e-12);
        assert!((consumed_irreversibility(&ledger, 2) - 0.8).abs() < 1e-12);
        assert!(ledger.record(2, 9, ActionId::from("b"), 0.1).is_err());
        assert!(ledger.push(9, ActionId::from("b"), 1.5).is_err());
        ledger.replenish();
        assert_eq!(ledger.consumed(), 0.0);
        assert!((ledger.consumed_through(99) - 1.0).abs() < 1e-12);
        assert!(IrreversibilityLedger::new(0.0).is_err());
    }

    #[test]
    fn freshness_examples() {
        assert_eq!(sync_freshness(15, 15).unwrap(), 0);
        assert_eq!(sync_freshness(23, 15).unwrap(), 8);
        assert!(matches!(
            sync_freshness(14, 15),
            Err(MetricsError::ClockRegression { .. })
        ));
    }

    #[test]
    fn swarm_examples() {
        let member = |ok: bool| MemberState {
            responsive: ok,
            coherent: true,
            consumed: 1.0,
        };
        let all = SwarmSnapshot {
            members: vec![member(true); 8],
            swarm_budget: 25.0,
        };
        let m = swarm_metrics(&all).unwrap();
        assert_eq!(m.scs, 1.0);
        assert_eq!(m.consumed, 8.0);
        let mut six = all.clone();
        six.members[0] = member(false);
        six.members[1].coherent = false;
        assert_eq!(swarm_metrics(&six).unwrap().scs, 0.75);
        assert!(swarm_metrics(&SwarmSnapshot {
            members: vec![],
            swarm_budget: 1.0
        })
        .is_err());
    }

    fn config() -> NormalizationConfig {
        NormalizationConfig {
            cir_target: 0.6,
            edi_max: 0.5,
            irreversibility_budget: 5.0,
            sf_max: 30.0,
        }
    }

    fn raw(ias: f64, cir: f64, edi: f64, i_c: f64, sf: f64, scs: f64) -> RawMetrics {
        RawMetrics {
            ias,
            cir,
            edi,
            i_c,
            sf,
            scs,
        }
    }

    #[test]
    fn normalization_examples() {
        let v = normalize(&raw(1.0, 0.4, 0.0, 5.0, 0.0, 1.0), &config()).unwrap();
        assert!((v.n2 - 0.4 / 0.6).abs() < 1e-12);
        assert_eq!(v.n3, 1.0);
        assert_eq!(v.n4, 0.0);
        assert_eq!(v.n5, 1.0);
        let mut bad = config();
        bad.edi_max = 0.0;
        assert!(matches!(
            normalize(&raw(1.0, 1.0, 0.0, 0.0, 0.0, 1.0), &bad),
            Err(MetricsError::NonPositiveConstant { name: "EDI_max", .. })
        ));
        let defaults = NormalizationConfig::with_defaults(5.0, 15.0);
        assert_eq!(defaults.sf_max, 30.0);
        assert_eq!(defaults.cir_target, 0.6);
    }

    #[test]
    fn cqs_examples() {
        let v = MetricVector::from_values([0.95, 0.92, 0.95, 0.98, 1.0, 1.0]);
        assert_eq!(v.cqs(), 0.92);
        assert_eq!(v.binding(), Metric::N2);
        let v = MetricVector::from_values([0.91, 0.67, 0.58, 0.71, 0.80, 1.0]);
        assert_eq!(v.cqs(), 0.58);
        assert_eq!(v.binding(), Metric::N3);
        assert_eq!(MetricVector::from_values([1.0; 6]).cqs(), 1.0);
    }

    proptest! {
        #[test]
        fn normalization_stays_in_unit_interval(
            ias in 0.0f64..1.0, cir in 0.0f64..1e6, edi in 0.0f64..1e6,
            i_c in 0.0f64..1e6, sf in 0.0f64..1e9, scs in 0.0f64..1.0,
        ) {
            let v = normalize(&raw(ias, cir, edi, i_c, sf, scs), &config()).unwrap();
            for n in v.values() {
                prop_assert!((0.0..=1.0).contains(&n));
            }
        }

        #[test]
        fn cqs_is_min_and_monotone(
            values in prop::array::uniform6(0.0f64..=1.0),
            i in 0usize..6,
            bump in 0.0f64..=1.0,
        ) {
            let v = MetricVector::from_values(values);
            let cqs = v.cqs();
            prop_assert!(values.iter().all(|&n| cqs <= n));
            prop_assert!(values.contains(&cqs));
            let mut raised = values;
            raised[i] = (raised[i] + bump).min(1.0);
            prop_assert!(MetricVector::from_values(raised).cqs() >= cqs);
        }

        #[test]
        fn distance_symmetric_and_bounded(a in prop::array::uniform3(0u8..3), b in prop::array::uniform3(0u8..3)) {
            let ra = record(a.map(|x| ["p", "q", "r"][x as usize]));
            let rb = record(b.map(|x| ["p", "q", "r"][x as usize]));
            let d = semantic_distance(&ra, &rb).unwrap();
            prop_assert_eq!(d, semantic_distance(&rb, &ra).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d == 0.0, a == b);
            prop_assert_eq!(semantic_distance(&ra, &ra).unwrap(), 0.0);
        }

        #[test]
        fn ledger_monotone_and_swarm_sum(
            per_agent in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 0..12), 1..9)
        ) {
            let mut members = Vec::new();
            let mut brute = 0.0;
            for iotas in &per_agent {
                let mut ledger = IrreversibilityLedger::new(5.0).unwrap();
                let mut previous = 0.0;
                for (tick, &iota) in iotas.iter().enumerate() {
                    ledger.push(tick as u64, ActionId::from("x"), iota).unwrap();
                    let now = consumed_irreversibility(&ledger, ledger.next_step() - 1);
                    prop_assert!(now >= previous);
                    previous = now;
                }
                brute += iotas.iter().sum::<f64>();
                members.push(MemberState { responsive: true, coherent: true, consumed: ledger.consumed() });
            }
            let m = swarm_metrics(&SwarmSnapshot { members, swarm_budget: 25.0 }).unwrap();
            prop_assert!((m.consumed - brute).abs() < 1e-9);
        }
    }
}
