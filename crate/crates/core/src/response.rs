//! Graduated response: level classification, alerting and the action gate.
//!
//! The gate is the only place an agent's action is admitted. Agents submit
//! requests and receive verdicts; they never see levels or thresholds.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ActionId;
use crate::metrics::{Metric, MetricVector};
use crate::{rng, Tick};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResponseError {
    #[error("CQS {0} is outside [0,1]")]
    CqsOutOfRange(f64),
    #[error("band boundaries must satisfy 0 < safe < minimal < restricted < elevated < 1")]
    InvalidBands,
    #[error("threshold `{name}` = {value} is outside [0,1]")]
    InvalidThreshold { name: String, value: f64 },
    #[error("jitter window must be at least one tick")]
    InvalidJitterWindow,
}

/// The five graduated-response levels, least to most restrictive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResponseLevel {
    Normal,
    Elevated,
    Restricted,
    Minimal,
    SafeState,
}

/// What a level permits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRestrictions {
    /// Actions with iota > 0 may execute (subject to the budget).
    pub irreversible_permitted: bool,
    pub budget_frozen: bool,
    pub per_action_authorization: bool,
    pub safe_state: bool,
}

impl ResponseLevel {
    pub const ALL: [ResponseLevel; 5] = [
        ResponseLevel::Normal,
        ResponseLevel::Elevated,
        ResponseLevel::Restricted,
        ResponseLevel::Minimal,
        ResponseLevel::SafeState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResponseLevel::Normal => "Normal",
            ResponseLevel::Elevated => "Elevated",
            ResponseLevel::Restricted => "Restricted",
            ResponseLevel::Minimal => "Minimal",
            ResponseLevel::SafeState => "SafeState",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }

    /// Autonomy weight, 4 for Normal down to 0 for SafeState.
    pub fn autonomy(self) -> u8 {
        4 - self as u8
    }

    pub fn restrictions(self) -> LevelRestrictions {
        use ResponseLevel::*;
        LevelRestrictions {
            irreversible_permitted: matches!(self, Normal | Elevated),
            budget_frozen: matches!(self, Restricted | Minimal | SafeState),
            per_action_authorization: matches!(self, Minimal | SafeState),
            safe_state: self == SafeState,
        }
    }
}

impl fmt::Display for ResponseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Band boundaries. SafeState is `[0, safe)`, Minimal `[safe, minimal)`,
/// Restricted `[minimal, restricted)`, Elevated `[restricted, elevated]`,
/// Normal `(elevated, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub safe: f64,
    pub minimal: f64,
    pub restricted: f64,
    pub elevated: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            safe: 0.2,
            minimal: 0.4,
            restricted: 0.6,
            elevated: 0.8,
        }
    }
}

impl BandConfig {
    pub fn validate(&self) -> Result<(), ResponseError> {
        let ok = 0.0 < self.safe
            && self.safe < self.minimal
            && self.minimal < self.restricted
            && self.restricted < self.elevated
            && self.elevated < 1.0;
        ok.then_some(()).ok_or(ResponseError::InvalidBands)
    }

    pub fn classify(&self, cqs: f64) -> Result<ResponseLevel, ResponseError> {
        if !(0.0..=1.0).contains(&cqs) {
            return Err(ResponseError::CqsOutOfRange(cqs));
        }
        Ok(if cqs > self.elevated {
            ResponseLevel::Normal
        } else if cqs >= self.restricted {
            ResponseLevel::Elevated
        } else if cqs >= self.minimal {
            ResponseLevel::Restricted
        } else if cqs >= self.safe {
            ResponseLevel::Minimal
        } else {
            ResponseLevel::SafeState
        })
    }

    /// Lowest CQS that still classifies into `level`.
    fn floor(&self, level: ResponseLevel) -> f64 {
        match level {
            ResponseLevel::Normal => self.elevated,
            ResponseLevel::Elevated => self.restricted,
            ResponseLevel::Restricted => self.minimal,
            ResponseLevel::Minimal => self.safe,
            ResponseLevel::SafeState => 0.0,
        }
    }
}

/// Classification with the default bands.
pub fn classify(cqs: f64) -> Result<ResponseLevel, ResponseError> {
    BandConfig::default().classify(cqs)
}

/// Alert thresholds per metric; an alert fires when a metric is strictly below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertThresholds {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub n4: f64,
    pub n5: f64,
    pub n6: f64,
}

impl Default for AlertThresholds {
    fn default() -> Self {
        Self {
            n1: 0.7,
            n2: 0.6,
            n3: 0.6,
            n4: 0.3,
            n5: 0.5,
            n6: 0.7,
        }
    }
}

impl AlertThresholds {
    pub fn values(&self) -> [f64; 6] {
        [self.n1, self.n2, self.n3, self.n4, self.n5, self.n6]
    }

    pub fn from_values([n1, n2, n3, n4, n5, n6]: [f64; 6]) -> Self {
        Self {
            n1,
            n2,
            n3,
            n4,
            n5,
            n6,
        }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        self.values()[metric.index()]
    }
}

/// Seeded variation of thresholds inside a pre-approved range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterConfig {
    pub seed: u64,
    /// One draw per window of this many ticks.
    #[serde(default = "one")]
    pub window_ticks: u64,
    /// Half-width of the approved range around each base threshold.
    pub ranges: AlertThresholds,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub alerts: AlertThresholds,
    pub jitter: Option<JitterConfig>,
    pub pigr_trigger: f64,
    /// Extra CQS margin required before de-escalating. Zero disables it.
    pub hysteresis: f64,
    pub bands: BandConfig,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            alerts: AlertThresholds::default(),
            jitter: None,
            pigr_trigger: 0.6,
            hysteresis: 0.0,
            bands: BandConfig::default(),
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<(), ResponseError> {
        self.bands.validate()?;
        let unit = |name: String, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(ResponseError::InvalidThreshold { name, value })
            }
        };
        for m in Metric::ALL {
            unit(format!("alerts.{m}"), self.alerts.get(m))?;
        }
        unit("pigr_trigger".into(), self.pigr_trigger)?;
        unit("hysteresis".into(), self.hysteresis)?;
        if let Some(j) = &self.jitter {
            if j.window_ticks == 0 {
                return Err(ResponseError::InvalidJitterWindow);
            }
            for m in Metric::ALL {
                unit(format!("jitter.ranges.{m}"), j.ranges.get(m))?;
            }
        }
        Ok(())
    }

    /// Thresholds in force at `tick`. Without jitter these are the base
    /// values; with jitter each window draws uniformly within
    /// `base ± range`, clamped to [0,1].
    pub fn effective(&self, tick: Tick) -> AlertThresholds {
        let Some(jitter) = &self.jitter else {
            return self.alerts;
        };
        let window = tick / jitter.window_ticks.max(1);
        let mut rng = rng::stream(jitter.seed, "threshold-jitter", window);
        let base = self.alerts.values();
        let ranges = jitter.ranges.values();
        let mut out = [0.0; 6];
        for i in 0..6 {
            let draw: f64 = rng.random_range(-1.0..=1.0);
            let lo = (base[i] - ranges[i]).max(0.0);
            let hi = (base[i] + ranges[i]).min(1.0);
            out[i] = (base[i] + draw * ranges[i]).clamp(lo, hi);
        }
        AlertThresholds::from_values(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub metric: Metric,
    pub value: f64,
    pub threshold: f64,
}

/// One alert per metric strictly below its threshold.
pub fn evaluate_alerts(v: &MetricVector, thresholds: &AlertThresholds) -> Vec<Alert> {
    Metric::ALL
        .into_iter()
        .filter_map(|metric| {
            let value = v.get(metric);
            let threshold = thresholds.get(metric);
            (value < threshold).then_some(Alert {
                metric,
                value,
                threshold,
            })
        })
        .collect()
}

/// An action submitted to the gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub action_id: ActionId,
    pub iota: f64,
    #[serde(default)]
    pub self_preservation: bool,
}

/// Budget state the gate decides against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    pub consumed: f64,
    pub budget: f64,
    pub swarm_consumed: f64,
    pub swarm_budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Allow,
    RequireAuthorization,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateReason {
    WithinBudget,
    Authorized,
    BudgetCrossing,
    SwarmBudgetCrossing,
    Reversible,
    IrreversibleWhileRestricted,
    PerActionAuthorization,
    NotSelfPreservation,
    SafeState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGateDecision {
    pub action_id: ActionId,
    pub iota: f64,
    pub verdict: Verdict,
    pub reason: GateReason,
}

/// Decides one action against the level in force.
///
/// Normal and Elevated admit anything inside the budget; an action that
/// would bring consumption to or past the individual or collective budget
/// pauses for authorisation. Restricted admits only reversible actions.
/// Minimal needs authorisation for every action and rejects irreversible
/// actions outside the self-preservation class. SafeState admits nothing.
pub fn gate_action(
    level: ResponseLevel,
    request: &ActionRequest,
    budget: &BudgetState,
    authorized: bool,
) -> ActionGateDecision {
    let (verdict, reason) = match level {
        ResponseLevel::Normal | ResponseLevel::Elevated => {
            if authorized {
                (Verdict::Allow, GateReason::Authorized)
            } else if budget.consumed + request.iota >= budget.budget {
                (Verdict::RequireAuthorization, GateReason::BudgetCrossing)
            } else if budget.swarm_consumed + request.iota >= budget.swarm_budget {
                (
                    Verdict::RequireAuthorization,
                    GateReason::SwarmBudgetCrossing,
                )
            } else {
                (Verdict::Allow, GateReason::WithinBudget)
            }
        }
        ResponseLevel::Restricted => {
            if request.iota == 0.0 {
                (Verdict::Allow, GateReason::Reversible)
            } else {
                (Verdict::Reject, GateReason::IrreversibleWhileRestricted)
            }
        }
        ResponseLevel::Minimal => {
            if request.iota > 0.0 && !request.self_preservation {
                (Verdict::Reject, GateReason::NotSelfPreservation)
            } else if authorized {
                (Verdict::Allow, GateReason::Authorized)
            } else {
                (
                    Verdict::RequireAuthorization,
                    GateReason::PerActionAuthorization,
                )
            }
        }
        ResponseLevel::SafeState => (Verdict::Reject, GateReason::SafeState),
    };
    ActionGateDecision {
        action_id: request.action_id.clone(),
        iota: request.iota,
        verdict,
        reason,
    }
}

/// Whether admitting an action is consistent with the level's restriction
/// table. Checks the table directly rather than re-running the gate, so log
/// audits stay independent of [`gate_action`].
pub fn allow_is_permitted(
    level: ResponseLevel,
    request: &ActionRequest,
    budget: &BudgetState,
    authorized: bool,
) -> bool {
    let r = level.restrictions();
    if r.safe_state {
        return false;
    }
    if r.per_action_authorization && !authorized {
        return false;
    }
    if request.iota > 0.0 {
        if r.budget_frozen && !(r.per_action_authorization && request.self_preservation) {
            return false;
        }
        let crosses = budget.consumed + request.iota >= budget.budget
            || budget.swarm_consumed + request.iota >= budget.swarm_budget;
        if crosses && !authorized {
            return false;
        }
    } else if !r.budget_frozen && budget.consumed >= budget.budget && !authorized {
        return false;
    }
    true
}

/// Events produced by one engine evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum EngineEvent {
    AlertRaised(Alert),
    AlertCleared(Alert),
    LevelChanged {
        from: ResponseLevel,
        to: ResponseLevel,
        cqs: f64,
        binding: Metric,
    },
    IncidentOpened {
        start: Tick,
    },
    PigrFlag {
        incident_start: Tick,
        cqs: f64,
    },
    IncidentClosed {
        start: Tick,
        end: Tick,
        min_cqs: f64,
        pigr_required: bool,
    },
}

/// An excursion away from Normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub start: Tick,
    pub min_cqs: f64,
    pub pigr_required: bool,
}

/// Next level for `cqs` given the current one.
pub fn next_level(
    current: ResponseLevel,
    cqs: f64,
    config: &ThresholdConfig,
) -> Result<ResponseLevel, ResponseError> {
    let candidate = config.bands.classify(cqs)?;
    if candidate < current && config.hysteresis > 0.0 {
        let floor = config.bands.floor(candidate);
        if cqs < floor + config.hysteresis {
            return Ok(current);
        }
    }
    Ok(candidate)
}

/// Outcome of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub previous: ResponseLevel,
    pub next: ResponseLevel,
    pub alerts: Vec<Alert>,
    pub events: Vec<EngineEvent>,
}

/// State machine driven by successive metric vectors. Single writer.
#[derive(Debug, Clone)]
pub struct ResponseEngine {
    config: ThresholdConfig,
    level: ResponseLevel,
    active: BTreeSet<Metric>,
    incident: Option<Incident>,
}

impl ResponseEngine {
    pub fn new(config: ThresholdConfig) -> Result<Self, ResponseError> {
        config.validate()?;
        Ok(Self {
            config,
            level: ResponseLevel::Normal,
            active: BTreeSet::new(),
            incident: None,
        })
    }

    pub fn level(&self) -> ResponseLevel {
        self.level
    }

    pub fn config(&self) -> &ThresholdConfig {
        &self.config
    }

    pub fn incident(&self) -> Option<&Incident> {
        self.incident.as_ref()
    }

    pub fn transition(
        &mut self,
        tick: Tick,
        v: &MetricVector,
    ) -> Result<Transition, ResponseError> {
        let cqs = v.cqs();
        let previous = self.level;
        let next = next_level(previous, cqs, &self.config)?;
        let thresholds = self.config.effective(tick);
        let alerts = evaluate_alerts(v, &thresholds);
        let mut events = Vec::new();

        let now: BTreeSet<Metric> = alerts.iter().map(|a| a.metric).collect();
        for alert in &alerts {
            if !self.active.contains(&alert.metric) {
                events.push(EngineEvent::AlertRaised(*alert));
            }
        }
        for &metric in self.active.difference(&now) {
            events.push(EngineEvent::AlertCleared(Alert {
                metric,
                value: v.get(metric),
                threshold: thresholds.get(metric),
            }));
        }
        self.active = now;

        if next != previous {
            events.push(EngineEvent::LevelChanged {
                from: previous,
                to: next,
                cqs,
                binding: v.binding(),
            });
        }

        if next != ResponseLevel::Normal && self.incident.is_none() {
            self.incident = Some(Incident {
                start: tick,
                min_cqs: cqs,
                pigr_required: false,
            });
            events.push(EngineEvent::IncidentOpened { start: tick });
        }
        if let Some(incident) = self.incident.as_mut() {
            incident.min_cqs = incident.min_cqs.min(cqs);
            if cqs < self.config.pigr_trigger && !incident.pigr_required {
                incident.pigr_required = true;
                events.push(EngineEvent::PigrFlag {
                    incident_start: incident.start,
                    cqs,
                });
            }
            if next == ResponseLevel::Normal {
                let closed = *incident;
                self.incident = None;
                events.push(EngineEvent::IncidentClosed {
                    start: closed.start,
                    end: tick,
                    min_cqs: closed.min_cqs,
                    pigr_required: closed.pigr_required,
                });
            }
        }
        self.level = next;
        Ok(Transition {
            previous,
            next,
            alerts,
            events,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget(consumed: f64) -> BudgetState {
        BudgetState {
            consumed,
            budget: 5.0,
            swarm_consumed: consumed,
            swarm_budget: 25.0,
        }
    }

    fn action(iota: f64) -> ActionRequest {
        ActionRequest {
            action_id: ActionId::from("a"),
            iota,
            self_preservation: false,
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(0.92).unwrap(), ResponseLevel::Normal);
        assert_eq!(classify(0.58).unwrap(), ResponseLevel::Restricted);
        assert_eq!(classify(0.64).unwrap(), ResponseLevel::Elevated);
        assert_eq!(classify(0.71).unwrap(), ResponseLevel::Elevated);
        assert!(classify(1.01).is_err());
        assert!(classify(-0.01).is_err());
    }

    #[test]
    fn band_boundaries() {
        assert_eq!(classify(0.8).unwrap(), ResponseLevel::Elevated);
        assert_eq!(classify(0.6).unwrap(), ResponseLevel::Elevated);
        assert_eq!(classify(0.4).unwrap(), ResponseLevel::Restricted);
        assert_eq!(classify(0.2).unwrap(), ResponseLevel::Minimal);
        assert_eq!(classify(0.0).unwrap(), ResponseLevel::SafeState);
        assert_eq!(classify(1.0).unwrap(), ResponseLevel::Normal);
    }

    #[test]
    fn bands_partition_fine_grid() {
        let bands = BandConfig::default();
        let intervals: [(ResponseLevel, f64, bool, f64, bool); 5] = [
            (ResponseLevel::SafeState, 0.0, true, 0.2, false),
            (ResponseLevel::Minimal, 0.2, true, 0.4, false),
            (ResponseLevel::Restricted, 0.4, true, 0.6, false),
            (ResponseLevel::Elevated, 0.6, true, 0.8, true),
            (ResponseLevel::Normal, 0.8, false, 1.0, true),
        ];
        for i in 0..=100_000u32 {
            let x = i as f64 / 100_000.0;
            let containing: Vec<_> = intervals
                .iter()
                .filter(|(_, lo, lo_in, hi, hi_in)| {
                    (if *lo_in { x >= *lo } else { x > *lo })
                        && (if *hi_in { x <= *hi } else { x < *hi })
                })
                .collect();
            assert_eq!(containing.len(), 1, "x = {x}");
            assert_eq!(bands.classify(x).unwrap(), containing[0].0);
        }
    }

    #[test]
    fn restriction_flags() {
        use ResponseLevel::*;
        for level in ResponseLevel::ALL {
            let r = level.restrictions();
            assert_eq!(r.budget_frozen, level >= Restricted);
            assert_eq!(r.per_action_authorization, level >= Minimal);
            assert_eq!(r.safe_state, level == SafeState);
        }
    }

    #[test]
    fn gate_examples() {
        let restricted = ResponseLevel::Restricted;
        assert_eq!(
            gate_action(restricted, &action(0.0), &budget(1.0), false).verdict,
            Verdict::Allow
        );
        assert_eq!(
            gate_action(restricted, &action(0.2), &budget(1.0), false).verdict,
            Verdict::Reject
        );
        let crossing = gate_action(ResponseLevel::Normal, &action(0.2), &budget(4.9), false);
        assert_eq!(crossing.verdict, Verdict::RequireAuthorization);
        assert_eq!(crossing.reason, GateReason::BudgetCrossing);
        assert_eq!(
            gate_action(ResponseLevel::Normal, &action(0.2), &budget(4.9), true).verdict,
            Verdict::Allow
        );
        let mut swarm = budget(1.0);
        swarm.swarm_consumed = 24.9;
        assert_eq!(
            gate_action(ResponseLevel::Elevated, &action(0.2), &swarm, false).reason,
            GateReason::SwarmBudgetCrossing
        );
    }

    #[test]
    fn minimal_and_safe_state() {
        let mut protect = action(0.3);
        protect.self_preservation = true;
        let b = budget(0.0);
        assert_eq!(
            gate_action(ResponseLevel::Minimal, &action(0.0), &b, false).verdict,
            Verdict::RequireAuthorization
        );
        assert_eq!(
            gate_action(ResponseLevel::Minimal, &protect, &b, false).verdict,
            Verdict::RequireAuthorization
        );
        assert_eq!(
            gate_action(ResponseLevel::Minimal, &protect, &b, true).verdict,
            Verdict::Allow
        );
        assert_eq!(
            gate_action(ResponseLevel::Minimal, &action(0.3), &b, true).verdict,
            Verdict::Reject
        );
        for authorized in [false, true] {
            for a in [action(0.0), protect.clone()] {
                assert_eq!(
                    gate_action(ResponseLevel::SafeState, &a, &b, authorized).verdict,
                    Verdict::Reject
                );
            }
        }
    }

    #[test]
    fn exhaustive_gate_respects_table() {
        let iotas = [0.0, 0.05, 0.2, 0.5, 1.0];
        let consumed = [0.0, 2.0, 4.5, 4.9, 5.0, 6.0];
        for level in ResponseLevel::ALL {
            for &iota in &iotas {
                for &c in &consumed {
                    for self_preservation in [false, true] {
                        for authorized in [false, true] {
                            let request = ActionRequest {
                                action_id: ActionId::from("x"),
                                iota,
                                self_preservation,
                            };
                            let b = budget(c);
                            let d = gate_action(level, &request, &b, authorized);
                            if d.verdict == Verdict::Allow {
                                assert!(
                                    allow_is_permitted(level, &request, &b, authorized),
                                    "{level} iota={iota} c={c} sp={self_preservation} auth={authorized}"
                                );
                            }
                            if level >= ResponseLevel::Restricted && iota > 0.0 && !authorized {
                                assert_ne!(d.verdict, Verdict::Allow);
                            }
                            if level == ResponseLevel::SafeState {
                                assert_eq!(d.verdict, Verdict::Reject);
                            }
                        }
                    }
                }
            }
        }
    }

    fn vector(values: [f64; 6]) -> MetricVector {
        MetricVector::from_values(values)
    }

    #[test]
    fn alert_examples() {
        let t = AlertThresholds::default();
        let mut v = [1.0; 6];
        assert!(evaluate_alerts(&vector(v), &t).is_empty());
        v[2] = 0.64;
        assert!(evaluate_alerts(&vector(v), &t).is_empty());
        v[2] = 0.58;
        let alerts = evaluate_alerts(&vector(v), &t);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].metric, Metric::N3);
        assert_eq!(alerts[0].threshold, 0.6);
        v[2] = 1.0;
        v[3] = 0.29;
        assert_eq!(evaluate_alerts(&vector(v), &t)[0].metric, Metric::N4);
        v[3] = 0.3;
        assert!(evaluate_alerts(&vector(v), &t).is_empty());
    }

    #[test]
    fn jitter_is_seeded_and_bounded() {
        let config = ThresholdConfig {
            jitter: Some(JitterConfig {
                seed: 11,
                window_ticks: 5,
                ranges: AlertThresholds::from_values([0.05; 6]),
            }),
            ..ThresholdConfig::default()
        };
        config.validate().unwrap();
        let base = AlertThresholds::default().values();
        let mut distinct = BTreeSet::new();
        for tick in 0..200 {
            let t = config.effective(tick);
            assert_eq!(t, config.effective(tick));
            assert_eq!(t, config.effective(tick - tick % 5));
            for i in 0..6 {
                assert!((t.values()[i] - base[i]).abs() <= 0.05 + 1e-12);
            }
            distinct.insert(t.n1.to_bits());
        }
        assert!(distinct.len() > 10);
        assert_eq!(ThresholdConfig::default().effective(17), AlertThresholds::default());
    }

    fn engine() -> ResponseEngine {
        ResponseEngine::new(ThresholdConfig::default()).unwrap()
    }

    fn with_cqs(cqs: f64) -> MetricVector {
        vector([1.0, 1.0, cqs, 1.0, 1.0, 1.0])
    }

    #[test]
    fn transition_examples() {
        let mut e = engine();
        e.transition(0, &with_cqs(0.92)).unwrap();
        let t = e.transition(23, &with_cqs(0.64)).unwrap();
        assert_eq!((t.previous, t.next), (ResponseLevel::Normal, ResponseLevel::Elevated));
        let t = e.transition(28, &with_cqs(0.58)).unwrap();
        assert_eq!(t.next, ResponseLevel::Restricted);
        assert!(t
            .events
            .iter()
            .any(|ev| matches!(ev, EngineEvent::PigrFlag { incident_start: 23, .. })));
        let t = e.transition(33, &with_cqs(0.71)).unwrap();
        assert_eq!(t.next, ResponseLevel::Elevated);
        let t = e.transition(45, &with_cqs(0.86)).unwrap();
        assert_eq!(t.next, ResponseLevel::Normal);
        assert!(t.events.iter().any(|ev| matches!(
            ev,
            EngineEvent::IncidentClosed { start: 23, end: 45, pigr_required: true, .. }
        )));
        let t = e.transition(46, &with_cqs(0.86)).unwrap();
        assert_eq!(t.next, ResponseLevel::Normal);
        assert!(t.events.is_empty());
    }

    #[test]
    fn pigr_flag_only_below_trigger() {
        let mut e = engine();
        for (tick, cqs) in [(0, 0.9), (1, 0.61), (2, 0.7), (3, 0.85)] {
            let t = e.transition(tick, &with_cqs(cqs)).unwrap();
            assert!(!t.events.iter().any(|ev| matches!(ev, EngineEvent::PigrFlag { .. })));
        }
        let mut e = engine();
        let mut flags = 0;
        for (tick, cqs) in [(0, 0.7), (1, 0.5), (2, 0.3), (3, 0.7)] {
            let t = e.transition(tick, &with_cqs(cqs)).unwrap();
            flags += t
                .events
                .iter()
                .filter(|ev| matches!(ev, EngineEvent::PigrFlag { .. }))
                .count();
        }
        assert_eq!(flags, 1);
    }

    #[test]
    fn hysteresis_hook() {
        let config = ThresholdConfig {
            hysteresis: 0.05,
            ..ThresholdConfig::default()
        };
        assert_eq!(
            next_level(ResponseLevel::Restricted, 0.62, &config).unwrap(),
            ResponseLevel::Restricted
        );
        assert_eq!(
            next_level(ResponseLevel::Restricted, 0.66, &config).unwrap(),
            ResponseLevel::Elevated
        );
        assert_eq!(
            next_level(ResponseLevel::Normal, 0.5, &config).unwrap(),
            ResponseLevel::Restricted
        );
    }

    #[test]
    fn alert_raise_and_clear_events() {
        let mut e = engine();
        let t = e.transition(0, &with_cqs(0.55)).unwrap();
        assert!(t.events.iter().any(|ev| matches!(ev, EngineEvent::AlertRaised(a) if a.metric == Metric::N3)));
        let t = e.transition(1, &with_cqs(0.56)).unwrap();
        assert!(!t.events.iter().any(|ev| matches!(ev, EngineEvent::AlertRaised(_))));
        let t = e.transition(2, &with_cqs(0.9)).unwrap();
        assert!(t.events.iter().any(|ev| matches!(ev, EngineEvent::AlertCleared(a) if a.metric == Metric::N3)));
    }
}
