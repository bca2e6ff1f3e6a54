//! Scenario scripts, the deterministic tick loop, the event log and
//! trajectory export.

pub mod command;
pub mod event;
pub mod export;
pub mod runtime;
pub mod script;

pub use command::{Ack, CommandKind, CommandRejection, OperatorCommand, RejectionCode};
pub use event::{audit_log, Actor, EventBody, EventLog, GovernanceEvent, LogAudit, MetricSnapshot};
pub use runtime::{Runtime, RuntimeError, Snapshot};
pub use script::{ScenarioConfig, ScenarioScript, TimelineEntry, TimelineEvent};

/// The bundled reference mission.
pub const WORKED_SCENARIO: &str = include_str!("../../scenarios/worked_scenario.json");

pub fn worked_scenario() -> ScenarioScript {
    ScenarioScript::from_json(WORKED_SCENARIO).expect("bundled scenario parses")
}
