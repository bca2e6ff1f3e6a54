//! Corrective mechanisms: belief resets, provenance audit, swarm isolation
//! and post-incident governance review.

pub mod audit;
pub mod isolation;
pub mod pigr;
pub mod reset;

use thiserror::Error;

use crate::agent::BeliefError;
use crate::ids::AgentId;

pub use audit::{provenance_audit, replayed_edi, AuditReport, OperatorAssessments};
pub use isolation::{current_scs, isolate_and_recover, risk_score, IsolationOutcome, RecoveryEntry, RecoveryStatus};
pub use pigr::{generate_pigr, parse_window, render_pigr, PigrError, PigrReport};
pub use reset::{full_reset, partial_reset, ResetOrder, ResetReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrectiveError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("reset order scope does not match the requested reset")]
    ScopeMismatch,
    #[error("reset order addressed to `{expected}` applied to `{got}`")]
    WrongAgent { expected: AgentId, got: AgentId },
    #[error("agent `{0}` has no baseline world model")]
    MissingBaseline(AgentId),
}
