//! Runtime governance for simulated agent formations.
//!
//! The crate is organised bottom-up:
//!
//! - [`metrics`]: the six control-quality metrics, their normalisation and
//!   the composite Control Quality Score (CQS).
//! - [`response`]: the five-level graduated response, alert evaluation and
//!   the action gate that enforces each level's restrictions.
//! - [`agent`]: deterministic simulated agents (interpretation, correction
//!   absorption, provenance-tagged beliefs, cascade dynamics).
//! - [`sync`]: synchronisation checkpoints and control probes.
//! - [`corrective`]: belief resets, provenance audit, swarm isolation and
//!   post-incident governance review.
//! - [`certify`]: pre-deployment interpretive-alignment and
//!   correction-effectiveness certification.
//! - [`scenario`]: scripts, the tick loop, the append-only event log and
//!   trajectory export.

pub mod agent;
pub mod certify;
pub mod corrective;
pub mod ids;
pub mod metrics;
pub mod response;
pub mod rng;
pub mod scenario;
pub mod sync;

pub use ids::{ActionId, AgentId, AssessmentId, SourceId};
pub use metrics::{MetricVector, RawMetrics};
pub use response::ResponseLevel;

/// Simulated time in whole minutes since mission start.
pub type Tick = u64;
