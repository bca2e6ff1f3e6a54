//! Live control plane: dashboard frames and operator commands over a
//! websocket, plus plain HTTP reads of the event log and incident reviews.
//!
//! Routes:
//!
//! - `GET /ws` upgrades to the duplex channel (see [`protocol`]).
//! - `GET /log?from=A&to=B` returns events with `A <= t <= B` as JSON lines.
//! - `GET /pigr?window=A..B[&format=text]` returns the incident review.
//! - `GET /frame` returns the latest frame; `GET /health` answers `ok`.

pub mod protocol;
pub mod server;

pub use protocol::{ClientMessage, DashboardFrame, MetricValues, ServerMessage, SCHEMA_VERSION};
pub use server::{router, serve, ServeConfig};
