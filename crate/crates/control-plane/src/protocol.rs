//! Wire messages. Every message is one JSON object with a `type`
//! discriminator and the integer `schema` version.

use serde::{Deserialize, Serialize};

use amagf_core::response::{Alert, AlertThresholds, Incident};
use amagf_core::scenario::runtime::AgentSummary;
use amagf_core::scenario::{Ack, CommandRejection, GovernanceEvent, OperatorCommand, RejectionCode, Snapshot};
use amagf_core::{ResponseLevel, Tick};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub n4: f64,
    pub n5: f64,
    pub n6: f64,
}

/// Dashboard state for one tick, built from the runtime's snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DashboardFrame {
    pub tick: Tick,
    pub metrics: MetricValues,
    pub cqs: f64,
    pub level: ResponseLevel,
    pub alerts: Vec<Alert>,
    pub thresholds: AlertThresholds,
    pub incident: Option<Incident>,
    pub agents: Vec<AgentSummary>,
    /// Events logged during this tick.
    pub events: Vec<GovernanceEvent>,
    pub finished: bool,
}

impl From<&Snapshot> for DashboardFrame {
    fn from(s: &Snapshot) -> Self {
        let [n1, n2, n3, n4, n5, n6] = s.values;
        Self {
            tick: s.tick,
            metrics: MetricValues { n1, n2, n3, n4, n5, n6 },
            cqs: s.cqs,
            level: s.level,
            alerts: s.alerts.clone(),
            thresholds: s.thresholds,
            incident: s.incident,
            agents: s.agents.clone(),
            events: s.events.clone(),
            finished: s.finished,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ServerMessage {
    Hello {
        schema: u32,
        scenario: String,
        duration: Tick,
        next_tick: Tick,
        paused: bool,
        ms_per_tick: u64,
    },
    Frame {
        schema: u32,
        frame: Box<DashboardFrame>,
    },
    Ack {
        schema: u32,
        command_id: String,
        #[serde(flatten)]
        ack: Ack,
    },
    Error {
        schema: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command_id: Option<String>,
        #[serde(flatten)]
        rejection: CommandRejection,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClientMessage {
    Command {
        schema: u32,
        /// Static operator token, when the server requires one.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<String>,
        command: OperatorCommand,
    },
}

impl ClientMessage {
    pub fn command(command: OperatorCommand) -> Self {
        ClientMessage::Command {
            schema: SCHEMA_VERSION,
            token: None,
            command,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    #[serde(rename = "type")]
    kind: String,
    schema: u32,
    #[serde(default)]
    token: Option<String>,
    command: serde_json::Value,
}

fn malformed(message: impl Into<String>, path: impl Into<String>) -> CommandRejection {
    CommandRejection::new(RejectionCode::Malformed, message).at(path)
}

/// Parses a client message, reporting the failing field path. The command
/// id is recovered when possible so the error can be correlated.
pub fn parse_client(text: &str) -> Result<ClientMessage, (Option<String>, CommandRejection)> {
    // two stages, so paths inside the command survive the tagged envelope
    let de = &mut serde_json::Deserializer::from_str(text);
    let envelope: Envelope = serde_path_to_error::deserialize(de).map_err(|e| (None, malformed(e.inner().to_string(), e.path().to_string())))?;
    let id = envelope.command.get("command_id").and_then(|i| i.as_str()).map(str::to_owned);
    if envelope.kind != "command" {
        return Err((id, malformed(format!("unknown message type `{}`", envelope.kind), "type")));
    }
    if envelope.schema != SCHEMA_VERSION {
        let message = format!("schema {} is not supported; expected {SCHEMA_VERSION}", envelope.schema);
        return Err((id, malformed(message, "schema")));
    }
    let command: OperatorCommand = serde_path_to_error::deserialize(envelope.command).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." || inner == "?" { "command".to_string() } else { format!("command.{inner}") };
        (id.clone(), malformed(e.inner().to_string(), path))
    })?;
    Ok(ClientMessage::Command {
        schema: envelope.schema,
        token: envelope.token,
        command,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use amagf_core::scenario::CommandKind;

    #[test]
    fn command_roundtrip() {
        let msg = ClientMessage::command(OperatorCommand {
            command_id: "c1".into(),
            kind: CommandKind::Pause,
        });
        let text = serde_json::to_string(&msg).unwrap();
        assert_eq!(text, r#"{"type":"command","schema":1,"command":{"command_id":"c1","kind":"pause"}}"#);
        assert_eq!(parse_client(&text).unwrap(), msg);
    }

    #[test]
    fn errors_carry_path_and_id() {
        let (id, r) = parse_client(r#"{"type":"command","schema":1,"command":{"command_id":"c2","kind":"issue-probe","agents":[7]}}"#).unwrap_err();
        assert_eq!(id.as_deref(), Some("c2"));
        assert_eq!(r.code, RejectionCode::Malformed);
        let path = r.field_path.unwrap();
        assert!(path.starts_with("command"), "{path}");

        let (_, r) = parse_client(r#"{"type":"command","schema":9,"command":{"command_id":"c3","kind":"pause"}}"#).unwrap_err();
        assert_eq!(r.field_path.as_deref(), Some("schema"));
        assert!(parse_client("not json").is_err());
    }

    #[test]
    fn ack_and_error_shapes() {
        let ack = ServerMessage::Ack {
            schema: 1,
            command_id: "c1".into(),
            ack: Ack::Accepted { apply_at: 4 },
        };
        assert_eq!(
            serde_json::to_value(&ack).unwrap(),
            serde_json::json!({"type": "ack", "schema": 1, "command_id": "c1", "status": "accepted", "apply_at": 4})
        );
        let err = ServerMessage::Error {
            schema: 1,
            command_id: None,
            rejection: CommandRejection::new(RejectionCode::UnknownAgent, "no such agent").at("command.agent"),
        };
        let v = serde_json::to_value(&err).unwrap();
        assert_eq!(v["code"], "unknown-agent");
        assert_eq!(v["field_path"], "command.agent");
        let back: ServerMessage = serde_json::from_value(v).unwrap();
        assert_eq!(back, err);
    }
}
