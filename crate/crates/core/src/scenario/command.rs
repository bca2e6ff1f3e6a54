//! Operator commands, shared by scripts and the live control plane.

use serde::{Deserialize, Serialize};

use crate::ids::{AgentId, AssessmentId, SourceId};
use crate::metrics::BehaviorVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CommandKind {
    IssueCorrection {
        agents: Vec<AgentId>,
        intended: BehaviorVector,
        #[serde(default)]
        iota: f64,
    },
    IssueProbe {
        agents: Vec<AgentId>,
    },
    /// Confirm checkpoints for the listed agents, or all when empty.
    ConfirmCheckpoint {
        #[serde(default)]
        agents: Vec<AgentId>,
    },
    OverrideAssessment {
        assessment: AssessmentId,
        confidence: f64,
    },
    OrderPartialReset {
        agent: AgentId,
        assessments: Vec<AssessmentId>,
        #[serde(default)]
        approved_sources: Vec<SourceId>,
    },
    OrderFullReset {
        agent: AgentId,
        #[serde(default)]
        approved_sources: Vec<SourceId>,
    },
    /// Replenish budgets for the listed agents, or all when empty.
    AuthorizeBudget {
        #[serde(default)]
        agents: Vec<AgentId>,
    },
    AuthorizeAction {
        token: String,
    },
    IsolateAgent {
        agent: AgentId,
    },
    SetPace {
        ms_per_tick: u64,
    },
    Pause,
    Resume,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::IssueCorrection { .. } => "issue-correction",
            CommandKind::IssueProbe { .. } => "issue-probe",
            CommandKind::ConfirmCheckpoint { .. } => "confirm-checkpoint",
            CommandKind::OverrideAssessment { .. } => "override-assessment",
            CommandKind::OrderPartialReset { .. } => "order-partial-reset",
            CommandKind::OrderFullReset { .. } => "order-full-reset",
            CommandKind::AuthorizeBudget { .. } => "authorize-budget",
            CommandKind::AuthorizeAction { .. } => "authorize-action",
            CommandKind::IsolateAgent { .. } => "isolate-agent",
            CommandKind::SetPace { .. } => "set-pace",
            CommandKind::Pause => "pause",
            CommandKind::Resume => "resume",
        }
    }

    /// Pacing commands steer the serving loop and never reach the simulation.
    pub fn is_pacing(&self) -> bool {
        matches!(
            self,
            CommandKind::SetPace { .. } | CommandKind::Pause | CommandKind::Resume
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorCommand {
    pub command_id: String,
    #[serde(flatten)]
    pub kind: CommandKind,
}

/// Why a command was not accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionCode {
    Malformed,
    UnknownAgent,
    UnknownAssessment,
    UnknownToken,
    InvalidValue,
    Finished,
    /// Missing or wrong operator token on the control plane.
    Unauthorized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRejection {
    pub code: RejectionCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_path: Option<String>,
}

impl CommandRejection {
    pub fn new(code: RejectionCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            field_path: None,
        }
    }

    pub fn at(mut self, path: impl Into<String>) -> Self {
        self.field_path = Some(path.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Ack {
    Accepted { apply_at: u64 },
    Duplicate { apply_at: u64 },
}
