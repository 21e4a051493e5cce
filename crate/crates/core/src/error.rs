use thiserror::Error;

use crate::kernel::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("simulation time overflow: {base} + {offset}")]
    Overflow { base: i64, offset: i64 },
    #[error("{0}")]
    Parse(String),
}

/// Failures of kernel services requested by an agent.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("extra delay must be non-negative, got {0}ns")]
    NegativeDelay(i64),
    #[error("unknown recipient agent {0}")]
    UnknownRecipient(AgentId),
    #[error("wakeup requested at {requested}ns but agent time is already {current}ns")]
    WakeupInPast { requested: i64, current: i64 },
    #[error("computation delay must be non-negative, got {0}ns")]
    NegativeComputationDelay(i64),
    #[error("failed to archive {path}: {reason}")]
    Archive { path: String, reason: String },
    #[error(transparent)]
    Time(#[from] TimeError),
}

/// An error raised by an agent while handling a lifecycle phase or event.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{0}")]
    Failed(String),
}

impl AgentError {
    pub fn failed(msg: impl Into<String>) -> Self {
        AgentError::Failed(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel requires at least one agent")]
    NoAgents,
    #[error("start time {start}ns must precede stop time {stop}ns")]
    BadWindow { start: i64, stop: i64 },
    #[error("latency model covers {model} agents but {agents} were supplied")]
    LatencyShape { model: usize, agents: usize },
    #[error("agent {agent} ({name}) failed during {phase}: {source}")]
    AgentFailed {
        agent: AgentId,
        name: String,
        phase: &'static str,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Time(#[from] TimeError),
}
