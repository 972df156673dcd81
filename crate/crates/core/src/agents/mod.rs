//! The three agent roles: Coordinator (planning), Operator (one per user,
//! picks actions) and Observer (audits the record).

mod observer;
mod operator;
mod plan;
mod record;
mod templates;

use thiserror::Error;

use crate::gateway::GatewayError;

pub use observer::{parse_verdict, review, Phase, Verdict};
pub use operator::{feedback_sentence, next_action, operator_system_text, OperatorTurn};
pub use plan::{coordinator_system_text, parse_first, parse_segments, parse_user_count, plan_task, SubTask, TaskPlan};
pub use record::{step_cost, truncate_record, ExecutionRecord, RecordStep, StepStatus};
pub use templates::Templates;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanParseError {
    #[error("no user count in reply {0:?}")]
    NoUserCount(String),
    #[error("user count {0} is below 2")]
    TooFewUsers(usize),
    #[error("expected {expected} bracketed sub-tasks, found {found}")]
    SubTaskCount { expected: usize, found: usize },
    #[error("cannot tell which sub-task comes first from {0:?}")]
    UnmatchedFirst(String),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("plan: {0}")]
    Plan(#[from] PlanParseError),
    #[error("operator gave no usable action: {0}")]
    OperatorFailure(String),
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
}
