//! The run loop: plan, then let Operators act one at a time (handing over
//! with `[switch]`), have the Observer review every few device actions and
//! at the end, and on a reported error reset the devices, replay the good
//! prefix and resume with feedback.

mod replay;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::agents::{
    coordinator_system_text, feedback_sentence, next_action, operator_system_text, plan_task, review, AgentError,
    ExecutionRecord, OperatorTurn, Phase, StepStatus, TaskPlan, Templates, Verdict,
};
use crate::gateway::{
    BackendConfig, ChatSession, Gateway, GatewayError, OracleBinding, Role, Speaker, Transcript, TranscriptHeader,
    TranscriptRecord,
};
use crate::sim::{DeviceFarm, Scenario, SimError};
use crate::users;
use crate::view;

pub use replay::{replay_transcript, ReplayError, ReplaySummary};

/// Session id under which orchestrator events appear in transcripts.
pub const EVENT_SESSION: &str = "orchestrator";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Device actions between periodic reviews.
    pub observer_cadence: usize,
    pub max_actions_per_user: usize,
    pub max_total_actions: usize,
    pub max_restarts: usize,
    /// Approximate tokens of record shown to the Observer.
    pub record_token_budget: usize,
    /// Repetitions per task (used by evaluation).
    pub runs: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            observer_cadence: 2,
            max_actions_per_user: 15,
            max_total_actions: 60,
            max_restarts: 3,
            record_token_budget: 6000,
            runs: 3,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let checks = [
            (self.observer_cadence, "observer_cadence"),
            (self.max_actions_per_user, "max_actions_per_user"),
            (self.max_total_actions, "max_total_actions"),
            (self.record_token_budget, "record_token_budget"),
            (self.runs, "runs"),
        ];
        match checks.iter().find(|(v, _)| *v == 0) {
            Some((_, name)) => Err(RunError::BadConfig(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("bad run configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    BudgetExhausted,
    MaxRestarts,
    OperatorFailure,
    PlanError,
    InfraError,
    ObserverIncomplete,
    /// The Observer said complete but the app state says otherwise.
    SuccessCheckFailed,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::BudgetExhausted => "budget_exhausted",
            FailureReason::MaxRestarts => "max_restarts",
            FailureReason::OperatorFailure => "operator_failure",
            FailureReason::PlanError => "plan_error",
            FailureReason::InfraError => "infra_error",
            FailureReason::ObserverIncomplete => "observer_incomplete",
            FailureReason::SuccessCheckFailed => "success_check_failed",
        }
    }
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEvent {
    pub epoch: usize,
    pub phase: Phase,
    /// Device actions in the record when the review ran.
    pub device_actions: usize,
    pub verdict: Verdict,
}

/// What the orchestrator logs into the transcript, one JSON object per entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Step { epoch: usize, index: usize, user: String, action: Action, status: StepStatus, screen_digest: String },
    Review(ReviewEvent),
    Restart { epoch: usize, error_index: usize },
    Finish { success: bool, check_success: bool, failure_reason: Option<FailureReason> },
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub success: bool,
    pub executed_trace: ExecutionRecord,
    pub restarts_used: usize,
    pub failure_reason: Option<FailureReason>,
    pub detail: Option<String>,
    pub plan: Option<TaskPlan>,
    pub reviews: Vec<ReviewEvent>,
    pub transcript_path: Option<PathBuf>,
    #[serde(skip)]
    pub transcript: Transcript,
    #[serde(skip)]
    pub events: Vec<RunEvent>,
}

impl RunResult {
    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "verdict: {}\nrestarts: {}\n",
            match self.failure_reason {
                None => "success".to_string(),
                Some(r) => format!("failure ({r})"),
            },
            self.restarts_used
        );
        if let Some(d) = &self.detail {
            out.push_str(&format!("detail: {d}\n"));
        }
        out.push_str(&format!("trace ({} steps):\n", self.executed_trace.len()));
        for step in &self.executed_trace.steps {
            out.push_str(&format!("  {:>3} {} {}\n", step.index, step.user, step.action));
        }
        out
    }
}

/// Runs one task with a backend built from `backend`. Oracle backends are
/// bound to `scenario` and `config.seed`.
pub fn run(task: &str, scenario: Arc<Scenario>, backend: &BackendConfig, config: &RunConfig) -> Result<RunResult, RunError> {
    config.validate()?;
    let binding = OracleBinding { scenario: Arc::clone(&scenario), seed: config.seed };
    let gateway = Gateway::new(backend, Some(&binding))?;
    run_with_gateway(task, scenario, &gateway, config, &Templates::default())
}

/// Same as [`run`] with a ready gateway and custom templates.
pub fn run_with_gateway(
    task: &str,
    scenario: Arc<Scenario>,
    gateway: &Gateway,
    config: &RunConfig,
    templates: &Templates,
) -> Result<RunResult, RunError> {
    config.validate()?;
    let scenario_json = serde_json::to_value(scenario.as_ref()).ok();
    let mut runner = Runner {
        task,
        farm: DeviceFarm::spawn(Arc::clone(&scenario), config.seed),
        gateway,
        config,
        templates,
        record: ExecutionRecord::default(),
        sessions: Vec::new(),
        operators: Vec::new(),
        observer: None,
        events: Vec::new(),
        reviews: Vec::new(),
        epoch: 0,
        current: 0,
        pending: None,
        feedback: Vec::new(),
        plan: None,
    };
    let (failure, detail) = match runner.drive() {
        Ok(()) => (None, None),
        Err(Stop { reason, detail }) => (Some(reason), Some(detail)),
    };
    let check_success = runner.farm.check_success();
    runner.events.push(RunEvent::Finish { success: failure.is_none(), check_success, failure_reason: failure });

    let mut transcript = Transcript::new(TranscriptHeader::new(task, config.seed, scenario_json));
    runner.sessions.append(&mut runner.operators);
    runner.sessions.extend(runner.observer.take());
    for session in &runner.sessions {
        transcript.add_session(session);
    }
    for (seq, event) in runner.events.iter().enumerate() {
        transcript.records.push(TranscriptRecord {
            session_id: EVENT_SESSION.into(),
            role: EVENT_SESSION.into(),
            seq,
            speaker: Speaker::System,
            text: serde_json::to_string(event).expect("events serialize"),
            timestamp: crate::gateway::now_ms(),
        });
    }
    Ok(RunResult {
        success: failure.is_none(),
        restarts_used: runner.record.restarts,
        executed_trace: runner.record,
        failure_reason: failure,
        detail,
        plan: runner.plan,
        reviews: runner.reviews,
        transcript_path: None,
        transcript,
        events: runner.events,
    })
}

/// `<root>/<task_id>/<run>/`
pub fn run_dir(root: &Path, task_id: &str, run: usize) -> PathBuf {
    root.join(task_id).join(run.to_string())
}

/// Writes `transcript.jsonl` and `result.json` into `dir`.
pub fn write_outputs(result: &mut RunResult, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("transcript.jsonl");
    result.transcript.persist(&path)?;
    result.transcript_path = Some(path);
    let json = serde_json::to_string_pretty(result).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("result.json"), json + "\n")?;
    Ok(())
}

struct Stop {
    reason: FailureReason,
    detail: String,
}

fn stop(reason: FailureReason, detail: impl Into<String>) -> Stop {
    Stop { reason, detail: detail.into() }
}

impl From<AgentError> for Stop {
    fn from(e: AgentError) -> Self {
        let reason = match &e {
            AgentError::Plan(_) => FailureReason::PlanError,
            AgentError::OperatorFailure(_) => FailureReason::OperatorFailure,
            AgentError::Gateway(_) | AgentError::Template { .. } => FailureReason::InfraError,
        };
        stop(reason, e.to_string())
    }
}

/// Runs a device action and classifies the outcome.
pub(crate) fn perform(farm: &mut DeviceFarm, user: usize, action: &Action) -> Result<StepStatus, SimError> {
    match farm.execute(user, action) {
        Ok(out) if out.changed => Ok(StepStatus::Changed),
        Ok(_) => Ok(StepStatus::Ineffective),
        Err(SimError::TargetMissing { .. }) => Ok(StepStatus::TargetMissing),
        Err(e) => Err(e),
    }
}

/// A `[switch]` target: a user label, or failing that a sub-task's text.
fn switch_target(target: &str, plan: &TaskPlan) -> Option<usize> {
    if let Some(i) = users::index_of(target).filter(|i| *i < plan.user_count) {
        return Some(i);
    }
    let t = target.trim().to_lowercase();
    plan.sub_tasks
        .iter()
        .position(|s| !t.is_empty() && s.text.to_lowercase() == t)
        .or_else(|| plan.sub_tasks.iter().position(|s| !t.is_empty() && s.text.to_lowercase().contains(&t)))
}

struct Runner<'a> {
    task: &'a str,
    farm: DeviceFarm,
    gateway: &'a Gateway,
    config: &'a RunConfig,
    templates: &'a Templates,
    record: ExecutionRecord,
    /// Every session opened so far that is no longer live, in opening order.
    sessions: Vec<ChatSession>,
    operators: Vec<ChatSession>,
    observer: Option<ChatSession>,
    events: Vec<RunEvent>,
    reviews: Vec<ReviewEvent>,
    epoch: usize,
    current: usize,
    pending: Option<String>,
    feedback: Vec<Option<String>>,
    plan: Option<TaskPlan>,
}

impl Runner<'_> {
    fn open_operators(&mut self, n: usize) -> Result<(), Stop> {
        self.sessions.append(&mut self.operators);
        for i in 0..n {
            let user = users::label(i);
            let system = operator_system_text(self.templates, &user)?;
            self.operators.push(self.gateway.open_session(Role::Operator(user), &system));
        }
        Ok(())
    }

    fn drive(&mut self) -> Result<(), Stop> {
        let system = coordinator_system_text(self.templates)?;
        let mut coordinator = self.gateway.open_session(Role::Coordinator, &system);
        let planned = plan_task(self.task, &mut coordinator, self.templates);
        self.sessions.push(coordinator);
        let plan = planned?;
        self.plan = Some(plan.clone());
        let slots = self.farm.user_count();
        if plan.user_count != slots {
            return Err(stop(
                FailureReason::PlanError,
                format!("plan needs {} users, scenario has {slots}", plan.user_count),
            ));
        }

        self.open_operators(slots)?;
        let system = self.templates.render("observer_system", &[]).map_err(Stop::from)?;
        self.observer = Some(self.gateway.open_session(Role::Observer, &system));
        self.current = users::index_of(&plan.first_user).expect("plan labels are canonical");
        self.feedback = vec![None; slots];

        let control_limit = 2 * self.config.max_total_actions;
        let mut control_steps = 0;
        loop {
            let user = users::label(self.current);
            let raw = self.farm.device_screen(self.current).map_err(|e| stop(FailureReason::InfraError, e.to_string()))?;
            let screen_digest = view::digest(&raw);
            let screen = self.farm.screen_tree(self.current).map_err(|e| stop(FailureReason::InfraError, e.to_string()))?;
            let screen = view::serialize_prompt(&screen);
            let own: Vec<Action> = self.record.actions_of(&user).cloned().collect();
            let inbox = self.pending.clone().filter(|m| !m.is_empty());
            let feedback = self.feedback[self.current].clone();
            let turn = OperatorTurn {
                task: self.task,
                user: &user,
                sub_task: plan.sub_task(&user).unwrap_or_default(),
                screen: &screen,
                own_actions: &own,
                inbox: inbox.as_deref(),
                feedback: feedback.as_deref(),
            };
            let action = next_action(&turn, &mut self.operators[self.current], self.templates)?;
            self.pending = None;
            self.feedback[self.current] = None;

            if action.is_device_action() {
                if self.record.device_count() >= self.config.max_total_actions {
                    return Err(stop(FailureReason::BudgetExhausted, "total action budget used up"));
                }
                if self.record.device_count_for(&user) >= self.config.max_actions_per_user {
                    return Err(stop(FailureReason::BudgetExhausted, format!("{user} used up its action budget")));
                }
                let status = perform(&mut self.farm, self.current, &action)
                    .map_err(|e| stop(FailureReason::InfraError, e.to_string()))?;
                self.push_step(&user, action, screen, screen_digest, status);
                if self.record.device_count().is_multiple_of(self.config.observer_cadence) {
                    if let Verdict::ErrorAt { step, .. } = self.review(&plan, Phase::Periodic)? {
                        self.restart(step, &plan)?;
                        control_steps = 0;
                    }
                }
                continue;
            }

            control_steps += 1;
            if control_steps > control_limit {
                return Err(stop(FailureReason::BudgetExhausted, "too many control actions without progress"));
            }
            match &action {
                Action::SwitchUser { user: to, message } => {
                    let message = message.clone();
                    let target = switch_target(to, &plan);
                    self.push_step(&user, action.clone(), screen, screen_digest, StepStatus::Control);
                    match target {
                        Some(t) if t != self.current => {
                            self.current = t;
                            self.pending = Some(message);
                        }
                        _ => log::info!("{user}: switch target {to:?} ignored"),
                    }
                }
                Action::EndTask => {
                    self.push_step(&user, action.clone(), screen, screen_digest, StepStatus::Control);
                    match self.review(&plan, Phase::Final)? {
                        Verdict::Complete if self.farm.check_success() => return Ok(()),
                        Verdict::Complete => {
                            return Err(stop(
                                FailureReason::SuccessCheckFailed,
                                "observer reported completion but the app state does not match",
                            ))
                        }
                        Verdict::Incomplete { reason } => return Err(stop(FailureReason::ObserverIncomplete, reason)),
                        Verdict::ErrorAt { step, .. } => {
                            self.restart(step, &plan)?;
                            control_steps = 0;
                        }
                        Verdict::Ok => unreachable!("final reviews never return ok"),
                    }
                }
                _ => unreachable!("device actions handled above"),
            }
        }
    }

    fn push_step(&mut self, user: &str, action: Action, screen: String, screen_digest: String, status: StepStatus) {
        self.events.push(RunEvent::Step {
            epoch: self.epoch,
            index: self.record.len(),
            user: user.to_string(),
            action: action.clone(),
            status,
            screen_digest: screen_digest.clone(),
        });
        self.record.push(user, action, screen, screen_digest, status);
    }

    fn review(&mut self, plan: &TaskPlan, phase: Phase) -> Result<Verdict, Stop> {
        let observer = self.observer.as_mut().expect("observer opened before the loop");
        let verdict = review(plan, &self.record, phase, self.config.record_token_budget, observer, self.templates)?;
        let event =
            ReviewEvent { epoch: self.epoch, phase, device_actions: self.record.device_count(), verdict: verdict.clone() };
        self.events.push(RunEvent::Review(event.clone()));
        self.reviews.push(event);
        Ok(verdict)
    }

    /// Resets the farm, replays steps before `error_index` and resumes with
    /// feedback for the user who took the flagged step.
    fn restart(&mut self, error_index: usize, plan: &TaskPlan) -> Result<(), Stop> {
        if self.record.restarts >= self.config.max_restarts {
            return Err(stop(FailureReason::MaxRestarts, format!("error at step {error_index} after {} restarts", self.record.restarts)));
        }
        let flagged = self.record.steps[error_index].clone();
        self.farm.reset();
        for step in &self.record.steps[..error_index] {
            let user = users::index_of(&step.user).expect("record labels are canonical");
            let raw = self.farm.device_screen(user).map_err(|e| stop(FailureReason::InfraError, e.to_string()))?;
            if view::digest(&raw) != step.screen_digest {
                return Err(stop(FailureReason::InfraError, format!("replay diverged before step {}", step.index)));
            }
            if step.is_device_action() {
                let status = perform(&mut self.farm, user, &step.action)
                    .map_err(|e| stop(FailureReason::InfraError, e.to_string()))?;
                if status != step.status {
                    return Err(stop(FailureReason::InfraError, format!("replay of step {} gave {status:?}", step.index)));
                }
            }
        }
        self.record.truncate(error_index);
        self.record.restarts += 1;
        self.epoch += 1;
        self.events.push(RunEvent::Restart { epoch: self.epoch, error_index });
        log::info!("restart {} at step {error_index}", self.record.restarts);

        self.open_operators(self.farm.user_count())?;
        let flagged_user = users::index_of(&flagged.user).expect("record labels are canonical");
        self.feedback = vec![None; self.farm.user_count()];
        self.feedback[flagged_user] = Some(feedback_sentence(&flagged.action));
        self.current = flagged_user;
        self.pending = match self.record.steps.last().map(|s| &s.action) {
            Some(Action::SwitchUser { user, message }) if switch_target(user, plan) == Some(flagged_user) => {
                Some(message.clone())
            }
            _ => None,
        };
        Ok(())
    }
}
