//! Re-executes a transcript's logged steps on a fresh farm and checks that
//! every screen digest and outcome comes out the same.

use std::sync::Arc;

use thiserror::Error;

use super::{perform, RunEvent, EVENT_SESSION};
use crate::action::Action;
use crate::agents::StepStatus;
use crate::gateway::Transcript;
use crate::sim::{DeviceFarm, Scenario};
use crate::users;
use crate::view;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("transcript cannot be replayed: {0}")]
    Invalid(String),
    #[error("divergence at step {index}: {message}")]
    Divergence { index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplaySummary {
    pub steps_executed: usize,
    pub restarts: usize,
    pub success: bool,
}

struct Logged {
    index: usize,
    user: usize,
    action: Action,
    status: StepStatus,
    digest: String,
}

fn check(farm: &mut DeviceFarm, step: &Logged) -> Result<(), ReplayError> {
    let diverged = |message: String| ReplayError::Divergence { index: step.index, message };
    let raw = farm.device_screen(step.user).map_err(|e| diverged(e.to_string()))?;
    if view::digest(&raw) != step.digest {
        return Err(diverged("screen before the action differs".into()));
    }
    if step.action.is_device_action() {
        let status = perform(farm, step.user, &step.action).map_err(|e| diverged(e.to_string()))?;
        if status != step.status {
            return Err(diverged(format!("{} gave {status:?}, recorded {:?}", step.action, step.status)));
        }
    } else if step.status != StepStatus::Control {
        return Err(diverged(format!("{} recorded with device status {:?}", step.action, step.status)));
    }
    Ok(())
}

pub fn replay_transcript(transcript: &Transcript) -> Result<ReplaySummary, ReplayError> {
    let invalid = |m: String| ReplayError::Invalid(m);
    let scenario_json =
        transcript.header.scenario.as_ref().ok_or_else(|| invalid("header carries no scenario".into()))?;
    let scenario = Scenario::from_json(&scenario_json.to_string()).map_err(|e| invalid(e.to_string()))?;
    let mut farm = DeviceFarm::spawn(Arc::new(scenario), transcript.header.seed);

    let mut events: Vec<_> = transcript.session(EVENT_SESSION).collect();
    events.sort_by_key(|r| r.seq);
    let mut steps: Vec<Logged> = Vec::new();
    let mut executed = 0;
    let mut restarts = 0;
    let mut finished = None;
    for record in events {
        let event: RunEvent =
            serde_json::from_str(&record.text).map_err(|e| invalid(format!("event {}: {e}", record.seq)))?;
        match event {
            RunEvent::Step { index, user, action, status, screen_digest, .. } => {
                if index != steps.len() {
                    return Err(invalid(format!("step {index} logged where {} was expected", steps.len())));
                }
                let user = users::index_of(&user)
                    .filter(|u| *u < farm.user_count())
                    .ok_or_else(|| invalid(format!("unknown user {user:?}")))?;
                let step = Logged { index, user, action, status, digest: screen_digest };
                check(&mut farm, &step)?;
                executed += 1;
                steps.push(step);
            }
            RunEvent::Restart { error_index, .. } => {
                if error_index > steps.len() {
                    return Err(invalid(format!("restart at {error_index} beyond {} steps", steps.len())));
                }
                steps.truncate(error_index);
                farm.reset();
                for step in &steps {
                    check(&mut farm, step)?;
                    executed += 1;
                }
                restarts += 1;
            }
            RunEvent::Review(_) => {}
            RunEvent::Finish { success, check_success, .. } => {
                if farm.check_success() != check_success {
                    return Err(ReplayError::Divergence {
                        index: steps.len(),
                        message: format!("final success check is {}, recorded {check_success}", farm.check_success()),
                    });
                }
                finished = Some(success);
            }
        }
    }
    let success = finished.ok_or_else(|| invalid("no finish event".into()))?;
    Ok(ReplaySummary { steps_executed: executed, restarts, success })
}
