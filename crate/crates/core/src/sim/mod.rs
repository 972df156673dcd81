//! Scenario-driven simulated devices.
//!
//! A [`Scenario`] describes an app as a state machine over named screens,
//! shared by all users: transition rules fire on (user, screen, action) and
//! apply effects, which may inject screens on other devices (notifications,
//! incoming calls) or start timers that expire after a number of global steps.
//! Time advances by one step per executed device action.

mod farm;
mod scenario;

use thiserror::Error;

pub use farm::{DeviceFarm, StepOutcome};
pub use scenario::{
    load_scenario, ElementDef, Effect, Metadata, Rule, Scenario, ScreenDef, SuccessWhen, TraceStep, Trigger,
    VarSource,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("ScenarioInvalid: {0}")]
    ScenarioInvalid(String),
    #[error("{user}: no element matches {descriptor:?} on the current screen")]
    TargetMissing { user: String, descriptor: String },
    #[error("{0} is not a device action")]
    NotADeviceAction(String),
    #[error("no device for user index {0}")]
    UnknownUser(usize),
    #[error("screen rendering failed: {0}")]
    Render(String),
}

/// Lets a real device bridge stand in for the simulator.
///
/// Nothing in this crate implements it for hardware; [`DeviceFarm`] is the
/// only implementation. A bridge would dump the hierarchy, tap/type through
/// an external command-line tool, and decide for itself what `reset` clears.
pub trait DeviceBackend {
    fn user_count(&self) -> usize;
    fn device_screen(&self, user: usize) -> Result<String, SimError>;
    fn execute(&mut self, user: usize, action: &crate::action::Action) -> Result<StepOutcome, SimError>;
    fn reset(&mut self);
    fn check_success(&self) -> bool;
}

impl DeviceBackend for DeviceFarm {
    fn user_count(&self) -> usize {
        DeviceFarm::user_count(self)
    }

    fn device_screen(&self, user: usize) -> Result<String, SimError> {
        DeviceFarm::device_screen(self, user)
    }

    fn execute(&mut self, user: usize, action: &crate::action::Action) -> Result<StepOutcome, SimError> {
        DeviceFarm::execute(self, user, action)
    }

    fn reset(&mut self) {
        DeviceFarm::reset(self)
    }

    fn check_success(&self) -> bool {
        DeviceFarm::check_success(self)
    }
}
