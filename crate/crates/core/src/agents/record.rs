use serde::{Deserialize, Serialize};

use crate::action::{render_action, Action};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Changed,
    Ineffective,
    /// The named element was not on the screen; the device did not move.
    TargetMissing,
    /// `[switch]` or `[end_task]`, not sent to a device.
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordStep {
    pub index: usize,
    pub user: String,
    pub action: Action,
    /// Serialized simplified screen the action was chosen on.
    pub screen: String,
    /// Digest of the raw screen document before the action.
    pub screen_digest: String,
    pub status: StepStatus,
}

impl RecordStep {
    pub fn is_device_action(&self) -> bool {
        self.action.is_device_action()
    }

    /// The numbered form shown to the Observer.
    pub fn render(&self) -> String {
        let note = match self.status {
            StepStatus::Changed | StepStatus::Control => "",
            StepStatus::Ineffective => " (no effect)",
            StepStatus::TargetMissing => " (element not found)",
        };
        let mut out = format!("Step {}: {} {}{note}\n", self.index, self.user, render_action(&self.action));
        for line in self.screen.lines() {
            out.push_str("    ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// Everything the Operators did, in global order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub steps: Vec<RecordStep>,
    pub restarts: usize,
}

impl ExecutionRecord {
    pub fn push(&mut self, user: &str, action: Action, screen: String, screen_digest: String, status: StepStatus) {
        let index = self.steps.len();
        self.steps.push(RecordStep { index, user: user.to_string(), action, screen, screen_digest, status });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn device_count(&self) -> usize {
        self.steps.iter().filter(|s| s.is_device_action()).count()
    }

    pub fn device_count_for(&self, user: &str) -> usize {
        self.steps.iter().filter(|s| s.is_device_action() && s.user == user).count()
    }

    /// Actions `user` has taken, control tokens included.
    pub fn actions_of<'a>(&'a self, user: &'a str) -> impl Iterator<Item = &'a Action> + 'a {
        self.steps.iter().filter(move |s| s.user == user).map(|s| &s.action)
    }

    pub fn truncate(&mut self, len: usize) {
        self.steps.truncate(len);
    }
}

/// Approximate tokens for a rendered step: four characters per token.
pub fn step_cost(step: &RecordStep) -> usize {
    step.render().chars().count().div_ceil(4)
}

/// The longest suffix of `steps` whose cost fits `budget`, but never less
/// than the last step.
pub fn truncate_record(steps: &[RecordStep], budget: usize) -> &[RecordStep] {
    let mut used = 0;
    let mut start = steps.len();
    while start > 0 {
        let cost = step_cost(&steps[start - 1]);
        if start < steps.len() && used + cost > budget {
            break;
        }
        used += cost;
        start -= 1;
    }
    &steps[start..]
}
