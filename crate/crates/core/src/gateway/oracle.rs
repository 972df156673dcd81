use std::sync::Arc;

use regex::Regex;

use super::{Backend, Exchange, GatewayError, OracleBinding, Role};
use crate::action::{escape_operand, parse_action, render_action, Action};
use crate::sim::{Scenario, TraceStep};
use crate::users;

/// Answers every agent prompt from a scenario's ground truth.
///
/// It reads the structure of the bundled prompt templates:
/// coordinator prompts are told apart by "how many" / "segment" / "first",
/// operator prompts carry "already performed (k)", and observer prompts carry
/// "review phase: periodic|final" and "Step N: user action" lines.
pub struct OracleBackend {
    scenario: Arc<Scenario>,
    script: Vec<TraceStep>,
    own_count: Regex,
    phase: Regex,
    step_line: Regex,
}

fn same_action(seen: &Action, want: &Action) -> bool {
    let eq = |a: &str, b: &str| a.trim().eq_ignore_ascii_case(b.trim());
    match (seen, want) {
        (Action::Tap { target: a }, Action::Tap { target: b }) => eq(a, b),
        (Action::Input { target: a, value: v }, Action::Input { target: b, value: w }) => eq(a, b) && v.trim() == w.trim(),
        (Action::SwitchUser { user: a, .. }, Action::SwitchUser { user: b, .. }) => {
            users::normalize(a).is_some() && users::normalize(a) == users::normalize(b)
        }
        (Action::Back, Action::Back) | (Action::EndTask, Action::EndTask) => true,
        _ => false,
    }
}

impl OracleBackend {
    pub fn new(binding: &OracleBinding) -> Result<Self, GatewayError> {
        let script = binding
            .scenario
            .concrete_script(binding.seed)
            .map_err(|e| GatewayError::BadConfig(format!("oracle scenario: {e}")))?;
        Ok(OracleBackend {
            scenario: Arc::clone(&binding.scenario),
            script,
            own_count: Regex::new(r"(?i)already performed \((\d+)\)").expect("static regex"),
            phase: Regex::new(r"(?i)review phase:\s*(periodic|final)").expect("static regex"),
            step_line: Regex::new(r"(?m)^Step (\d+): (\S+) (.*)$").expect("static regex"),
        })
    }

    fn sub_tasks(&self) -> Vec<String> {
        let meta = &self.scenario.metadata.sub_tasks;
        if meta.len() == self.scenario.user_slots {
            return meta.clone();
        }
        (0..self.scenario.user_slots)
            .map(|i| format!("{}'s part of: {}", users::label(i), self.scenario.task_text()))
            .collect()
    }

    fn first_user(&self) -> String {
        self.scenario
            .metadata
            .first_user
            .as_deref()
            .and_then(users::normalize)
            .unwrap_or_else(|| self.script[0].user.clone())
    }

    fn coordinator(&self, ex: &Exchange<'_>) -> Result<String, GatewayError> {
        let p = ex.prompt.to_lowercase();
        if p.contains("how many") {
            let n = self.scenario.metadata.user_count.unwrap_or(self.scenario.user_slots);
            Ok(n.to_string())
        } else if p.contains("segment") {
            let groups: Vec<String> = self.sub_tasks().iter().map(|s| format!("[{}]", escape_operand(s))).collect();
            Ok(groups.join(" "))
        } else if p.contains("first") {
            Ok(self.first_user())
        } else {
            Err(GatewayError::NoScriptMatch { role: ex.role.to_string() })
        }
    }

    fn operator(&self, ex: &Exchange<'_>, user: &str) -> Result<String, GatewayError> {
        let k: usize = self
            .own_count
            .captures(ex.prompt)
            .and_then(|c| c[1].parse().ok())
            .ok_or_else(|| GatewayError::NoScriptMatch { role: ex.role.to_string() })?;
        let user = users::normalize(user).unwrap_or_else(|| user.to_string());
        let next = self.script.iter().filter(|s| s.user == user).nth(k);
        Ok(next.map(|s| render_action(&s.action)).unwrap_or_else(|| render_action(&Action::EndTask)))
    }

    fn observer(&self, ex: &Exchange<'_>) -> Result<String, GatewayError> {
        let final_phase = match self.phase.captures(ex.prompt) {
            Some(c) => c[1].eq_ignore_ascii_case("final"),
            None => return Err(GatewayError::NoScriptMatch { role: ex.role.to_string() }),
        };
        let mut last = None;
        for cap in self.step_line.captures_iter(ex.prompt) {
            let Ok(index) = cap[1].parse::<usize>() else { continue };
            let seen_user = users::normalize(&cap[2]);
            let seen = parse_action(&cap[3]).ok();
            let matches = match (self.script.get(index), &seen) {
                (Some(want), Some(action)) => seen_user.as_deref() == Some(want.user.as_str()) && same_action(action, &want.action),
                _ => false,
            };
            if !matches {
                let expected = self
                    .script
                    .get(index)
                    .map(|s| format!("{} {}", s.user, render_action(&s.action)))
                    .unwrap_or_else(|| "nothing further".into());
                return Ok(format!("error at step {index}: expected {expected}, got {} {}", &cap[2], cap[3].trim()));
            }
            last = Some(index);
        }
        if !final_phase {
            return Ok("ok".into());
        }
        let done = last.map_or(0, |i| i + 1);
        if done == self.script.len() {
            Ok("complete".into())
        } else {
            Ok(format!("incomplete: {done} of {} steps performed", self.script.len()))
        }
    }
}

impl Backend for OracleBackend {
    fn reply(&self, ex: &Exchange<'_>) -> Result<String, GatewayError> {
        match ex.role {
            Role::Coordinator => self.coordinator(ex),
            Role::Operator(user) => self.operator(ex, user),
            Role::Observer => self.observer(ex),
        }
    }
}
