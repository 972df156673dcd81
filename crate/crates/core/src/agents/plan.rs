use std::collections::BTreeSet;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{AgentError, PlanParseError, Templates};
use crate::action::bracket_groups;
use crate::gateway::ChatSession;
use crate::users;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTask {
    pub user: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub task: String,
    pub user_count: usize,
    pub sub_tasks: Vec<SubTask>,
    pub first_user: String,
}

impl TaskPlan {
    pub fn sub_task(&self, user: &str) -> Option<&str> {
        self.sub_tasks.iter().find(|s| s.user == user).map(|s| s.text.as_str())
    }

    /// One line per user, first mover marked.
    pub fn summary(&self) -> String {
        self.sub_tasks
            .iter()
            .map(|s| {
                let first = if s.user == self.first_user { " (starts)" } else { "" };
                format!("- {}{first}: {}", s.user, s.text)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn coordinator_system_text(templates: &Templates) -> Result<String, AgentError> {
    templates.render("coordinator_system", &[])
}

/// The first integer in the reply; fewer than two users is rejected.
pub fn parse_user_count(reply: &str) -> Result<usize, PlanParseError> {
    let re = Regex::new(r"\d+").expect("static regex");
    let n: usize = re
        .find(reply)
        .and_then(|m| m.as_str().parse().ok())
        .ok_or_else(|| PlanParseError::NoUserCount(reply.chars().take(120).collect()))?;
    if n < 2 {
        return Err(PlanParseError::TooFewUsers(n));
    }
    Ok(n)
}

pub fn parse_segments(reply: &str, user_count: usize) -> Result<Vec<SubTask>, PlanParseError> {
    let groups: Vec<String> =
        bracket_groups(reply).into_iter().map(|g| g.trim().to_string()).filter(|g| !g.is_empty()).collect();
    if groups.len() != user_count {
        return Err(PlanParseError::SubTaskCount { expected: user_count, found: groups.len() });
    }
    Ok(groups.into_iter().enumerate().map(|(i, text)| SubTask { user: users::label(i), text }).collect())
}

fn words(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// Which sub-task the reply names: a user label, `sub-task N`, or else the
/// sub-task sharing the largest fraction of its words with the reply.
pub fn parse_first(reply: &str, sub_tasks: &[SubTask]) -> Result<String, PlanParseError> {
    let n = sub_tasks.len();
    let label = Regex::new(r"(?i)\buser[_ -]?([a-z])\b").expect("static regex");
    for cap in label.captures_iter(reply) {
        if let Some(i) = users::index_of(&cap[1]).filter(|i| *i < n) {
            return Ok(users::label(i));
        }
    }
    let ordinal = Regex::new(r"(?i)\bsub-?\s?task\s*#?(\d+)").expect("static regex");
    for cap in ordinal.captures_iter(reply) {
        if let Some(i) = cap[1].parse::<usize>().ok().filter(|i| (1..=n).contains(i)) {
            return Ok(users::label(i - 1));
        }
    }
    let said = words(reply);
    let mut best: Option<(f64, usize)> = None;
    for (i, s) in sub_tasks.iter().enumerate() {
        let own = words(&s.text);
        if own.is_empty() {
            continue;
        }
        let score = own.intersection(&said).count() as f64 / own.len() as f64;
        if score > 0.0 && best.is_none_or(|(b, _)| score > b) {
            best = Some((score, i));
        }
    }
    best.map(|(_, i)| users::label(i)).ok_or_else(|| PlanParseError::UnmatchedFirst(reply.chars().take(120).collect()))
}

/// Asks, re-asking once if `parse` rejects the reply.
fn ask_parsed<T>(
    session: &mut ChatSession,
    templates: &Templates,
    prompt: &str,
    parse: impl Fn(&str) -> Result<T, PlanParseError>,
) -> Result<T, AgentError> {
    let reply = session.ask(prompt)?;
    match parse(&reply) {
        Ok(v) => Ok(v),
        Err(first) => {
            log::info!("coordinator reply rejected ({first}); asking again");
            let problem = first.to_string();
            let reask = templates.render("reask", &[("problem", &problem), ("prompt", prompt)])?;
            let reply = session.ask(&reask)?;
            Ok(parse(&reply)?)
        }
    }
}

/// Three questions: how many users, the per-user split, who goes first.
pub fn plan_task(task: &str, session: &mut ChatSession, templates: &Templates) -> Result<TaskPlan, AgentError> {
    let prompt = templates.render("plan_count", &[("task", task)])?;
    let user_count = ask_parsed(session, templates, &prompt, parse_user_count)?;

    let labels: Vec<String> = (0..user_count).map(users::label).collect();
    let count = user_count.to_string();
    let prompt = templates.render(
        "plan_segment",
        &[("task", task), ("user_count", &count), ("labels", &labels.join(", "))],
    )?;
    let sub_tasks = ask_parsed(session, templates, &prompt, |r| parse_segments(r, user_count))?;

    let listing: Vec<String> =
        sub_tasks.iter().enumerate().map(|(i, s)| format!("sub-task {} ({}): {}", i + 1, s.user, s.text)).collect();
    let prompt = templates.render("plan_first", &[("task", task), ("sub_tasks", &listing.join("\n"))])?;
    let first_user = ask_parsed(session, templates, &prompt, |r| parse_first(r, &sub_tasks))?;

    Ok(TaskPlan { task: task.to_string(), user_count, sub_tasks, first_user })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subs(texts: &[&str]) -> Vec<SubTask> {
        texts.iter().enumerate().map(|(i, t)| SubTask { user: users::label(i), text: t.to_string() }).collect()
    }

    #[test]
    fn count_parsing() {
        assert_eq!(parse_user_count("We need 3 users.").unwrap(), 3);
        assert_eq!(parse_user_count("1"), Err(PlanParseError::TooFewUsers(1)));
        assert!(matches!(parse_user_count("two"), Err(PlanParseError::NoUserCount(_))));
    }

    #[test]
    fn first_by_label_ordinal_or_overlap() {
        let s = subs(&["host a game", "join by code", "join by code"]);
        assert_eq!(parse_first("sub-task 1", &s).unwrap(), "user_A");
        assert_eq!(parse_first("Both users wait; User_B goes first", &s).unwrap(), "user_B");
        assert_eq!(parse_first("whoever hosts the game", &s).unwrap(), "user_A");
        assert!(matches!(parse_first("no idea", &s), Err(PlanParseError::UnmatchedFirst(_))));
        assert_eq!(parse_first("user_D", &s).unwrap_err(), PlanParseError::UnmatchedFirst("user_D".into()));
    }
}
