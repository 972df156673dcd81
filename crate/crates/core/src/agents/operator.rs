use super::{AgentError, Templates};
use crate::action::{action_space_prompt, parse_action, render_action, Action};
use crate::gateway::ChatSession;

/// Everything one Operator prompt is built from.
#[derive(Debug, Clone)]
pub struct OperatorTurn<'a> {
    pub task: &'a str,
    pub user: &'a str,
    pub sub_task: &'a str,
    /// From `view::serialize_prompt`.
    pub screen: &'a str,
    /// This user's earlier actions in the current record.
    pub own_actions: &'a [Action],
    /// Message carried by the `[switch]` that handed control here.
    pub inbox: Option<&'a str>,
    pub feedback: Option<&'a str>,
}

const FEEDBACK_HEAD: &str = "Please note that a previous action, ";
const FEEDBACK_TAIL: &str =
    ", was incorrect and led to the task failing. Please consider choosing a different action.";

/// The corrective note given to an Operator after a restart.
pub fn feedback_sentence(prev_action: &Action) -> String {
    format!("{FEEDBACK_HEAD}{}{FEEDBACK_TAIL}", render_action(prev_action))
}

pub fn operator_system_text(templates: &Templates, user: &str) -> Result<String, AgentError> {
    templates.render("operator_system", &[("user", user)])
}

fn prompt_for(turn: &OperatorTurn<'_>, templates: &Templates) -> Result<String, AgentError> {
    let own_actions = if turn.own_actions.is_empty() {
        "(none yet)".to_string()
    } else {
        turn.own_actions.iter().enumerate().map(|(i, a)| format!("{}. {}", i + 1, render_action(a))).collect::<Vec<_>>().join("\n")
    };
    let inbox = match turn.inbox {
        Some(m) => format!("\nMessage from the previous user: {m}\n"),
        None => String::new(),
    };
    let feedback = match turn.feedback {
        Some(f) => format!("\n{f}\n"),
        None => String::new(),
    };
    let own_count = turn.own_actions.len().to_string();
    templates.render(
        "operator_step",
        &[
            ("task", turn.task),
            ("user", turn.user),
            ("sub_task", turn.sub_task),
            ("action_space", action_space_prompt()),
            ("own_count", &own_count),
            ("own_actions", &own_actions),
            ("screen", turn.screen),
            ("inbox", &inbox),
            ("feedback", &feedback),
        ],
    )
}

/// Asks for one action; an unparsable reply gets one retry.
pub fn next_action(turn: &OperatorTurn<'_>, session: &mut ChatSession, templates: &Templates) -> Result<Action, AgentError> {
    let prompt = prompt_for(turn, templates)?;
    let reply = session.ask(&prompt)?;
    let first = match parse_action(&reply) {
        Ok(action) => return Ok(action),
        Err(e) => e,
    };
    log::info!("{}: {first}; asking again", turn.user);
    let reask = templates.render("reask", &[("problem", "no action in the bracket format"), ("prompt", &prompt)])?;
    let reply = session.ask(&reask)?;
    parse_action(&reply).map_err(|e| AgentError::OperatorFailure(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedback_text() {
        let s = feedback_sentence(&Action::tap("Decline"));
        assert_eq!(
            s,
            "Please note that a previous action, [tap] [Decline], was incorrect and led to the task failing. \
             Please consider choosing a different action."
        );
        assert!(feedback_sentence(&Action::Back).contains("[back]"));
    }

    #[test]
    fn prompt_layout() {
        let own = [Action::tap("+")];
        let turn = OperatorTurn {
            task: "T",
            user: "user_B",
            sub_task: "join",
            screen: "#0 Button text=\"Join\" clickable=true",
            own_actions: &own,
            inbox: Some("code 4821"),
            feedback: Some("FEEDBACK"),
        };
        let p = prompt_for(&turn, &Templates::default()).unwrap();
        assert!(p.contains(action_space_prompt()));
        assert!(p.contains(turn.screen));
        assert!(p.contains("code 4821"));
        assert!(p.contains("already performed (1)"));
        assert!(p.trim_end().ends_with("What is your next action?"));
        assert!(p.find("FEEDBACK").unwrap() > p.find("code 4821").unwrap());
    }
}
