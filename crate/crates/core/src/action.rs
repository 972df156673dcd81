//! The Operator action grammar.
//!
//! Every action is a run of bracketed groups: a keyword group followed by its
//! operands, e.g. `[tap] [watch together]` or `[switch] [user_B] [code 4821]`.
//! Inside an operand a literal `]` is written `\]` and a literal backslash
//! `\\`; any other backslash sequence is taken verbatim.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ActionError {
    #[error("no recognizable action in reply: {0:?}")]
    UnparsableReply(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tap,
    Input,
    Back,
    SwitchUser,
    EndTask,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Tap => "tap",
            ActionKind::Input => "input",
            ActionKind::Back => "back",
            ActionKind::SwitchUser => "switch_user",
            ActionKind::EndTask => "end_task",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Tap { target: String },
    Input { target: String, value: String },
    Back,
    SwitchUser { user: String, message: String },
    EndTask,
}

impl Action {
    pub fn tap(target: impl Into<String>) -> Self {
        Action::Tap { target: target.into() }
    }

    pub fn input(target: impl Into<String>, value: impl Into<String>) -> Self {
        Action::Input { target: target.into(), value: value.into() }
    }

    pub fn switch(user: impl Into<String>, message: impl Into<String>) -> Self {
        Action::SwitchUser { user: user.into(), message: message.into() }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Tap { .. } => ActionKind::Tap,
            Action::Input { .. } => ActionKind::Input,
            Action::Back => ActionKind::Back,
            Action::SwitchUser { .. } => ActionKind::SwitchUser,
            Action::EndTask => ActionKind::EndTask,
        }
    }

    /// Tap, input and back run on a device; switch and end_task are control
    /// tokens handled by the orchestrator.
    pub fn is_device_action(&self) -> bool {
        matches!(self, Action::Tap { .. } | Action::Input { .. } | Action::Back)
    }

    pub fn target(&self) -> Option<&str> {
        match self {
            Action::Tap { target } | Action::Input { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn value(&self) -> Option<&str> {
        match self {
            Action::Input { value, .. } => Some(value),
            _ => None,
        }
    }

    /// Applies `f` to every free-text operand.
    pub fn map_operands(&self, mut f: impl FnMut(&str) -> String) -> Action {
        match self {
            Action::Tap { target } => Action::Tap { target: f(target) },
            Action::Input { target, value } => Action::Input { target: f(target), value: f(value) },
            Action::SwitchUser { user, message } => Action::SwitchUser { user: f(user), message: f(message) },
            other => other.clone(),
        }
    }
}

/// Escapes `\\` and `]` for use inside a bracket group.
pub fn escape_operand(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c == '\\' || c == ']' {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

/// Canonical bracket form.
pub fn render_action(action: &Action) -> String {
    match action {
        Action::Tap { target } => format!("[tap] [{}]", escape_operand(target)),
        Action::Input { target, value } => {
            format!("[input] [{}] [{}]", escape_operand(target), escape_operand(value))
        }
        Action::Back => "[back]".to_string(),
        Action::SwitchUser { user, message } => {
            format!("[switch] [{}] [{}]", escape_operand(user), escape_operand(message))
        }
        Action::EndTask => "[end_task]".to_string(),
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_action(self))
    }
}

impl FromStr for Action {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&render_action(self))
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_action(&s).map_err(serde::de::Error::custom)
    }
}

/// Reads one bracket group starting at byte `start` (which must hold `[`).
/// Returns the unescaped content and the byte index just past the closing `]`.
fn read_group(s: &str, start: usize) -> Option<(String, usize)> {
    let bytes = s.as_bytes();
    debug_assert_eq!(bytes.get(start), Some(&b'['));
    let mut out: Vec<u8> = Vec::new();
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if matches!(bytes.get(i + 1), Some(b'\\') | Some(b']')) => {
                out.push(bytes[i + 1]);
                i += 2;
            }
            b']' => {
                // Only ASCII bytes were dropped, so `out` is still valid UTF-8.
                return Some((String::from_utf8(out).ok()?, i + 1));
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    None
}

fn skip_ws(s: &str, mut i: usize) -> usize {
    let bytes = s.as_bytes();
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

/// The operand group immediately following position `i` (whitespace allowed).
fn next_operand(s: &str, i: usize) -> Option<(String, usize)> {
    let j = skip_ws(s, i);
    if s.as_bytes().get(j) == Some(&b'[') {
        read_group(s, j)
    } else {
        None
    }
}

/// Every bracket group in `text`, in order, unescaped.
pub fn bracket_groups(text: &str) -> Vec<String> {
    let mut groups = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('[') {
        let start = i + off;
        match read_group(text, start) {
            Some((content, end)) => {
                groups.push(content);
                i = end;
            }
            None => break,
        }
    }
    groups
}

fn keyword(group: &str) -> Option<ActionKind> {
    let k: String = group
        .trim()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
        .collect();
    match k.as_str() {
        "tap" | "click" => Some(ActionKind::Tap),
        "input" | "type" => Some(ActionKind::Input),
        "back" => Some(ActionKind::Back),
        "switch" | "switch_user" => Some(ActionKind::SwitchUser),
        "end_task" | "endtask" => Some(ActionKind::EndTask),
        _ => None,
    }
}

fn non_blank(s: &str) -> bool {
    !s.trim().is_empty()
}

fn action_at(s: &str, start: usize) -> Option<Action> {
    let (group, end) = read_group(s, start)?;
    match keyword(&group)? {
        ActionKind::Tap => {
            let (target, _) = next_operand(s, end).filter(|(t, _)| non_blank(t))?;
            Some(Action::Tap { target })
        }
        ActionKind::Input => {
            let (target, end) = next_operand(s, end).filter(|(t, _)| non_blank(t))?;
            let (value, _) = next_operand(s, end)?;
            Some(Action::Input { target, value })
        }
        ActionKind::Back => Some(Action::Back),
        ActionKind::SwitchUser => {
            let (user, end) = next_operand(s, end).filter(|(u, _)| non_blank(u))?;
            let message = next_operand(s, end).map(|(m, _)| m).unwrap_or_default();
            Some(Action::SwitchUser { user, message })
        }
        ActionKind::EndTask => Some(Action::EndTask),
    }
}

/// Extracts the first well-formed action from free-form model output.
pub fn parse_action(reply: &str) -> Result<Action, ActionError> {
    let mut from = 0;
    while let Some(off) = reply[from..].find('[') {
        let start = from + off;
        if let Some(action) = action_at(reply, start) {
            return Ok(action);
        }
        from = start + 1;
    }
    let snippet: String = reply.chars().take(120).collect();
    Err(ActionError::UnparsableReply(snippet))
}

const ACTION_SPACE: &str = "\
Available actions. Reply with exactly one action written in this bracket format:
[tap] [element]: click on the element on the GUI screen.
[input] [element] [value]: enter the value into the GUI element field.
[back]: return to the preceding GUI screen.
[switch] [user] [message]: switch to a different user with a message.
[end_task]: finish the task.
Refer to an element by its text, its description, or its #number on the screen. Inside a bracket, write a literal ] as \\].
";

/// The fixed action-space block included in every Operator prompt.
pub fn action_space_prompt() -> &'static str {
    ACTION_SPACE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_inside_prose() {
        assert_eq!(
            parse_action("The next step is [tap] [watch together]").unwrap(),
            Action::tap("watch together")
        );
    }

    #[test]
    fn switch_with_message() {
        assert_eq!(
            parse_action("[switch] [user_B] [code 4821]").unwrap(),
            Action::switch("user_B", "code 4821")
        );
    }

    #[test]
    fn prose_only_is_unparsable() {
        assert!(matches!(parse_action("I think we are done."), Err(ActionError::UnparsableReply(_))));
        assert!(parse_action("[tap] nothing here").is_err());
        assert!(parse_action("[tap] []").is_err());
        assert!(parse_action("[unknown] [x]").is_err());
    }

    #[test]
    fn render_forms() {
        assert_eq!(render_action(&Action::Back), "[back]");
        assert_eq!(render_action(&Action::EndTask), "[end_task]");
        assert_eq!(render_action(&Action::input("#3", "4821")), "[input] [#3] [4821]");
        assert_eq!(render_action(&Action::tap("a]b\\")), "[tap] [a\\]b\\\\]");
    }

    #[test]
    fn keywords_case_insensitive() {
        assert_eq!(parse_action("[Tap] [OK]").unwrap(), Action::tap("OK"));
        assert_eq!(parse_action("[END_TASK]").unwrap(), Action::EndTask);
        assert_eq!(parse_action("[Switch_User] [user_C]").unwrap(), Action::switch("user_C", ""));
    }

    #[test]
    fn first_action_wins() {
        let reply = "Either [back] or [tap] [Join]";
        assert_eq!(parse_action(reply).unwrap(), Action::Back);
        let reply = "[tap]\n[Join] then [end_task]";
        assert_eq!(parse_action(reply).unwrap(), Action::tap("Join"));
    }

    #[test]
    fn skips_malformed_prefix() {
        assert_eq!(parse_action("[note] [tap] [x]").unwrap(), Action::tap("x"));
        assert_eq!(parse_action("[tap] [unterminated [back]").unwrap(), Action::tap("unterminated [back"));
    }

    #[test]
    fn other_backslashes_verbatim() {
        assert_eq!(
            parse_action(r"[input] [path] [C:\temp]").unwrap(),
            Action::input("path", r"C:\temp")
        );
    }

    #[test]
    fn action_space_block() {
        let block = action_space_prompt();
        assert!(block.contains("click on the element on the GUI screen"));
        assert_eq!(block.lines().filter(|l| l.starts_with('[')).count(), 5);
        assert_eq!(block, action_space_prompt());
    }

    #[test]
    fn groups() {
        assert_eq!(bracket_groups("[host a game] [join \\] by code] x"), vec!["host a game", "join ] by code"]);
    }
}
