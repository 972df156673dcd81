//! Prompt templates with `{name}` placeholders (`{{` and `}}` for literal braces).
//!
//! The defaults are compiled in; a directory holding files with the same
//! names overrides them one by one.

use std::collections::BTreeMap;
use std::path::Path;

use super::AgentError;

const DEFAULTS: &[(&str, &str)] = &[
    ("coordinator_system", include_str!("../../templates/coordinator_system.txt")),
    ("plan_count", include_str!("../../templates/plan_count.txt")),
    ("plan_segment", include_str!("../../templates/plan_segment.txt")),
    ("plan_first", include_str!("../../templates/plan_first.txt")),
    ("operator_system", include_str!("../../templates/operator_system.txt")),
    ("operator_step", include_str!("../../templates/operator_step.txt")),
    ("observer_system", include_str!("../../templates/observer_system.txt")),
    ("observer_periodic", include_str!("../../templates/observer_periodic.txt")),
    ("observer_final", include_str!("../../templates/observer_final.txt")),
    ("reask", include_str!("../../templates/reask.txt")),
];

#[derive(Debug, Clone)]
pub struct Templates {
    texts: BTreeMap<&'static str, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Templates { texts: DEFAULTS.iter().map(|(k, v)| (*k, v.to_string())).collect() }
    }
}

impl Templates {
    /// Defaults, with `<dir>/<name>.txt` taking precedence where present.
    pub fn load(dir: Option<&Path>) -> Result<Self, AgentError> {
        let mut t = Templates::default();
        if let Some(dir) = dir {
            for (name, text) in t.texts.iter_mut() {
                let path = dir.join(format!("{name}.txt"));
                if path.is_file() {
                    *text = std::fs::read_to_string(&path)
                        .map_err(|e| AgentError::Template { name: name.to_string(), message: e.to_string() })?;
                }
            }
        }
        Ok(t)
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        DEFAULTS.iter().map(|(k, _)| *k)
    }

    /// Fills `name` from `values`; an unknown placeholder is an error.
    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, AgentError> {
        let err = |message: String| AgentError::Template { name: name.to_string(), message };
        let text = self.texts.get(name).ok_or_else(|| err("no such template".into()))?;
        let mut out = String::with_capacity(text.len() + 256);
        let mut rest = text.as_str();
        while let Some(i) = rest.find(['{', '}']) {
            out.push_str(&rest[..i]);
            let tail = &rest[i..];
            if tail.starts_with("{{") || tail.starts_with("}}") {
                out.push_str(&tail[..1]);
                rest = &tail[2..];
            } else if tail.starts_with('}') {
                return Err(err("unmatched '}'".into()));
            } else {
                let end = tail.find('}').ok_or_else(|| err("unterminated placeholder".into()))?;
                let key = &tail[1..end];
                let value = values
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| err(format!("no value for {{{key}}}")))?;
                out.push_str(value);
                rest = &tail[end + 1..];
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}
