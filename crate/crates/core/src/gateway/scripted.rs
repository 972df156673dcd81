use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::{Backend, BackendConfig, Exchange, GatewayError};

/// `pattern` is a case-insensitive regex searched in the latest prompt.
/// `role` narrows the rule to `coordinator`, `observer`, `operator` or
/// `operator:user_X`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    pub pattern: String,
    pub response: String,
}

impl ScriptRule {
    pub fn new(role: Option<&str>, pattern: &str, response: &str) -> Self {
        ScriptRule { role: role.map(str::to_string), pattern: pattern.into(), response: response.into() }
    }
}

#[derive(Deserialize)]
struct RuleFile {
    rules: Vec<ScriptRule>,
}

struct Compiled {
    role: Option<String>,
    pattern: Regex,
    response: String,
}

/// First matching rule wins.
pub struct ScriptedBackend {
    rules: Vec<Compiled>,
}

fn read_rules(path: &Path) -> Result<Vec<ScriptRule>, GatewayError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::BadConfig(format!("script {}: {e}", path.display())))?;
    let parsed: Result<RuleFile, String> = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map(|f| f.rules).map_err(|e| GatewayError::BadConfig(format!("script {}: {e}", path.display())))
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self, GatewayError> {
        let rules = rules
            .into_iter()
            .map(|r| {
                let pattern = RegexBuilder::new(&r.pattern)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| GatewayError::BadConfig(format!("rule pattern {:?}: {e}", r.pattern)))?;
                Ok(Compiled { role: r.role, pattern, response: r.response })
            })
            .collect::<Result<_, GatewayError>>()?;
        Ok(ScriptedBackend { rules })
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let mut rules = match &config.script {
            Some(path) => read_rules(path)?,
            None => Vec::new(),
        };
        rules.extend(config.rules.iter().cloned());
        ScriptedBackend::new(rules)
    }
}

impl Backend for ScriptedBackend {
    fn reply(&self, ex: &Exchange<'_>) -> Result<String, GatewayError> {
        let full = ex.role.to_string();
        self.rules
            .iter()
            .find(|r| {
                r.role.as_deref().is_none_or(|want| want.eq_ignore_ascii_case(&full) || want == ex.role.kind())
                    && r.pattern.is_match(ex.prompt)
            })
            .map(|r| r.response.clone())
            .ok_or(GatewayError::NoScriptMatch { role: full })
    }
}
