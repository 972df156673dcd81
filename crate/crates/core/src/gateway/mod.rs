//! Chat sessions over pluggable model backends.
//!
//! Every agent instance owns one [`ChatSession`]; sessions share a backend but
//! never each other's history. Backends:
//!
//! * `remote` — a chat-completion style HTTP endpoint,
//! * `scripted` — a table of (regex → reply) rules,
//! * `oracle` — answers computed from a scenario's ground truth,
//! * `fault` — wraps another backend and returns one wrong action once.

mod fault;
mod oracle;
mod remote;
mod scripted;
mod transcript;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::sim::Scenario;

pub use fault::FaultBackend;
pub use oracle::OracleBackend;
pub use remote::RemoteBackend;
pub use scripted::{ScriptRule, ScriptedBackend};
pub use transcript::{Transcript, TranscriptHeader, TranscriptRecord, TRANSCRIPT_FORMAT};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("bad backend configuration: {0}")]
    BadConfig(String),
    #[error("backend timed out after {0} attempts")]
    Timeout(u32),
    #[error("remote endpoint error: {0}")]
    Remote(String),
    #[error("no script rule matches the prompt for {role}")]
    NoScriptMatch { role: String },
    #[error("transcript I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "system")]
    System,
    #[serde(rename = "agent-prompt")]
    Prompt,
    #[serde(rename = "model-reply")]
    Reply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub speaker: Speaker,
    pub text: String,
    pub timestamp_ms: u64,
}

/// Which agent a session belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Role {
    Coordinator,
    Operator(String),
    Observer,
}

impl Role {
    /// Role without the user label: `coordinator`, `operator`, `observer`.
    pub fn kind(&self) -> &'static str {
        match self {
            Role::Coordinator => "coordinator",
            Role::Operator(_) => "operator",
            Role::Observer => "observer",
        }
    }

    pub fn user(&self) -> Option<&str> {
        match self {
            Role::Operator(u) => Some(u),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Operator(user) => write!(f, "operator:{user}"),
            other => f.write_str(other.kind()),
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coordinator" => Ok(Role::Coordinator),
            "observer" => Ok(Role::Observer),
            _ => match s.strip_prefix("operator:") {
                Some(user) if !user.is_empty() => Ok(Role::Operator(user.to_string())),
                _ => Err(format!("unknown role {s:?}")),
            },
        }
    }
}

/// What a backend sees for one call: the session so far plus the new prompt.
pub struct Exchange<'a> {
    pub session_id: &'a str,
    pub role: &'a Role,
    pub history: &'a [HistoryEntry],
    pub prompt: &'a str,
}

/// A model backend. Shared by all sessions of a run, so it must tolerate
/// concurrent calls from different sessions.
pub trait Backend: Send + Sync {
    fn reply(&self, exchange: &Exchange<'_>) -> Result<String, GatewayError>;
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// One agent's conversation.
#[derive(Clone)]
pub struct ChatSession {
    id: String,
    role: Role,
    history: Vec<HistoryEntry>,
    backend: Arc<dyn Backend>,
}

impl fmt::Debug for ChatSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatSession")
            .field("id", &self.id)
            .field("role", &self.role)
            .field("history", &self.history)
            .finish_non_exhaustive()
    }
}

impl ChatSession {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> &Role {
        &self.role
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Number of prompts sent so far.
    pub fn prompt_count(&self) -> usize {
        self.history.iter().filter(|e| e.speaker == Speaker::Prompt).count()
    }

    /// Sends `prompt` and returns the reply. History is only extended when
    /// the backend answers, so it keeps alternating prompt/reply.
    pub fn ask(&mut self, prompt: &str) -> Result<String, GatewayError> {
        let reply = self.backend.reply(&Exchange {
            session_id: &self.id,
            role: &self.role,
            history: &self.history,
            prompt,
        })?;
        log::debug!("{} <- {:?}", self.id, reply);
        self.history.push(HistoryEntry { speaker: Speaker::Prompt, text: prompt.to_string(), timestamp_ms: now_ms() });
        self.history.push(HistoryEntry { speaker: Speaker::Reply, text: reply.clone(), timestamp_ms: now_ms() });
        Ok(reply)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Scripted,
    #[default]
    Oracle,
    Fault,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "remote" => Ok(BackendKind::Remote),
            "scripted" => Ok(BackendKind::Scripted),
            "oracle" => Ok(BackendKind::Oracle),
            "fault" => Ok(BackendKind::Fault),
            _ => Err(format!("unknown backend kind {s:?} (remote, scripted, oracle, fault)")),
        }
    }
}

/// Where and when the fault backend lies: the `step`-th (0-based) operator
/// prompt for `user` is answered with `action`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub user: String,
    pub step: usize,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// First retry delay; doubled on every further attempt.
    pub backoff_ms: u64,
    /// Rule file for the scripted backend (JSON or TOML).
    pub script: Option<PathBuf>,
    /// Inline rules, checked after those from `script`.
    pub rules: Vec<ScriptRule>,
    pub inner: Option<Box<BackendConfig>>,
    pub fault: Option<FaultSpec>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Oracle,
            endpoint_url: None,
            model_name: None,
            api_key_env: "MADROID_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
            script: None,
            rules: Vec::new(),
            inner: None,
            fault: None,
        }
    }
}

impl BackendConfig {
    pub fn oracle() -> Self {
        BackendConfig::default()
    }

    pub fn scripted(rules: Vec<ScriptRule>) -> Self {
        BackendConfig { kind: BackendKind::Scripted, rules, ..Default::default() }
    }

    pub fn fault(inner: BackendConfig, spec: FaultSpec) -> Self {
        BackendConfig { kind: BackendKind::Fault, inner: Some(Box::new(inner)), fault: Some(spec), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::BadConfig(m.to_string()));
        match self.kind {
            BackendKind::Remote => {
                if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                    return bad("remote backend needs endpoint_url");
                }
                if self.model_name.as_deref().is_none_or(str::is_empty) {
                    return bad("remote backend needs model_name");
                }
                if self.timeout_secs == 0 {
                    return bad("timeout_secs must be positive");
                }
            }
            BackendKind::Scripted => {
                if self.script.is_none() && self.rules.is_empty() {
                    return bad("scripted backend needs a script file or inline rules");
                }
            }
            BackendKind::Oracle => {}
            BackendKind::Fault => {
                let (Some(inner), Some(spec)) = (&self.inner, &self.fault) else {
                    return bad("fault backend needs inner and fault");
                };
                if crate::users::index_of(&spec.user).is_none() {
                    return bad("fault.user is not a user label");
                }
                inner.validate()?;
            }
        }
        Ok(())
    }

    fn needs_oracle(&self) -> bool {
        match self.kind {
            BackendKind::Oracle => true,
            BackendKind::Fault => self.inner.as_ref().is_some_and(|i| i.needs_oracle()),
            _ => false,
        }
    }
}

/// The scenario (and farm seed) an oracle backend answers for.
#[derive(Debug, Clone)]
pub struct OracleBinding {
    pub scenario: Arc<Scenario>,
    pub seed: u64,
}

fn build_backend(config: &BackendConfig, binding: Option<&OracleBinding>) -> Result<Arc<dyn Backend>, GatewayError> {
    Ok(match config.kind {
        BackendKind::Remote => Arc::new(RemoteBackend::new(config)?),
        BackendKind::Scripted => Arc::new(ScriptedBackend::from_config(config)?),
        BackendKind::Oracle => {
            let binding = binding.ok_or_else(|| GatewayError::BadConfig("oracle backend needs a scenario".into()))?;
            Arc::new(OracleBackend::new(binding)?)
        }
        BackendKind::Fault => {
            let inner = build_backend(config.inner.as_deref().expect("validated"), binding)?;
            Arc::new(FaultBackend::new(inner, config.fault.clone().expect("validated")))
        }
    })
}

/// Opens sessions against one backend.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    opened: AtomicUsize,
}

impl Gateway {
    pub fn new(config: &BackendConfig, binding: Option<&OracleBinding>) -> Result<Self, GatewayError> {
        config.validate()?;
        if config.needs_oracle() && binding.is_none() {
            return Err(GatewayError::BadConfig("oracle backend needs a scenario".into()));
        }
        Ok(Gateway::with_backend(build_backend(config, binding)?))
    }

    pub fn with_backend(backend: Arc<dyn Backend>) -> Self {
        Gateway { backend, opened: AtomicUsize::new(0) }
    }

    /// A new session whose history holds only the system text.
    pub fn open_session(&self, role: Role, system_text: &str) -> ChatSession {
        let n = self.opened.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("{}-{n}", role.to_string().replace(':', "-"));
        ChatSession {
            id,
            role,
            history: vec![HistoryEntry { speaker: Speaker::System, text: system_text.to_string(), timestamp_ms: now_ms() }],
            backend: Arc::clone(&self.backend),
        }
    }
}
