//! Command-line configuration: a TOML file, overridden by environment
//! variables, overridden by flags.
//!
//! ```toml
//! output_dir = "results"
//! [backend]
//! kind = "remote"
//! endpoint_url = "http://localhost:8080/v1/chat/completions"
//! model_name = "some-model"
//! [run]
//! max_restarts = 2
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::action::Action;
use crate::gateway::{BackendConfig, BackendKind, FaultSpec};
use crate::orchestrator::RunConfig;

pub const ENV_ENDPOINT: &str = "MADROID_ENDPOINT";
pub const ENV_MODEL: &str = "MADROID_MODEL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    output_dir: Option<PathBuf>,
    templates: Option<PathBuf>,
    backend: Option<BackendConfig>,
    run: Option<RunConfig>,
}

/// Values given on the command line; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend: Option<BackendKind>,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub script: Option<PathBuf>,
    /// Backend wrapped by `fault`.
    pub inner: Option<BackendKind>,
    pub fault_user: Option<String>,
    pub fault_step: Option<usize>,
    pub fault_action: Option<String>,
    pub observer_cadence: Option<usize>,
    pub max_actions_per_user: Option<usize>,
    pub max_total_actions: Option<usize>,
    pub max_restarts: Option<usize>,
    pub record_token_budget: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub backend: BackendConfig,
    pub run: RunConfig,
    pub output_dir: PathBuf,
    pub templates: Option<PathBuf>,
}

/// The config in the fault chain that talks to the network, if any.
fn remote_layer(backend: &mut BackendConfig) -> &mut BackendConfig {
    if backend.kind != BackendKind::Fault || backend.inner.is_none() {
        return backend;
    }
    match backend.inner.as_deref_mut() {
        Some(inner) => remote_layer(inner),
        None => unreachable!(),
    }
}

fn set<T>(slot: &mut T, value: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = value {
        *slot = v.clone();
    }
}

impl CliConfig {
    pub fn resolve(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        flags: &Overrides,
    ) -> Result<Self, ConfigError> {
        let file_cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::File { path: path.into(), message: e.to_string() })?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| ConfigError::File { path: path.into(), message: e.to_string() })?
            }
            None => FileConfig::default(),
        };
        let mut backend = file_cfg.backend.unwrap_or_default();
        let mut run = file_cfg.run.unwrap_or_default();
        let mut output_dir = file_cfg.output_dir.unwrap_or_else(|| PathBuf::from("results"));
        let mut templates = file_cfg.templates;

        if let Some(kind) = flags.backend {
            if kind == BackendKind::Fault && backend.kind != BackendKind::Fault {
                let inner = BackendConfig { kind: flags.inner.unwrap_or(BackendKind::Oracle), ..backend.clone() };
                backend = BackendConfig { kind, inner: Some(Box::new(inner)), ..backend };
            } else {
                backend.kind = kind;
            }
        }
        if let (BackendKind::Fault, Some(inner_kind)) = (backend.kind, flags.inner) {
            match backend.inner.as_mut() {
                Some(inner) => inner.kind = inner_kind,
                None => backend.inner = Some(Box::new(BackendConfig { kind: inner_kind, ..Default::default() })),
            }
        }

        let layer = remote_layer(&mut backend);
        if let Some(v) = env(ENV_ENDPOINT) {
            layer.endpoint_url = Some(v);
        }
        if let Some(v) = env(ENV_MODEL) {
            layer.model_name = Some(v);
        }
        if flags.endpoint_url.is_some() {
            layer.endpoint_url = flags.endpoint_url.clone();
        }
        if flags.model_name.is_some() {
            layer.model_name = flags.model_name.clone();
        }
        set(&mut layer.api_key_env, &flags.api_key_env);
        set(&mut layer.timeout_secs, &flags.timeout_secs);
        set(&mut layer.max_retries, &flags.max_retries);
        if flags.script.is_some() {
            layer.script = flags.script.clone();
        }

        if flags.fault_user.is_some() || flags.fault_step.is_some() || flags.fault_action.is_some() {
            if backend.kind != BackendKind::Fault {
                return Err(ConfigError::Invalid("fault options need --backend fault".into()));
            }
            let mut spec = backend.fault.clone().unwrap_or(FaultSpec {
                user: String::new(),
                step: 0,
                action: Action::Back,
            });
            set(&mut spec.user, &flags.fault_user);
            set(&mut spec.step, &flags.fault_step);
            if let Some(text) = &flags.fault_action {
                spec.action = text.parse().map_err(|e| ConfigError::Invalid(format!("--fault-action: {e}")))?;
            }
            backend.fault = Some(spec);
        }

        set(&mut run.observer_cadence, &flags.observer_cadence);
        set(&mut run.max_actions_per_user, &flags.max_actions_per_user);
        set(&mut run.max_total_actions, &flags.max_total_actions);
        set(&mut run.max_restarts, &flags.max_restarts);
        set(&mut run.record_token_budget, &flags.record_token_budget);
        set(&mut run.runs, &flags.runs);
        set(&mut run.seed, &flags.seed);
        set(&mut output_dir, &flags.output_dir);
        if flags.templates.is_some() {
            templates = flags.templates.clone();
        }

        backend.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        run.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(CliConfig { backend, run, output_dir, templates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn precedence_file_env_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("madroid.toml");
        std::fs::write(
            &path,
            "output_dir = \"out\"\n[backend]\nkind = \"remote\"\nendpoint_url = \"http://file\"\nmodel_name = \"file-model\"\n[run]\nmax_restarts = 1\nseed = 9\n",
        )
        .unwrap();
        let env = |k: &str| (k == ENV_MODEL).then(|| "env-model".to_string());
        let flags = Overrides { endpoint_url: Some("http://flag".into()), seed: Some(4), ..Default::default() };
        let cfg = CliConfig::resolve(Some(&path), env, &flags).unwrap();
        assert_eq!(cfg.backend.endpoint_url.as_deref(), Some("http://flag"));
        assert_eq!(cfg.backend.model_name.as_deref(), Some("env-model"));
        assert_eq!(cfg.run.max_restarts, 1);
        assert_eq!(cfg.run.seed, 4);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn fault_flags_wrap_inner() {
        let flags = Overrides {
            backend: Some(BackendKind::Fault),
            fault_user: Some("user_A".into()),
            fault_step: Some(2),
            fault_action: Some("[tap] [Join group]".into()),
            ..Default::default()
        };
        let cfg = CliConfig::resolve(None, no_env, &flags).unwrap();
        assert_eq!(cfg.backend.inner.as_ref().unwrap().kind, BackendKind::Oracle);
        assert_eq!(cfg.backend.fault.as_ref().unwrap().action, Action::tap("Join group"));
    }

    #[test]
    fn invalid_merges_rejected() {
        let remote = Overrides { backend: Some(BackendKind::Remote), ..Default::default() };
        assert!(matches!(CliConfig::resolve(None, no_env, &remote), Err(ConfigError::Invalid(_))));
        let stray = Overrides { fault_step: Some(1), ..Default::default() };
        assert!(CliConfig::resolve(None, no_env, &stray).is_err());
        let zero = Overrides { observer_cadence: Some(0), ..Default::default() };
        assert!(CliConfig::resolve(None, no_env, &zero).is_err());
    }
}
