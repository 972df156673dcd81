use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendConfig, Exchange, GatewayError, Speaker};

/// Chat-completion style endpoint. The whole session history is sent on
/// every call; the API key comes from the environment only.
pub struct RemoteBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key_env: String,
    max_retries: u32,
    backoff: Duration,
}

enum Attempt {
    Retry(GatewayError),
    Fatal(GatewayError),
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        let (Some(url), Some(model)) = (&config.endpoint_url, &config.model_name) else {
            return Err(GatewayError::BadConfig("remote backend needs endpoint_url and model_name".into()));
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend {
            agent,
            url: url.clone(),
            model: model.clone(),
            api_key_env: config.api_key_env.clone(),
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.backoff_ms),
        })
    }

    fn body(&self, ex: &Exchange<'_>) -> Value {
        let mut messages: Vec<Value> = ex
            .history
            .iter()
            .map(|e| {
                let role = match e.speaker {
                    Speaker::System => "system",
                    Speaker::Prompt => "user",
                    Speaker::Reply => "assistant",
                };
                json!({"role": role, "content": e.text})
            })
            .collect();
        messages.push(json!({"role": "user", "content": ex.prompt}));
        json!({"model": self.model, "messages": messages, "temperature": 0})
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut request = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.api_key_env) {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Attempt::Retry(GatewayError::Timeout(1))),
            Err(e) => return Err(Attempt::Retry(GatewayError::Remote(e.to_string()))),
        };
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(GatewayError::Remote(format!("http status {status}"))));
        }
        if !(200..300).contains(&status) {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            let snippet: String = text.chars().take(200).collect();
            return Err(Attempt::Fatal(GatewayError::Remote(format!("http status {status}: {snippet}"))));
        }
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(GatewayError::Remote(format!("unreadable response: {e}"))))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal(GatewayError::Remote("response has no choices[0].message.content".into())))
    }
}

impl Backend for RemoteBackend {
    fn reply(&self, ex: &Exchange<'_>) -> Result<String, GatewayError> {
        let body = self.body(ex);
        let attempts = self.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!("{}: attempt {} failed: {e}", ex.session_id, attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(match last {
            Some(GatewayError::Timeout(_)) => GatewayError::Timeout(attempts),
            Some(e) => GatewayError::Remote(format!("giving up after {attempts} attempts: {e}")),
            None => GatewayError::Remote("no attempt made".into()),
        })
    }
}
