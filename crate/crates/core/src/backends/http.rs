use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::limiter::InFlightLimiter;
use super::retry::{with_retry, RetryPolicy};
use super::{
    BackendError, ChatBackend, ChatMessage, ChatRequest, Completion, Params, Result, Role,
};

/// How the assistant generation prefix reaches the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    /// Trailing assistant message the model continues from.
    #[default]
    AssistantMessage,
    /// Appended to the last user message as an output-format cue, for
    /// servers without assistant continuation.
    UserCue,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub prefix_mode: PrefixMode,
    #[serde(default, skip_serializing_if = "Params::is_empty")]
    pub params: Params,
}

// Only the variable name is ever printed, never its value.
impl std::fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendConfig")
            .field("endpoint_url", &self.endpoint_url)
            .field("model_id", &self.model_id)
            .field("api_key_env", &self.api_key_env)
            .field("timeout_secs", &self.timeout_secs)
            .field("max_in_flight", &self.max_in_flight)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_id: model_id.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
            prefix_mode: PrefixMode::default(),
            params: Params::new(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(format!(
                "timeout_secs must be positive, got {}",
                self.timeout_secs
            ));
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if self.endpoint_url.is_empty() {
            return Err("endpoint_url is empty".into());
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.backoff_ms),
            ..RetryPolicy::default()
        }
    }

    pub(crate) fn api_key(&self) -> Option<String> {
        self.api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
            .filter(|k| !k.is_empty())
    }

    pub(crate) fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(self.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into()
    }
}

pub(crate) fn classify_ureq(backend: &str, e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound => BackendError::transport(backend, e.to_string()),
        other => BackendError::protocol(backend, other.to_string()),
    }
}

/// POSTs `body` as JSON and returns the parsed response, mapping statuses
/// 408/429/5xx to transient errors.
pub(crate) fn post_json(
    agent: &ureq::Agent,
    backend: &str,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req
        .send(body.to_string().as_bytes())
        .map_err(|e| classify_ureq(backend, e))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| classify_ureq(backend, e))?;
    match status {
        200..=299 => {}
        408 | 429 | 500..=599 => {
            return Err(BackendError::transport(backend, format!("HTTP {status}")))
        }
        _ => {
            return Err(BackendError::protocol(
                backend,
                format!("HTTP {status}: {}", truncate(&text, 200)),
            ))
        }
    }
    serde_json::from_str(&text)
        .map_err(|e| BackendError::protocol(backend, format!("malformed JSON body: {e}")))
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

fn message_json(m: &ChatMessage, extra: Option<&str>) -> Value {
    let mut text = m.content.clone();
    if let Some(cue) = extra {
        text.push_str("\n\n");
        text.push_str(cue);
    }
    match &m.image {
        Some(img) => json!({
            "role": role_name(m.role),
            "content": [
                {"type": "text", "text": text},
                {"type": "image_url", "image_url": {"url": img.data_url()}},
            ],
        }),
        None => json!({"role": role_name(m.role), "content": text}),
    }
}

/// Chat-completions request body for `request` under `cfg`.
pub fn request_body(cfg: &BackendConfig, request: &ChatRequest) -> Value {
    let cue_index = match (cfg.prefix_mode, &request.assistant_prefix) {
        (PrefixMode::UserCue, Some(_)) => {
            request.messages.iter().rposition(|m| m.role == Role::User)
        }
        _ => None,
    };
    let mut messages: Vec<Value> = request
        .messages
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let cue = (Some(i) == cue_index)
                .then_some(request.assistant_prefix.as_deref())
                .flatten();
            message_json(m, cue)
        })
        .collect();
    if let (PrefixMode::AssistantMessage, Some(prefix)) =
        (cfg.prefix_mode, &request.assistant_prefix)
    {
        messages.push(json!({"role": "assistant", "content": prefix}));
    }
    let mut body = serde_json::Map::new();
    body.insert("model".into(), json!(cfg.model_id));
    body.insert("messages".into(), Value::Array(messages));
    for (k, v) in cfg.params.iter().chain(request.params.iter()) {
        body.insert(k.clone(), v.clone());
    }
    Value::Object(body)
}

/// Reads `choices[0].message.content`.
pub fn parse_completion(backend: &str, body: &Value) -> Result<String> {
    let content = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(|| {
            BackendError::protocol(backend, "response has no choices[0].message.content")
        })?;
    let text = content
        .as_str()
        .ok_or_else(|| BackendError::protocol(backend, "message content is not a string"))?;
    if text.trim().is_empty() {
        return Err(BackendError::content(backend, "empty completion"));
    }
    Ok(text.to_string())
}

pub struct HttpChatBackend {
    id: String,
    cfg: BackendConfig,
    agent: ureq::Agent,
    limiter: InFlightLimiter,
}

impl HttpChatBackend {
    pub fn new(id: impl Into<String>, cfg: BackendConfig) -> std::result::Result<Self, String> {
        cfg.validate()?;
        Ok(Self {
            id: id.into(),
            agent: cfg.agent(),
            limiter: InFlightLimiter::new(cfg.max_in_flight),
            cfg,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        request.validate(&self.id)?;
        let body = request_body(&self.cfg, request);
        let key = self.cfg.api_key();
        let _permit = self.limiter.acquire();
        let (text, retries) = with_retry(&self.cfg.retry_policy(), |_| {
            let resp = post_json(
                &self.agent,
                &self.id,
                &self.cfg.endpoint_url,
                key.as_deref(),
                &body,
            )?;
            parse_completion(&self.id, &resp)
        })?;
        Ok(Completion { text, retries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ImageAttachment;

    #[test]
    fn body_shapes() {
        let mut cfg = BackendConfig::new("http://x", "m");
        cfg.params.insert("temperature".into(), json!(0.0));
        let req = ChatRequest::from_messages(vec![
            ChatMessage::system("sys"),
            ChatMessage::user_with_image("describe", ImageAttachment::png(vec![1])),
            ChatMessage::assistant("The answer:"),
        ]);
        let body = request_body(&cfg, &req);
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.0);
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 3);
        assert_eq!(msgs[1]["content"][1]["type"], "image_url");
        assert_eq!(msgs[2]["role"], "assistant");

        cfg.prefix_mode = PrefixMode::UserCue;
        let body = request_body(&cfg, &req);
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[1]["content"][0]["text"], "describe\n\nThe answer:");
    }

    #[test]
    fn completion_parsing() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "a cat"}}]});
        assert_eq!(parse_completion("b", &ok).unwrap(), "a cat");
        assert!(matches!(
            parse_completion("b", &json!({"foo": 1})),
            Err(BackendError::Protocol { .. })
        ));
        let empty = json!({"choices": [{"message": {"content": "  "}}]});
        assert!(matches!(
            parse_completion("b", &empty),
            Err(BackendError::Content { .. })
        ));
    }

    #[test]
    fn debug_hides_nothing_secret() {
        std::env::set_var("POCA_TEST_SECRET_KEY", "sk-very-secret");
        let mut cfg = BackendConfig::new("http://x", "m");
        cfg.api_key_env = Some("POCA_TEST_SECRET_KEY".into());
        let dbg = format!("{cfg:?}");
        assert!(!dbg.contains("sk-very-secret"));
        assert_eq!(cfg.api_key().as_deref(), Some("sk-very-secret"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::new("http://x", "m");
        assert!(cfg.validate().is_ok());
        cfg.timeout_secs = 0.0;
        assert!(cfg.validate().is_err());
        let toml_err = toml::from_str::<BackendConfig>(
            "endpoint_url = 'http://x'\nmodel_id = 'm'\nbogus = 1\n",
        )
        .unwrap_err();
        assert!(toml_err.to_string().contains("bogus"));
    }
}
