//! Model backends: the captioner, the merging LLM, the VQA answerer, the NLI
//! judge, and the embedding scorer. Every chat-style model speaks the common
//! chat-completions JSON protocol; tests and dry runs use [`MockBackend`].

mod cache;
mod embed;
mod fingerprint;
mod http;
mod limiter;
mod mock;
mod nli;
mod retry;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CachedBackend, ResponseCache};
pub use embed::{EmbedPayload, Embedder, HttpEmbedder, MockEmbedder, NormalizingEmbedder};
pub use fingerprint::{fingerprint, normalize_whitespace};
pub use http::{BackendConfig, HttpChatBackend, PrefixMode};
pub use limiter::{InFlightLimiter, Permit};
pub use mock::{CallRecord, MockBackend, MockReply, Responder};
pub use nli::{parse_nli_label, ChatNliJudge, NliJudge, NliLabel, NLI_SYSTEM_PROMPT};
pub use retry::{with_retry, RetryPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Connection failures, timeouts, and retryable server statuses.
    #[error("{backend}: transport error: {message}")]
    Transport { backend: String, message: String },
    /// The server answered with something that is not a valid completion.
    #[error("{backend}: protocol error: {message}")]
    Protocol { backend: String, message: String },
    /// A well-formed response whose content cannot be used.
    #[error("{backend}: content error: {message}")]
    Content { backend: String, message: String },
    #[error("{backend}: no scripted response for request {fingerprint}")]
    Unscripted {
        backend: String,
        fingerprint: String,
    },
    #[error("{backend}: invalid request: {message}")]
    InvalidRequest { backend: String, message: String },
    #[error("response cache: {0}")]
    Cache(String),
}

impl BackendError {
    pub fn transport(backend: &str, message: impl Into<String>) -> Self {
        Self::Transport {
            backend: backend.to_string(),
            message: message.into(),
        }
    }

    pub fn protocol(backend: &str, message: impl Into<String>) -> Self {
        Self::Protocol {
            backend: backend.to_string(),
            message: message.into(),
        }
    }

    pub fn content(backend: &str, message: impl Into<String>) -> Self {
        Self::Content {
            backend: backend.to_string(),
            message: message.into(),
        }
    }

    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }

    pub fn category(&self) -> &'static str {
        match self {
            BackendError::Transport { .. } => "transport",
            BackendError::Protocol { .. } => "protocol",
            BackendError::Content { .. } => "content",
            BackendError::Unscripted { .. } => "unscripted",
            BackendError::InvalidRequest { .. } => "invalid_request",
            BackendError::Cache(_) => "cache",
        }
    }
}

pub type Result<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// An image attached to a user message. The bytes are shared, not copied,
/// when requests are cloned.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAttachment {
    pub media_type: String,
    pub data: Arc<Vec<u8>>,
}

impl ImageAttachment {
    pub fn png(data: Vec<u8>) -> Self {
        Self {
            media_type: "image/png".to_string(),
            data: Arc::new(data),
        }
    }

    pub fn data_url(&self) -> String {
        use base64::Engine;
        format!(
            "data:{};base64,{}",
            self.media_type,
            base64::engine::general_purpose::STANDARD.encode(self.data.as_slice())
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub image: Option<ImageAttachment>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
            image: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            image: None,
        }
    }

    pub fn user_with_image(content: impl Into<String>, image: ImageAttachment) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            image: Some(image),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            image: None,
        }
    }
}

/// Sampling parameters passed through to the server untouched.
pub type Params = std::collections::BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    /// Text the assistant's reply should continue from.
    pub assistant_prefix: Option<String>,
    pub params: Params,
}

impl ChatRequest {
    /// Builds a request from a rendered prompt. A trailing assistant message
    /// becomes the generation prefix.
    pub fn from_messages(mut messages: Vec<ChatMessage>) -> Self {
        let assistant_prefix = match messages.last() {
            Some(m) if m.role == Role::Assistant => messages.pop().map(|m| m.content),
            _ => None,
        };
        Self {
            messages,
            assistant_prefix,
            params: Params::new(),
        }
    }

    pub fn with_params(mut self, params: Params) -> Self {
        self.params = params;
        self
    }

    pub fn validate(&self, backend: &str) -> Result<()> {
        let invalid = |message: &str| BackendError::InvalidRequest {
            backend: backend.to_string(),
            message: message.to_string(),
        };
        if self.messages.is_empty() {
            return Err(invalid("no messages"));
        }
        if self
            .messages
            .iter()
            .any(|m| m.image.is_some() && m.role != Role::User)
        {
            return Err(invalid(
                "image attachments are only allowed on user messages",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Transport retries spent before this completion arrived.
    pub retries: u32,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<Completion>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        (**self).complete(request)
    }
}

/// Sends `messages` (optionally ending in an assistant prefix) and returns
/// the completion text.
pub fn chat_complete(
    backend: &dyn ChatBackend,
    messages: Vec<ChatMessage>,
    params: &Params,
) -> Result<Completion> {
    let request = ChatRequest::from_messages(messages).with_params(params.clone());
    request.validate(backend.id())?;
    let completion = backend.complete(&request)?;
    if completion.text.trim().is_empty() {
        return Err(BackendError::content(backend.id(), "empty response"));
    }
    Ok(completion)
}

/// Asks a vision-capable chat model to caption one image.
pub fn caption_image(
    backend: &dyn ChatBackend,
    png: Vec<u8>,
    prompt: &str,
    params: &Params,
) -> Result<Completion> {
    chat_complete(
        backend,
        vec![ChatMessage::user_with_image(
            prompt,
            ImageAttachment::png(png),
        )],
        params,
    )
}

/// Removes `prefix` once from the start of `text` when the model echoed it.
pub fn strip_prefix_once<'a>(text: &'a str, prefix: &str) -> &'a str {
    let trimmed = text.trim_start();
    if prefix.is_empty() {
        return trimmed.trim_end();
    }
    trimmed.strip_prefix(prefix).unwrap_or(trimmed).trim()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_is_split_off() {
        let req = ChatRequest::from_messages(vec![
            ChatMessage::system("s"),
            ChatMessage::user("u"),
            ChatMessage::assistant("Here's the merged caption:"),
        ]);
        assert_eq!(req.messages.len(), 2);
        assert_eq!(
            req.assistant_prefix.as_deref(),
            Some("Here's the merged caption:")
        );
    }

    #[test]
    fn image_only_on_user() {
        let mut m = ChatMessage::system("s");
        m.image = Some(ImageAttachment::png(vec![1, 2, 3]));
        let req = ChatRequest::from_messages(vec![m]);
        assert!(matches!(
            req.validate("x"),
            Err(BackendError::InvalidRequest { .. })
        ));
        assert!(ChatRequest::default().validate("x").is_err());
    }

    #[test]
    fn strip_once() {
        let p = "Here's the merged caption:";
        assert_eq!(
            strip_prefix_once("Here's the merged caption: a dog", p),
            "a dog"
        );
        assert_eq!(
            strip_prefix_once("Here's the merged caption: Here's the merged caption: x", p),
            "Here's the merged caption: x"
        );
        assert_eq!(strip_prefix_once("  a dog\n", p), "a dog");
    }

    #[test]
    fn data_url() {
        assert_eq!(
            ImageAttachment::png(b"hi".to_vec()).data_url(),
            "data:image/png;base64,aGk="
        );
    }
}
