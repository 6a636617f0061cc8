use std::sync::{Arc, OnceLock};

use serde_json::{json, Value};

use super::http::{post_json, BackendConfig};
use super::limiter::InFlightLimiter;
use super::retry::with_retry;
use super::{BackendError, ImageAttachment, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedPayload {
    Text(String),
    /// PNG bytes.
    Image(Arc<Vec<u8>>),
}

/// Maps text or an image into a shared embedding space. Vectors need not be
/// normalized; wrap with [`NormalizingEmbedder`] for unit vectors.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed_raw(&self, payload: &EmbedPayload) -> Result<Vec<f64>>;
}

/// Posts `{model, input}` and reads `data[0].embedding`. Images are sent as
/// base64 data URLs.
pub struct HttpEmbedder {
    id: String,
    cfg: BackendConfig,
    agent: ureq::Agent,
    limiter: InFlightLimiter,
}

impl HttpEmbedder {
    pub fn new(id: impl Into<String>, cfg: BackendConfig) -> std::result::Result<Self, String> {
        cfg.validate()?;
        Ok(Self {
            id: id.into(),
            agent: cfg.agent(),
            limiter: InFlightLimiter::new(cfg.max_in_flight),
            cfg,
        })
    }

    fn body(&self, payload: &EmbedPayload) -> Value {
        let input = match payload {
            EmbedPayload::Text(t) => t.clone(),
            EmbedPayload::Image(bytes) => ImageAttachment {
                media_type: "image/png".into(),
                data: bytes.clone(),
            }
            .data_url(),
        };
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(self.cfg.model_id));
        body.insert("input".into(), json!(input));
        for (k, v) in &self.cfg.params {
            body.insert(k.clone(), v.clone());
        }
        Value::Object(body)
    }
}

pub(crate) fn parse_embedding(backend: &str, body: &Value) -> Result<Vec<f64>> {
    let arr = body
        .get("data")
        .and_then(|d| d.get(0))
        .and_then(|d| d.get("embedding"))
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::protocol(backend, "response has no data[0].embedding"))?;
    arr.iter()
        .map(|v| {
            v.as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| BackendError::protocol(backend, "embedding has a non-numeric entry"))
        })
        .collect()
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_raw(&self, payload: &EmbedPayload) -> Result<Vec<f64>> {
        let body = self.body(payload);
        let key = self.cfg.api_key();
        let _permit = self.limiter.acquire();
        let (v, _) = with_retry(&self.cfg.retry_policy(), |_| {
            let resp = post_json(
                &self.agent,
                &self.id,
                &self.cfg.endpoint_url,
                key.as_deref(),
                &body,
            )?;
            parse_embedding(&self.id, &resp)
        })?;
        Ok(v)
    }
}

type EmbedFn = Arc<dyn Fn(&EmbedPayload) -> Result<Vec<f64>> + Send + Sync>;

/// Embeds by a caller-supplied rule.
pub struct MockEmbedder {
    id: String,
    f: EmbedFn,
}

impl MockEmbedder {
    pub fn new(
        id: impl Into<String>,
        f: impl Fn(&EmbedPayload) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            f: Arc::new(f),
        }
    }
}

impl Embedder for MockEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_raw(&self, payload: &EmbedPayload) -> Result<Vec<f64>> {
        (self.f)(payload)
    }
}

/// L2-normalizes every vector and pins the dimension to the first one seen.
pub struct NormalizingEmbedder<E> {
    inner: E,
    dim: OnceLock<usize>,
}

impl<E: Embedder> NormalizingEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            dim: OnceLock::new(),
        }
    }

    pub fn embed(&self, payload: &EmbedPayload) -> Result<Vec<f64>> {
        let id = self.inner.id();
        let mut v = self.inner.embed_raw(payload)?;
        if v.is_empty() {
            return Err(BackendError::content(id, "empty embedding"));
        }
        let dim = *self.dim.get_or_init(|| v.len());
        if v.len() != dim {
            return Err(BackendError::content(
                id,
                format!("embedding dimension {} differs from {dim}", v.len()),
            ));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(BackendError::content(id, "zero-norm embedding"));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }
}

impl<E: Embedder> Embedder for NormalizingEmbedder<E> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn embed_raw(&self, payload: &EmbedPayload) -> Result<Vec<f64>> {
        self.embed(payload)
    }
}
