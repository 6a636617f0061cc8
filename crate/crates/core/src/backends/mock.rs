use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::fingerprint::fingerprint;
use super::limiter::InFlightLimiter;
use super::retry::{with_retry, RetryPolicy};
use super::{BackendError, ChatBackend, ChatRequest, Completion, Result};

/// Computes a reply from the request itself. Used for synthetic mocks whose
/// answers follow a rule rather than a fixed table.
pub type Responder = Arc<dyn Fn(&ChatRequest) -> Result<String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    Fail(BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub seq: usize,
    pub fingerprint: String,
    pub request: ChatRequest,
}

/// Deterministic stand-in for a chat model. Scripted replies are looked up
/// by request fingerprint; a request that matches neither the script nor a
/// responder is an error.
pub struct MockBackend {
    id: String,
    script: Mutex<HashMap<String, VecDeque<MockReply>>>,
    responder: Option<Responder>,
    log: Mutex<Vec<CallRecord>>,
    delay: Option<Duration>,
    limiter: Option<InFlightLimiter>,
    retry: Option<RetryPolicy>,
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl MockBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            script: Mutex::new(HashMap::new()),
            responder: None,
            log: Mutex::new(Vec::new()),
            delay: None,
            limiter: None,
            retry: None,
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&ChatRequest) -> Result<String> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Arc::new(f));
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn with_max_in_flight(mut self, k: usize) -> Self {
        self.limiter = Some(InFlightLimiter::new(k));
        self
    }

    /// Retry transient scripted failures like the HTTP client does.
    pub fn with_retry(mut self, policy: RetryPolicy) -> Self {
        self.retry = Some(policy);
        self
    }

    pub fn script(self, request: &ChatRequest, reply: impl Into<String>) -> Self {
        self.script_sequence(&fingerprint(request), vec![MockReply::Text(reply.into())])
    }

    /// Replies are consumed in order; the last one repeats.
    pub fn script_sequence(self, fp: &str, replies: Vec<MockReply>) -> Self {
        self.script
            .lock()
            .unwrap()
            .insert(fp.to_string(), replies.into());
        self
    }

    /// Loads a JSON object mapping fingerprints to reply strings.
    pub fn load_script(mut self, path: &Path) -> std::result::Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let map: HashMap<String, String> =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        for (fp, reply) in map {
            self = self.script_sequence(&fp, vec![MockReply::Text(reply)]);
        }
        Ok(self)
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn attempt(&self, request: &ChatRequest, fp: &str) -> Result<String> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        {
            let mut log = self.log.lock().unwrap();
            let seq = log.len();
            log.push(CallRecord {
                seq,
                fingerprint: fp.to_string(),
                request: request.clone(),
            });
        }
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        let scripted = {
            let mut script = self.script.lock().unwrap();
            script.get_mut(fp).map(|q| {
                if q.len() > 1 {
                    q.pop_front().unwrap()
                } else {
                    q.front().cloned().unwrap()
                }
            })
        };
        let out = match (scripted, &self.responder) {
            (Some(MockReply::Text(t)), _) => Ok(t),
            (Some(MockReply::Fail(e)), _) => Err(e),
            (None, Some(f)) => f(request),
            (None, None) => Err(BackendError::Unscripted {
                backend: self.id.clone(),
                fingerprint: fp.to_string(),
            }),
        };
        self.active.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        request.validate(&self.id)?;
        let fp = fingerprint(request);
        let _permit = self.limiter.as_ref().map(InFlightLimiter::acquire);
        let (text, retries) = match &self.retry {
            Some(policy) => with_retry(policy, |_| self.attempt(request, &fp))?,
            None => (self.attempt(request, &fp)?, 0),
        };
        if text.trim().is_empty() {
            return Err(BackendError::content(&self.id, "empty completion"));
        }
        Ok(Completion { text, retries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{chat_complete, ChatMessage, Params};

    #[test]
    fn scripted_passthrough_and_unknown() {
        let req = ChatRequest::from_messages(vec![ChatMessage::user("hi")]);
        let mock = MockBackend::new("m").script(&req, "hello");
        assert_eq!(mock.complete(&req).unwrap().text, "hello");
        let other = ChatRequest::from_messages(vec![ChatMessage::user("bye")]);
        assert!(matches!(
            mock.complete(&other),
            Err(BackendError::Unscripted { .. })
        ));
        assert_eq!(mock.call_count(), 2);
        assert_eq!(mock.calls()[0].seq, 0);
    }

    #[test]
    fn retry_contract() {
        let req = ChatRequest::from_messages(vec![ChatMessage::user("q")]);
        let mock = MockBackend::new("m")
            .with_retry(RetryPolicy {
                max_retries: 2,
                base_delay: Duration::from_millis(1),
                max_delay: Duration::from_millis(1),
            })
            .script_sequence(
                &fingerprint(&req),
                vec![
                    MockReply::Fail(BackendError::transport("m", "timed out")),
                    MockReply::Text("ok".into()),
                ],
            );
        let c = mock.complete(&req).unwrap();
        assert_eq!(c.text, "ok");
        assert_eq!(c.retries, 1);
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn empty_reply_is_content_error() {
        let mock = MockBackend::new("m").with_responder(|_| Ok("   ".into()));
        let r = chat_complete(&mock, vec![ChatMessage::user("x")], &Params::new());
        assert!(matches!(r, Err(BackendError::Content { .. })));
    }

    #[test]
    fn in_flight_bound_holds() {
        let mock = MockBackend::new("m")
            .with_responder(|_| Ok("x".into()))
            .with_delay(Duration::from_millis(10))
            .with_max_in_flight(2);
        std::thread::scope(|s| {
            for i in 0..10 {
                let mock = &mock;
                s.spawn(move || {
                    let req = ChatRequest::from_messages(vec![ChatMessage::user(format!("{i}"))]);
                    mock.complete(&req).unwrap();
                });
            }
        });
        assert!(mock.peak_in_flight() <= 2);
        assert_eq!(mock.peak_in_flight(), 2);
        assert_eq!(mock.call_count(), 10);
    }
}
