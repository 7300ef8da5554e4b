//! Text-completion backends.
//!
//! The engine only ever sees [`CompletionBackend::complete`]. Live model
//! clients live outside this crate; [`ScriptedBackend`] replays canned
//! replies for hermetic runs.

use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("backend error: {0}")]
pub struct BackendError(pub String);

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, context: &str) -> Result<String, BackendError>;

    /// Backends that cannot take concurrent calls return true; the engine
    /// then serializes calls through the handle.
    fn is_serial(&self) -> bool {
        false
    }

    fn name(&self) -> &str {
        "backend"
    }
}

/// Shared handle that enforces a backend's declared concurrency.
#[derive(Clone)]
pub struct BackendHandle {
    inner: Arc<dyn CompletionBackend>,
    gate: Arc<Mutex<()>>,
}

impl BackendHandle {
    pub fn new(backend: Arc<dyn CompletionBackend>) -> Self {
        Self {
            inner: backend,
            gate: Arc::new(Mutex::new(())),
        }
    }

    pub fn from_backend<B: CompletionBackend + 'static>(backend: B) -> Self {
        Self::new(Arc::new(backend))
    }

    pub fn complete(&self, prompt: &str, context: &str) -> Result<String, BackendError> {
        if self.inner.is_serial() {
            let _guard = self.gate.lock().unwrap_or_else(|e| e.into_inner());
            self.inner.complete(prompt, context)
        } else {
            self.inner.complete(prompt, context)
        }
    }

    pub fn name(&self) -> &str {
        self.inner.name()
    }
}

impl fmt::Debug for BackendHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendHandle")
            .field("name", &self.inner.name())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedCall {
    pub prompt: String,
    pub context: String,
    pub reply: Result<String, String>,
}

/// Replays a fixed queue of replies; an exhausted script is an error.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<Result<String, String>>>,
    calls: Mutex<Vec<RecordedCall>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: Mutex::new(replies.into_iter().map(|r| Ok(r.into())).collect()),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Queue a backend failure.
    pub fn push_error(&self, reason: impl Into<String>) {
        self.replies.lock().unwrap().push_back(Err(reason.into()));
    }

    pub fn push_reply(&self, reply: impl Into<String>) {
        self.replies.lock().unwrap().push_back(Ok(reply.into()));
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, prompt: &str, context: &str) -> Result<String, BackendError> {
        let reply = self
            .replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err("script exhausted".to_string()));
        self.calls.lock().unwrap().push(RecordedCall {
            prompt: prompt.to_string(),
            context: context.to_string(),
            reply: reply.clone(),
        });
        reply.map_err(BackendError)
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Finds the first JSON value embedded in `raw`, skipping prose and code
/// fences around it.
pub fn extract_json(raw: &str) -> Option<serde_json::Value> {
    for (idx, ch) in raw.char_indices() {
        if ch != '{' && ch != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[idx..]).into_iter::<serde_json::Value>();
        if let Some(Ok(value)) = stream.next() {
            if value.is_object() || value.is_array() {
                return Some(value);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replays_in_order_then_fails() {
        let backend = ScriptedBackend::new(["a", "b"]);
        assert_eq!(backend.complete("p", "c").unwrap(), "a");
        assert_eq!(backend.complete("p", "c").unwrap(), "b");
        assert!(backend.complete("p", "c").is_err());
        assert_eq!(backend.calls().len(), 3);
    }

    #[test]
    fn extract_json_strips_fences_and_prose() {
        let raw = "Sure! Here it is:\n```json\n{\"a\": 1}\n```\nbye";
        assert_eq!(extract_json(raw).unwrap(), serde_json::json!({"a": 1}));
        assert_eq!(extract_json("[1, 2] tail").unwrap(), serde_json::json!([1, 2]));
        assert!(extract_json("no structure here").is_none());
        // a stray brace before the payload is skipped
        assert_eq!(
            extract_json("{oops} then {\"k\": true}").unwrap(),
            serde_json::json!({"k": true})
        );
    }

    struct Serial(std::sync::atomic::AtomicUsize);

    impl CompletionBackend for Serial {
        fn complete(&self, _: &str, _: &str) -> Result<String, BackendError> {
            use std::sync::atomic::Ordering;
            let inflight = self.0.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(2));
            self.0.fetch_sub(1, Ordering::SeqCst);
            Ok(inflight.to_string())
        }

        fn is_serial(&self) -> bool {
            true
        }
    }

    #[test]
    fn serial_backends_never_see_overlapping_calls() {
        let handle = BackendHandle::from_backend(Serial(Default::default()));
        let replies: Vec<String> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..8)
                .map(|_| {
                    let h = handle.clone();
                    s.spawn(move || h.complete("", "").unwrap())
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(replies.iter().all(|r| r == "0"));
    }
}
