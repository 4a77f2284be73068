//! HTTP clients for the entailment, embedding and chat services, routed
//! through the response cache with bounded retries and a cap on in-flight
//! requests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rankcomp_core::rankers::DenseVector;
use rankcomp_core::services::{
    EmbeddingProvider, EntailmentScorer, GenerationRequest, LlmClient, ServiceError,
};
use serde_json::{json, Value};

use crate::cache::{content_key, CallKind, ResponseCache};

/// A JSON POST.
#[derive(Debug, Clone)]
pub struct HttpRequest<'a> {
    pub url: &'a str,
    pub body: &'a str,
    pub headers: &'a [(String, String)],
    pub timeout: Duration,
}

/// Sends one request; returns the response body or a description of the
/// failure. Non-2xx statuses are failures.
pub trait Transport: Send + Sync {
    fn post(&self, request: &HttpRequest<'_>) -> Result<String, String>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post(&self, request: &HttpRequest<'_>) -> Result<String, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(request.timeout))
            .build()
            .into();
        let mut req = agent
            .post(request.url)
            .header("content-type", "application/json");
        for (k, v) in request.headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send(request.body).map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
            timeout: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        // attempt is 1-based; no delay before the first.
        if attempt <= 1 {
            Duration::ZERO
        } else {
            self.base_delay * 2u32.saturating_pow(attempt - 2)
        }
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Counting semaphore bounding concurrent network requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Shared plumbing behind the three service clients.
pub struct ServiceClient {
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    policy: RetryPolicy,
    limiter: Limiter,
    network_calls: AtomicUsize,
}

impl ServiceClient {
    pub fn new(transport: Arc<dyn Transport>, cache: Option<ResponseCache>) -> Self {
        Self {
            transport,
            cache,
            policy: RetryPolicy::default(),
            limiter: Limiter::new(DEFAULT_MAX_IN_FLIGHT),
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = Limiter::new(n);
        self
    }

    /// Requests actually sent, counting retries.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    pub fn cached(&self, kind: CallKind, request: &Value) -> Option<String> {
        self.cache.as_ref()?.get(kind, request).map(|e| e.response)
    }

    /// Cache lookup, then on a miss the network with retries; successful
    /// responses are stored under `request`'s content address.
    pub fn call(
        &self,
        kind: CallKind,
        url: &str,
        headers: &[(String, String)],
        request: &Value,
    ) -> Result<String, ServiceError> {
        if let Some(hit) = self.cached(kind, request) {
            return Ok(hit);
        }
        let body = self.send(kind, url, headers, request)?;
        self.store(kind, request, &body)?;
        Ok(body)
    }

    /// Network only, with retries; nothing is cached.
    pub fn send(
        &self,
        kind: CallKind,
        url: &str,
        headers: &[(String, String)],
        request: &Value,
    ) -> Result<String, ServiceError> {
        let body = request.to_string();
        let http = HttpRequest {
            url,
            body: &body,
            headers,
            timeout: self.policy.timeout,
        };
        let mut last = String::new();
        for attempt in 1..=self.policy.attempts.max(1) {
            std::thread::sleep(self.policy.delay_before(attempt));
            let result = {
                let _permit = self.limiter.acquire();
                self.network_calls.fetch_add(1, Ordering::Relaxed);
                self.transport.post(&http)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(e) => last = e,
            }
        }
        Err(ServiceError::Transport {
            digest: content_key(kind, request),
            attempts: self.policy.attempts.max(1),
            message: last,
        })
    }

    pub fn store(
        &self,
        kind: CallKind,
        request: &Value,
        response: &str,
    ) -> Result<(), ServiceError> {
        if let Some(cache) = &self.cache {
            cache
                .put(kind, request, response)
                .map_err(|e| ServiceError::Protocol(format!("cache write failed: {e}")))?;
        }
        Ok(())
    }
}

fn parse(body: &str) -> Result<Value, ServiceError> {
    serde_json::from_str(body).map_err(|e| ServiceError::Protocol(format!("invalid JSON: {e}")))
}

/// `POST {"premise", "hypothesis"}` → `{"score"}`.
pub struct HttpEntailment {
    client: Arc<ServiceClient>,
    url: String,
}

impl HttpEntailment {
    pub fn new(client: Arc<ServiceClient>, url: impl Into<String>) -> Self {
        Self {
            client,
            url: url.into(),
        }
    }
}

impl EntailmentScorer for HttpEntailment {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ServiceError> {
        let request = json!({"premise": premise, "hypothesis": hypothesis});
        let body = self
            .client
            .call(CallKind::Entail, &self.url, &[], &request)?;
        let score = parse(&body)?
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| ServiceError::Protocol("missing numeric `score`".into()))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(ServiceError::Protocol(format!(
                "score {score} outside [0, 1]"
            )));
        }
        Ok(score)
    }
}

/// `POST {"texts": [...]}` → `{"dim", "vectors"}`. Cached per text: a batch
/// only sends the texts that miss, and each returned vector is stored under
/// the single-text request it answers.
pub struct HttpEmbedder {
    client: Arc<ServiceClient>,
    url: String,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(client: Arc<ServiceClient>, url: impl Into<String>, dim: usize) -> Self {
        Self {
            client,
            url: url.into(),
            dim,
        }
    }

    fn decode(&self, body: &str, expected: usize) -> Result<Vec<Vec<f64>>, ServiceError> {
        let v = parse(body)?;
        let dim = v
            .get("dim")
            .and_then(Value::as_u64)
            .ok_or_else(|| ServiceError::Protocol("missing `dim`".into()))?
            as usize;
        if dim != self.dim {
            return Err(ServiceError::Protocol(format!(
                "embedding dim {dim} differs from configured {}",
                self.dim
            )));
        }
        let vectors = v
            .get("vectors")
            .and_then(Value::as_array)
            .ok_or_else(|| ServiceError::Protocol("missing `vectors`".into()))?;
        if vectors.len() != expected {
            return Err(ServiceError::Protocol(format!(
                "{} vectors for {expected} texts",
                vectors.len()
            )));
        }
        vectors
            .iter()
            .map(|row| {
                let row = row
                    .as_array()
                    .ok_or_else(|| ServiceError::Protocol("vector is not an array".into()))?;
                let vals: Option<Vec<f64>> = row.iter().map(Value::as_f64).collect();
                let vals =
                    vals.ok_or_else(|| ServiceError::Protocol("non-numeric vector entry".into()))?;
                if vals.len() != dim {
                    return Err(ServiceError::Protocol(format!(
                        "vector of length {} (dim {dim})",
                        vals.len()
                    )));
                }
                Ok(vals)
            })
            .collect()
    }
}

fn single_text_request(text: &str) -> Value {
    json!({"texts": [text]})
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<DenseVector>, ServiceError> {
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut missing: Vec<&str> = Vec::new();
        for (slot, text) in out.iter_mut().zip(texts) {
            match self
                .client
                .cached(CallKind::Embed, &single_text_request(text))
            {
                Some(body) => *slot = Some(self.decode(&body, 1)?.remove(0)),
                None if !missing.contains(&text.as_str()) => missing.push(text),
                None => {}
            }
        }
        if !missing.is_empty() {
            let request = json!({"texts": missing});
            let body = self
                .client
                .send(CallKind::Embed, &self.url, &[], &request)?;
            let vectors = self.decode(&body, missing.len())?;
            for (text, vec) in missing.iter().zip(vectors) {
                let single = json!({"dim": self.dim, "vectors": [vec]}).to_string();
                self.client
                    .store(CallKind::Embed, &single_text_request(text), &single)?;
                for (slot, t) in out.iter_mut().zip(texts) {
                    if t == text {
                        *slot = Some(vec.clone());
                    }
                }
            }
        }
        out.into_iter()
            .map(|v| {
                DenseVector::new(v.expect("every text resolved"))
                    .map_err(|e| ServiceError::Protocol(e.to_string()))
            })
            .collect()
    }
}

/// Chat-completions style endpoint; the generation is read from
/// `choices[0].message.content`.
pub struct HttpLlm {
    client: Arc<ServiceClient>,
    url: String,
    model: String,
    headers: Vec<(String, String)>,
}

impl HttpLlm {
    pub fn new(
        client: Arc<ServiceClient>,
        url: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        Self {
            client,
            url: url.into(),
            model: model.into(),
            headers: Vec::new(),
        }
    }

    pub fn with_api_key(mut self, key: &str) -> Self {
        self.headers
            .push(("authorization".into(), format!("Bearer {key}")));
        self
    }

    pub fn request_body(&self, request: &GenerationRequest) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
        })
    }
}

impl LlmClient for HttpLlm {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ServiceError> {
        let body = self.request_body(request);
        let resp = self
            .client
            .call(CallKind::Llm, &self.url, &self.headers, &body)?;
        parse(&resp)?
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ServiceError::Protocol("missing choices[0].message.content".into()))
    }
}
