//! Chat-completion HTTP client with retries, per-target rate limiting,
//! bounded-concurrency batching, and a persistent response cache.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::{Mutex, Semaphore};

use crate::cache::{CacheRecord, RequestSummary, ResponseCache};
use crate::target::ModelTarget;

/// A single zero-shot completion request.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub target: ModelTarget,
    /// Single user message; no system message unless the template carries
    /// one inline.
    pub prompt_text: String,
    pub temperature: f64,
    /// `None` means the provider default.
    pub max_output_tokens: Option<u32>,
}

impl CompletionRequest {
    pub fn new(target: ModelTarget, prompt_text: String) -> Self {
        let temperature = target.temperature;
        CompletionRequest {
            target,
            prompt_text,
            temperature,
            max_output_tokens: None,
        }
    }

    pub fn with_max_output_tokens(mut self, max: Option<u32>) -> Self {
        self.max_output_tokens = max;
        self
    }
}

/// The completion returned for a request, possibly replayed from cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelResponse {
    pub content: String,
    pub reasoning_trace: Option<String>,
    pub cached: bool,
    /// 0 when served from cache.
    pub latency_ms: u64,
    pub request_fingerprint: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid request: {detail}")]
    InvalidRequest { detail: String },
    #[error("credential variable {var} is not set")]
    MissingCredential { var: String },
    #[error("HTTP {status} from provider: {body}")]
    Http { status: u16, body: String },
    #[error("transport failure: {detail}")]
    Transport { detail: String },
    #[error("cannot parse provider response for request {fingerprint}: {detail}")]
    Parse { fingerprint: String, detail: String },
    #[error("retry budget exhausted after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("cache I/O failure: {0}")]
    Cache(#[from] std::io::Error),
}

impl ClientError {
    /// Transport failures and retryable statuses; used by callers that
    /// classify per-item failures.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            ClientError::Transport { .. } | ClientError::RetriesExhausted { .. }
        )
    }
}

/// Splits the first `<open>…<close>` block out of inline content,
/// returning (remaining content, trace).
fn split_inline_trace(
    content: &str,
    delims: &crate::target::ReasoningDelimiters,
) -> Option<(String, String)> {
    let open_at = content.find(&delims.open)?;
    let after_open = open_at + delims.open.len();
    let close_rel = content[after_open..].find(&delims.close)?;
    let close_at = after_open + close_rel;
    let trace = content[after_open..close_at].to_string();
    let mut remainder = content[..open_at].to_string();
    remainder.push_str(&content[close_at + delims.close.len()..]);
    Some((remainder.trim_start().to_string(), trace))
}

/// Collision-resistant digest over the request content: endpoint, model,
/// temperature, token limit, and prompt bytes in canonical order.
/// Credentials and timestamps never participate.
pub fn fingerprint(request: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"endpoint=");
    hasher.update(request.target.endpoint.as_bytes());
    hasher.update(b"\nmodel_id=");
    hasher.update(request.target.model_id.as_bytes());
    hasher.update(b"\ntemperature=");
    hasher.update(format!("{}", request.temperature).as_bytes());
    hasher.update(b"\nmax_output_tokens=");
    match request.max_output_tokens {
        Some(m) => hasher.update(format!("{m}").as_bytes()),
        None => hasher.update(b"default"),
    }
    hasher.update(b"\nprompt_text=");
    hasher.update(request.prompt_text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Retry and timeout policy. Defaults follow the evaluation protocol:
/// exponential backoff base 1s, factor 2, jitter ±20%, max 5 attempts.
#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_factor: f64,
    pub jitter_frac: f64,
    pub request_timeout: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            max_attempts: 5,
            backoff_base: Duration::from_secs(1),
            backoff_factor: 2.0,
            jitter_frac: 0.2,
            request_timeout: Duration::from_secs(300),
        }
    }
}

/// Sliding-window limiter: per target, at most `rate` sends in any
/// 1-second window.
pub struct RateLimiter {
    rate: u32,
    sent: Mutex<HashMap<String, VecDeque<Instant>>>,
}

impl RateLimiter {
    pub fn new(rate: u32) -> Self {
        RateLimiter {
            rate: rate.max(1),
            sent: Mutex::new(HashMap::new()),
        }
    }

    pub async fn acquire(&self, target_name: &str) {
        loop {
            let wait = {
                let mut sent = self.sent.lock().await;
                let queue = sent.entry(target_name.to_string()).or_default();
                let now = Instant::now();
                while queue
                    .front()
                    .is_some_and(|t| now.duration_since(*t) >= Duration::from_secs(1))
                {
                    queue.pop_front();
                }
                if queue.len() < self.rate as usize {
                    queue.push_back(now);
                    return;
                }
                Duration::from_secs(1) - now.duration_since(*queue.front().unwrap())
            };
            tokio::time::sleep(wait).await;
        }
    }
}

#[derive(Clone)]
pub struct Client {
    http: reqwest::Client,
    cache: ResponseCache,
    options: ClientOptions,
}

impl Client {
    pub fn new(cache_root: impl Into<std::path::PathBuf>, options: ClientOptions) -> Self {
        let http = reqwest::Client::builder()
            .timeout(options.request_timeout)
            .build()
            .expect("reqwest client builds");
        Client {
            http,
            cache: ResponseCache::new(cache_root),
            options,
        }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Completes a request, replaying from cache when possible. A cache
    /// hit performs no network call; a miss POSTs a chat-completion body,
    /// retrying timeouts, connection resets, 429, and 5xx with
    /// exponential backoff. Other 4xx statuses fail immediately.
    pub async fn complete(&self, request: &CompletionRequest) -> Result<ModelResponse, ClientError> {
        self.complete_limited(request, None).await
    }

    async fn complete_limited(
        &self,
        request: &CompletionRequest,
        limiter: Option<&RateLimiter>,
    ) -> Result<ModelResponse, ClientError> {
        if request.prompt_text.is_empty() {
            return Err(ClientError::InvalidRequest {
                detail: "prompt_text is empty".to_string(),
            });
        }
        let fp = fingerprint(request);
        if let Some(record) = self.cache.load(&fp)? {
            return Ok(ModelResponse {
                content: record.content,
                reasoning_trace: record.reasoning_trace,
                cached: true,
                latency_ms: 0,
                request_fingerprint: fp,
            });
        }

        let auth = match &request.target.auth_ref {
            Some(var) => Some(std::env::var(var).map_err(|_| ClientError::MissingCredential {
                var: var.clone(),
            })?),
            None => None,
        };

        let url = format!(
            "{}/chat/completions",
            request.target.endpoint.trim_end_matches('/')
        );
        let mut body = json!({
            "model": request.target.model_id,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "temperature": request.temperature,
        });
        if let Some(max) = request.max_output_tokens {
            body["max_tokens"] = json!(max);
        }

        let mut last_error = String::new();
        for attempt in 1..=self.options.max_attempts {
            if attempt > 1 {
                tokio::time::sleep(self.backoff(attempt)).await;
            }
            if let Some(limiter) = limiter {
                limiter.acquire(&request.target.name).await;
            }
            let started = Instant::now();
            let mut req = self.http.post(&url).json(&body);
            if let Some(token) = &auth {
                req = req.bearer_auth(token);
            }
            match req.send().await {
                Ok(response) => {
                    let status = response.status();
                    let text = response.text().await.unwrap_or_default();
                    if status.is_success() {
                        let latency_ms = started.elapsed().as_millis() as u64;
                        return self.accept(request, &fp, &text, latency_ms);
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        last_error = format!("HTTP {status}: {text}");
                        continue;
                    }
                    return Err(ClientError::Http {
                        status: status.as_u16(),
                        body: text,
                    });
                }
                Err(e) => {
                    // Timeouts and connection failures are retryable.
                    last_error = format!("transport: {e}");
                    continue;
                }
            }
        }
        Err(ClientError::RetriesExhausted {
            attempts: self.options.max_attempts,
            last: last_error,
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.options.backoff_base.as_secs_f64()
            * self.options.backoff_factor.powi(attempt as i32 - 2);
        let jitter = 1.0 + rand::rng().random_range(-self.options.jitter_frac..=self.options.jitter_frac);
        Duration::from_secs_f64((base * jitter).max(0.0))
    }

    fn accept(
        &self,
        request: &CompletionRequest,
        fp: &str,
        raw: &str,
        latency_ms: u64,
    ) -> Result<ModelResponse, ClientError> {
        let parsed: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| ClientError::Parse {
                fingerprint: fp.to_string(),
                detail: e.to_string(),
            })?;
        let message = parsed
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .ok_or_else(|| ClientError::Parse {
                fingerprint: fp.to_string(),
                detail: "missing choices[0].message".to_string(),
            })?;
        let mut content = message
            .get("content")
            .and_then(|c| c.as_str())
            .unwrap_or_default()
            .to_string();
        let mut reasoning_trace = message
            .get("reasoning_content")
            .or_else(|| message.get("reasoning"))
            .and_then(|r| r.as_str())
            .map(str::to_string);

        // Providers without a dedicated field may interleave the trace in
        // the content between configured delimiters.
        if reasoning_trace.is_none() {
            if let Some(delims) = &request.target.reasoning_delimiters {
                if let Some((remainder, trace)) = split_inline_trace(&content, delims) {
                    content = remainder;
                    reasoning_trace = Some(trace);
                }
            }
        }

        let record = CacheRecord {
            request_summary: RequestSummary {
                endpoint: request.target.endpoint.clone(),
                model_id: request.target.model_id.clone(),
                temperature: request.temperature,
                max_output_tokens: request.max_output_tokens,
                prompt_text: request.prompt_text.clone(),
            },
            content: content.clone(),
            reasoning_trace: reasoning_trace.clone(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .unwrap_or_default()
                .as_secs(),
        };
        self.cache.store(fp, &record)?;

        Ok(ModelResponse {
            content,
            reasoning_trace,
            cached: false,
            latency_ms,
            request_fingerprint: fp.to_string(),
        })
    }

    /// Runs a batch with at most `parallelism` requests in flight and at
    /// most `rate_limit_per_target` sends per target per sliding second.
    /// Results come back in input order; per-item failures are embedded
    /// and never abort the batch.
    pub async fn run_batch(
        &self,
        requests: Vec<CompletionRequest>,
        parallelism: usize,
        rate_limit_per_target: u32,
    ) -> Vec<Result<ModelResponse, ClientError>> {
        let semaphore = Arc::new(Semaphore::new(parallelism.max(1)));
        let limiter = Arc::new(RateLimiter::new(rate_limit_per_target));
        let mut handles = Vec::with_capacity(requests.len());
        for request in requests {
            let semaphore = Arc::clone(&semaphore);
            let limiter = Arc::clone(&limiter);
            let client = self.clone();
            handles.push(tokio::spawn(async move {
                let _permit = semaphore.acquire().await.expect("semaphore open");
                client.complete_limited(&request, Some(&limiter)).await
            }));
        }
        let mut results = Vec::with_capacity(handles.len());
        for handle in handles {
            results.push(match handle.await {
                Ok(result) => result,
                Err(e) => Err(ClientError::Transport {
                    detail: format!("worker panicked: {e}"),
                }),
            });
        }
        results
    }
}
