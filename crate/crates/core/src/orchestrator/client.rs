use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::Semaphore;

use super::endpoint::EndpointBinding;
use crate::error::{Error, Result};
use crate::registry::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with ±50% jitter, capped at `max_delay`.
    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        let jittered = exp.mul_f64(rng.gen_range(0.5..1.5));
        jittered.min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrchestratorOptions {
    /// In-flight requests allowed per (server, model).
    pub per_endpoint_limit: usize,
    /// In-flight requests allowed overall.
    pub global_limit: usize,
    pub retry: RetryPolicy,
    /// Items per reward-endpoint request.
    pub reward_batch_size: usize,
    pub seed: u64,
}

impl OrchestratorOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            per_endpoint_limit: cfg.concurrency_limit,
            global_limit: cfg.concurrency_limit.saturating_mul(4),
            retry: RetryPolicy::default(),
            reward_batch_size: 16,
            seed: cfg.seed,
        }
    }
}

/// HTTP fan-out with admission control and retries.
pub struct Orchestrator {
    http: reqwest::Client,
    pub(crate) opts: OrchestratorOptions,
    global: Arc<Semaphore>,
    per_endpoint: Mutex<HashMap<String, Arc<Semaphore>>>,
    requests: AtomicU64,
}

impl Orchestrator {
    pub fn new(opts: OrchestratorOptions) -> Result<Self> {
        if opts.per_endpoint_limit == 0 || opts.global_limit == 0 || opts.reward_batch_size == 0 {
            return Err(Error::InvalidConfig("concurrency limits and batch size must be >= 1".into()));
        }
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self {
            http,
            global: Arc::new(Semaphore::new(opts.global_limit)),
            per_endpoint: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
            opts,
        })
    }

    pub fn options(&self) -> &OrchestratorOptions {
        &self.opts
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn endpoint_gate(&self, ep: &EndpointBinding) -> Arc<Semaphore> {
        let mut gates = self.per_endpoint.lock().expect("gate map poisoned");
        gates
            .entry(ep.key())
            .or_insert_with(|| Arc::new(Semaphore::new(self.opts.per_endpoint_limit)))
            .clone()
    }

    /// POSTs `body` to `route`, retrying transport errors, 429 and 5xx.
    /// Permits are held only while a request is in flight, not during backoff.
    pub(crate) async fn post_json<Req, Resp>(
        &self,
        ep: &EndpointBinding,
        route: &str,
        body: &Req,
        prompt_id: &str,
    ) -> Result<Resp>
    where
        Req: Serialize + ?Sized,
        Resp: DeserializeOwned,
    {
        let fail = |message: String| Error::Endpoint {
            endpoint: ep.key(),
            prompt_id: prompt_id.to_string(),
            message,
        };
        let key = ep.api_key()?;
        let gate = self.endpoint_gate(ep);
        let url = ep.url(route);
        let timeout = Duration::from_secs_f64(ep.timeout_secs);
        let mut attempt = 0u32;
        loop {
            let (retryable, message) = {
                let _global = self.global.acquire().await.expect("semaphore closed");
                let _local = gate.acquire().await.expect("semaphore closed");
                self.requests.fetch_add(1, Ordering::Relaxed);
                let mut req = self.http.post(&url).timeout(timeout).json(body);
                if let Some(k) = &key {
                    req = req.bearer_auth(k);
                }
                match req.send().await {
                    Ok(resp) if resp.status().is_success() => match resp.json::<Resp>().await {
                        Ok(v) => return Ok(v),
                        Err(e) => (false, format!("malformed response body: {e}")),
                    },
                    Ok(resp) => {
                        let status = resp.status();
                        let retryable = status.as_u16() == 429 || status.is_server_error();
                        let text = resp.text().await.unwrap_or_default();
                        (retryable, format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()))
                    }
                    Err(e) => (true, format!("transport error: {e}")),
                }
            };
            if !retryable || attempt >= ep.max_retries {
                return Err(fail(format!("{message} (after {} attempt(s))", attempt + 1)));
            }
            let delay = self.opts.retry.delay(attempt, &mut rand::thread_rng());
            tokio::time::sleep(delay).await;
            attempt += 1;
        }
    }
}
