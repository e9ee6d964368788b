//! Deterministic in-process server implementing the four endpoint contracts,
//! with call counters and in-flight tracking for tests.
//!
//! Routes live under `/v1`, so [`MockServer::base_url`] can be used directly
//! as an [`EndpointBinding`](super::EndpointBinding) base URL.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;
use xxhash_rust::xxh3::xxh3_64;

use super::endpoint::{
    ChatChoice, ChatMessage, ChatRequest, ChatResponse, EmbeddingData, EmbeddingRequest, EmbeddingResponse,
    RewardRequest, RewardResponse, ScoreRequest, ScoreResponse, ScoredToken,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockBehavior {
    /// Every completion is the prompt text.
    Echo,
    /// `"[model] prompt"`.
    Template,
    /// `"The answer is \boxed{N}."` with N a hash of (model, prompt, sample)
    /// modulo `modulus`.
    Math { modulus: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub behavior: MockBehavior,
    /// Models that answer every request with HTTP 500.
    pub failing_models: Vec<String>,
    /// The first N identical requests fail with 503 before one succeeds.
    pub transient_failures: u32,
    pub latency_ms: u64,
    /// Logprob reported for every token of `/score`; hashed in [-4, 0] when unset.
    pub fixed_logprob: Option<f64>,
    pub embedding_dim: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            behavior: MockBehavior::Echo,
            failing_models: Vec::new(),
            transient_failures: 0,
            latency_ms: 0,
            fixed_logprob: None,
            embedding_dim: 16,
        }
    }
}

/// The answer the math behavior gives for one sample.
pub fn math_answer(model: &str, prompt: &str, sample: u32, modulus: u64) -> u64 {
    xxh3_64(format!("{model}|{prompt}|{sample}").as_bytes()) % modulus.max(1)
}

/// Splits text into whitespace-terminated pieces; concatenation is lossless.
pub fn mock_tokenize(text: &str) -> Vec<&str> {
    text.split_inclusive(char::is_whitespace).collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockStats {
    /// route → model → successful and failed calls.
    pub calls: BTreeMap<String, BTreeMap<String, u64>>,
    /// model → largest number of concurrently open requests observed.
    pub max_in_flight: BTreeMap<String, u64>,
}

impl MockStats {
    pub fn calls_to(&self, route: &str) -> u64 {
        self.calls.get(route).map_or(0, |m| m.values().sum())
    }

    pub fn calls_to_model(&self, route: &str, model: &str) -> u64 {
        self.calls.get(route).and_then(|m| m.get(model)).copied().unwrap_or(0)
    }
}

#[derive(Default)]
struct Counters {
    stats: MockStats,
    in_flight: HashMap<String, u64>,
    attempts: HashMap<u64, u32>,
}

struct Shared {
    config: MockConfig,
    counters: Mutex<Counters>,
}

struct InFlight<'a> {
    shared: &'a Shared,
    model: String,
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        let mut c = self.shared.counters.lock().expect("mock counters poisoned");
        if let Some(n) = c.in_flight.get_mut(&self.model) {
            *n -= 1;
        }
    }
}

impl Shared {
    /// Records the call and decides whether it should fail.
    async fn enter<'a>(&'a self, route: &str, model: &str, body_key: &str) -> std::result::Result<InFlight<'a>, Response> {
        let transient = {
            let mut c = self.counters.lock().expect("mock counters poisoned");
            *c.stats
                .calls
                .entry(route.to_string())
                .or_default()
                .entry(model.to_string())
                .or_default() += 1;
            let now = {
                let n = c.in_flight.entry(model.to_string()).or_default();
                *n += 1;
                *n
            };
            let max = c.stats.max_in_flight.entry(model.to_string()).or_default();
            *max = (*max).max(now);
            let key = xxh3_64(format!("{route}\u{0}{model}\u{0}{body_key}").as_bytes());
            let seen = c.attempts.entry(key).or_default();
            *seen += 1;
            *seen <= self.config.transient_failures
        };
        let guard = InFlight {
            shared: self,
            model: model.to_string(),
        };
        if self.config.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.config.latency_ms)).await;
        }
        if self.config.failing_models.iter().any(|m| m == model) {
            return Err((StatusCode::INTERNAL_SERVER_ERROR, "model unavailable").into_response());
        }
        if transient {
            return Err((StatusCode::SERVICE_UNAVAILABLE, "try again").into_response());
        }
        Ok(guard)
    }
}

type AppState = Arc<Shared>;

async fn chat(State(s): State<AppState>, Json(req): Json<ChatRequest>) -> Response {
    let prompt: String = req.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
    let _guard = match s.enter("chat", &req.model, &prompt).await {
        Ok(g) => g,
        Err(r) => return r,
    };
    let choices = (0..req.n.max(1))
        .map(|i| {
            let content = match &s.config.behavior {
                MockBehavior::Echo => prompt.clone(),
                MockBehavior::Template => format!("[{}] {}", req.model, prompt),
                MockBehavior::Math { modulus } => {
                    format!("The answer is \\boxed{{{}}}.", math_answer(&req.model, &prompt, i, *modulus))
                }
            };
            ChatChoice {
                index: i,
                message: ChatMessage {
                    role: "assistant".into(),
                    content,
                },
            }
        })
        .collect();
    Json(ChatResponse { choices }).into_response()
}

async fn score(State(s): State<AppState>, Json(req): Json<ScoreRequest>) -> Response {
    let key = format!("{}\u{0}{}", req.prompt, req.continuation);
    let _guard = match s.enter("score", &req.model, &key).await {
        Ok(g) => g,
        Err(r) => return r,
    };
    let prompt = mock_tokenize(&req.prompt);
    let cont = mock_tokenize(&req.continuation);
    let mut tokens: Vec<ScoredToken> = prompt
        .iter()
        .map(|t| ScoredToken {
            text: t.to_string(),
            logprob: None,
        })
        .collect();
    for (pos, t) in cont.iter().enumerate() {
        let lp = s.config.fixed_logprob.unwrap_or_else(|| {
            let h = xxh3_64(format!("{}|{pos}|{t}", req.model).as_bytes());
            -((h % 4001) as f64) / 1000.0
        });
        tokens.push(ScoredToken {
            text: t.to_string(),
            logprob: Some(lp),
        });
    }
    Json(ScoreResponse {
        prompt_tokens: prompt.len(),
        tokens,
    })
    .into_response()
}

async fn reward(State(s): State<AppState>, Json(req): Json<RewardRequest>) -> Response {
    let key: String = req.items.iter().map(|i| format!("{}\u{0}{}\u{1}", i.prompt, i.response)).collect();
    let _guard = match s.enter("reward", &req.model, &key).await {
        Ok(g) => g,
        Err(r) => return r,
    };
    let scores = req.items.iter().map(|i| i.response.chars().count() as f64).collect();
    Json(RewardResponse { scores }).into_response()
}

async fn embeddings(State(s): State<AppState>, Json(req): Json<EmbeddingRequest>) -> Response {
    let _guard = match s.enter("embeddings", &req.model, &req.input.join("\u{0}")).await {
        Ok(g) => g,
        Err(r) => return r,
    };
    let dim = s.config.embedding_dim.max(1);
    let data = req
        .input
        .iter()
        .enumerate()
        .map(|(index, text)| {
            let mut rng = ChaCha8Rng::seed_from_u64(xxh3_64(text.as_bytes()));
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            EmbeddingData { index, embedding: v }
        })
        .collect();
    Json(EmbeddingResponse { data }).into_response()
}

async fn stats(State(s): State<AppState>) -> Json<MockStats> {
    Json(s.counters.lock().expect("mock counters poisoned").stats.clone())
}

/// A running mock server. Shuts down when dropped.
pub struct MockServer {
    addr: SocketAddr,
    shared: AppState,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl MockServer {
    /// Binds 127.0.0.1 on an ephemeral port. Must be called inside a tokio runtime.
    pub async fn start(config: MockConfig) -> Result<Self> {
        Self::bind("127.0.0.1:0".parse().expect("valid address"), config).await
    }

    pub async fn bind(addr: SocketAddr, config: MockConfig) -> Result<Self> {
        let shared = Arc::new(Shared {
            config,
            counters: Mutex::new(Counters::default()),
        });
        let app = Router::new()
            .route("/v1/chat/completions", post(chat))
            .route("/v1/score", post(score))
            .route("/v1/reward", post(reward))
            .route("/v1/embeddings", post(embeddings))
            .route("/v1/stats", get(stats))
            .with_state(shared.clone());
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(addr.to_string(), e))?;
        let addr = listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            shared,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn stats(&self) -> MockStats {
        self.shared.counters.lock().expect("mock counters poisoned").stats.clone()
    }

    pub fn reset_stats(&self) {
        let mut c = self.shared.counters.lock().expect("mock counters poisoned");
        c.stats = MockStats::default();
        c.attempts.clear();
    }

    /// Waits until the server task exits (after [`MockServer::shutdown`] or forever).
    pub async fn join(mut self) {
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }

    pub fn shutdown(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
