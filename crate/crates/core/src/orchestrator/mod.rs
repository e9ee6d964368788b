//! Endpoint fan-out: parallel teacher responses, student log-probabilities,
//! quality scores, and routed generation with rejection sampling.
//!
//! All outputs are sorted by prompt id regardless of completion order.

pub mod client;
pub mod endpoint;
pub mod mock;
pub mod rejection;

use std::collections::HashMap;
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

pub use client::{Orchestrator, OrchestratorOptions, RetryPolicy};
pub use endpoint::{
    ChatChoice, ChatMessage, ChatRequest, ChatResponse, EmbeddingData, EmbeddingRequest, EmbeddingResponse,
    EndpointBinding, RewardItem, RewardRequest, RewardResponse, ScoreRequest, ScoreResponse, ScoredToken,
    CHAT_ROUTE, EMBEDDINGS_ROUTE, REWARD_ROUTE, SCORE_ROUTE,
};
pub use rejection::{KeepRule, RejectionPolicy};

use crate::error::{Error, Result};
use crate::io;
use crate::registry::{Prompt, RunConfig, StudentModel, SynthesisMode, TeacherPool};
use crate::reward::{
    build_scoreboard, learnability_reward, verifier_quality, AnswerChecker, PromptScoreboard, RawResponse,
    TokenLogProb, TokenLogProbs,
};
use crate::strategies::Allocation;

/// One (prompt, teacher) cell of a parallel gather. Exactly one of `text`
/// and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSlot {
    pub teacher_index: usize,
    pub teacher_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Every teacher's response to one prompt, in teacher-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelRecord {
    pub prompt_id: String,
    pub prompt_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    pub responses: Vec<ResponseSlot>,
}

impl ParallelRecord {
    pub fn gaps(&self) -> impl Iterator<Item = &ResponseSlot> {
        self.responses.iter().filter(|s| s.text.is_none())
    }

    pub fn is_complete(&self) -> bool {
        self.gaps().next().is_none()
    }
}

pub fn save_parallel(records: &[ParallelRecord], path: &Path) -> Result<()> {
    io::write_jsonl(path, records)
}

pub fn load_parallel(path: &Path) -> Result<Vec<ParallelRecord>> {
    io::read_jsonl(path)
}

/// Where quality rewards come from.
pub enum QualitySource<'a> {
    /// A `/reward` endpoint scoring (prompt, response) pairs.
    RewardModel(&'a EndpointBinding),
    /// Binary correctness against each prompt's reference answer.
    Verifier(&'a dyn AnswerChecker),
}

/// Prompts that could not be scored, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPrompt {
    pub prompt_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub boards: Vec<PromptScoreboard>,
    pub skipped: Vec<SkippedPrompt>,
}

/// The kept response for one routed prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub prompt_id: String,
    pub teacher_index: usize,
    pub teacher_id: String,
    pub text: String,
    /// Verifier verdict on the kept sample; absent in instruction mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
    pub n_samples: u32,
    pub kept_sample: usize,
    /// Per-sample verdicts, in sample-index order (math mode only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample_correct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub prompt_id: String,
    pub teacher_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub generations: Vec<Generation>,
    pub failures: Vec<GenerationFailure>,
}

pub fn save_generations(generations: &[Generation], path: &Path) -> Result<()> {
    io::write_jsonl(path, generations)
}

pub fn load_generations(path: &Path) -> Result<Vec<Generation>> {
    io::read_jsonl(path)
}

fn teacher_endpoint(pool: &TeacherPool, index: usize) -> Result<&EndpointBinding> {
    let t = pool.require_teacher(index)?;
    t.endpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidPool(format!("teacher `{}` has no endpoint", t.id)))
}

fn endpoint_error(ep: &EndpointBinding, prompt_id: &str, message: impl Into<String>) -> Error {
    Error::Endpoint {
        endpoint: ep.key(),
        prompt_id: prompt_id.to_string(),
        message: message.into(),
    }
}

impl Orchestrator {
    /// One chat call returning `n` completions ordered by choice index.
    async fn chat(
        &self,
        ep: &EndpointBinding,
        prompt_id: &str,
        prompt_text: &str,
        temperature: f64,
        max_tokens: u32,
        n: u32,
    ) -> Result<Vec<String>> {
        let req = ChatRequest {
            model: ep.model_name.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt_text.to_string(),
            }],
            temperature,
            max_tokens: ep.max_tokens.unwrap_or(max_tokens),
            n,
            seed: Some(crate::seeding::substream_seed(self.opts.seed, prompt_id)),
        };
        let resp: ChatResponse = self.post_json(ep, CHAT_ROUTE, &req, prompt_id).await?;
        let mut slots: Vec<Option<String>> = vec![None; n as usize];
        for choice in resp.choices {
            let i = choice.index as usize;
            match slots.get_mut(i) {
                Some(slot @ None) => *slot = Some(choice.message.content),
                Some(Some(_)) => {
                    return Err(endpoint_error(ep, prompt_id, format!("duplicate choice index {i}")));
                }
                None => {
                    return Err(endpoint_error(ep, prompt_id, format!("choice index {i} >= n = {n}")));
                }
            }
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| endpoint_error(ep, prompt_id, format!("missing choice {i}"))))
            .collect()
    }

    /// Asks every teacher to answer every prompt. Failures become explicit
    /// gaps in the affected slots.
    pub async fn gather_parallel(
        &self,
        prompts: &[Prompt],
        pool: &TeacherPool,
        cfg: &RunConfig,
    ) -> Result<Vec<ParallelRecord>> {
        if prompts.is_empty() {
            return Err(Error::InvalidConfig("no prompts to gather".into()));
        }
        let endpoints: Vec<&EndpointBinding> =
            (0..pool.len()).map(|i| teacher_endpoint(pool, i)).collect::<Result<_>>()?;
        let temperature = cfg.temperature_for(SynthesisMode::Instruction);
        let max_tokens = cfg.max_tokens_for(SynthesisMode::Instruction);

        let jobs = prompts
            .iter()
            .enumerate()
            .flat_map(|(pi, _)| (0..pool.len()).map(move |ti| (pi, ti)));
        let results: Vec<(usize, usize, Result<String>)> = stream::iter(jobs)
            .map(|(pi, ti)| {
                let p = &prompts[pi];
                let ep = endpoints[ti];
                async move {
                    let out = self
                        .chat(ep, &p.id, &p.text, temperature, max_tokens, 1)
                        .await
                        .map(|mut v| v.remove(0));
                    (pi, ti, out)
                }
            })
            .buffer_unordered(self.opts.global_limit)
            .collect()
            .await;

        let mut records: Vec<ParallelRecord> = prompts
            .iter()
            .map(|p| ParallelRecord {
                prompt_id: p.id.clone(),
                prompt_text: p.text.clone(),
                reference_answer: p.reference_answer.clone(),
                responses: pool
                    .teachers()
                    .iter()
                    .enumerate()
                    .map(|(i, t)| ResponseSlot {
                        teacher_index: i,
                        teacher_id: t.id.clone(),
                        text: None,
                        error: None,
                    })
                    .collect(),
            })
            .collect();
        for (pi, ti, out) in results {
            let slot = &mut records[pi].responses[ti];
            match out {
                Ok(text) => slot.text = Some(text),
                Err(e) => slot.error = Some(e.to_string()),
            }
        }
        records.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
        Ok(records)
    }

    /// Per-token log-probabilities of `response_text` under the student,
    /// conditioned on `prompt_text`.
    ///
    /// Prompt tokens the server reports without a log-probability are stored
    /// as 0.0; they never enter the learnability reward.
    pub async fn student_logprobs(
        &self,
        student: &StudentModel,
        prompt_id: &str,
        prompt_text: &str,
        response_text: &str,
    ) -> Result<TokenLogProbs> {
        if response_text.is_empty() {
            return Err(Error::EmptyResponse);
        }
        let ep = student
            .logprob_endpoint
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("student `{}` has no logprob endpoint", student.id)))?;
        let req = ScoreRequest {
            model: ep.model_name.clone(),
            prompt: prompt_text.to_string(),
            continuation: response_text.to_string(),
        };
        let resp: ScoreResponse = self.post_json(ep, SCORE_ROUTE, &req, prompt_id).await?;
        if resp.prompt_tokens > resp.tokens.len() {
            return Err(Error::TokenizationMismatch(format!(
                "prompt_tokens {} exceeds token count {}",
                resp.prompt_tokens,
                resp.tokens.len()
            )));
        }
        let rebuilt: String = resp.tokens[resp.prompt_tokens..].iter().map(|t| t.text.as_str()).collect();
        if rebuilt != response_text {
            return Err(Error::TokenizationMismatch(format!(
                "prompt `{prompt_id}`: response tokens do not reconstruct the response text"
            )));
        }
        let mut tokens = Vec::with_capacity(resp.tokens.len());
        for (i, t) in resp.tokens.into_iter().enumerate() {
            let logprob = match t.logprob {
                Some(lp) => lp,
                None if i < resp.prompt_tokens => 0.0,
                None => {
                    return Err(Error::TokenizationMismatch(format!(
                        "prompt `{prompt_id}`: response token {i} has no logprob"
                    )))
                }
            };
            tokens.push(TokenLogProb { text: t.text, logprob });
        }
        let lp = TokenLogProbs {
            tokens,
            prompt_boundary: resp.prompt_tokens,
        };
        lp.validate()?;
        Ok(lp)
    }

    /// Scores `items` on a reward endpoint in fixed-size batches. The result
    /// has one entry per item, in input order.
    pub async fn quality_scores(&self, ep: &EndpointBinding, items: &[RewardItem]) -> Vec<Result<f64>> {
        let batch = self.opts.reward_batch_size;
        let batches: Vec<(usize, Result<Vec<f64>>)> = stream::iter(items.chunks(batch).enumerate())
            .map(|(bi, chunk)| async move {
                let label = format!("reward-batch-{bi}");
                let req = RewardRequest {
                    model: ep.model_name.clone(),
                    items: chunk.to_vec(),
                };
                let out = match self.post_json::<_, RewardResponse>(ep, REWARD_ROUTE, &req, &label).await {
                    Ok(r) if r.scores.len() == chunk.len() => Ok(r.scores),
                    Ok(r) => Err(format!("expected {} scores, got {}", chunk.len(), r.scores.len())),
                    Err(e) => Err(e.to_string()),
                };
                (bi, out.map_err(|m| endpoint_error(ep, &label, m)))
            })
            .buffer_unordered(self.opts.per_endpoint_limit)
            .collect()
            .await;

        let mut by_batch: HashMap<usize, Result<Vec<f64>>> = batches.into_iter().collect();
        let mut out = Vec::with_capacity(items.len());
        for (bi, chunk) in items.chunks(batch).enumerate() {
            match by_batch.remove(&bi).expect("every batch ran") {
                Ok(scores) => {
                    for s in scores {
                        out.push(if s.is_finite() {
                            Ok(s)
                        } else {
                            Err(Error::NonFinite(format!("reward score {s}")))
                        });
                    }
                }
                Err(e) => {
                    let msg = e.to_string();
                    for _ in chunk {
                        out.push(Err(endpoint_error(ep, &format!("reward-batch-{bi}"), msg.clone())));
                    }
                }
            }
        }
        out
    }

    /// Embeds `texts`; output rows follow input order.
    pub async fn embed(&self, ep: &EndpointBinding, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let req = EmbeddingRequest {
            model: ep.model_name.clone(),
            input: texts.to_vec(),
        };
        let resp: EmbeddingResponse = self.post_json(ep, EMBEDDINGS_ROUTE, &req, "embeddings").await?;
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for d in resp.data {
            if let Some(slot) = rows.get_mut(d.index) {
                *slot = Some(d.embedding);
            }
        }
        rows.into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| endpoint_error(ep, "embeddings", format!("missing embedding {i}"))))
            .collect()
    }

    /// Turns gathered responses into scoreboards. Prompts with any gap or
    /// scoring failure are skipped and reported, never partially scored.
    pub async fn score_records(
        &self,
        records: &[ParallelRecord],
        student: &StudentModel,
        quality: QualitySource<'_>,
        cfg: &RunConfig,
    ) -> Result<ScoreOutcome> {
        let mut skipped = Vec::new();
        let mut complete = Vec::new();
        for r in records {
            match r.gaps().next() {
                Some(gap) => skipped.push(SkippedPrompt {
                    prompt_id: r.prompt_id.clone(),
                    reason: format!("no response from teacher `{}`", gap.teacher_id),
                }),
                None => complete.push(r),
            }
        }

        let cells: Vec<(usize, usize)> = complete
            .iter()
            .enumerate()
            .flat_map(|(ri, r)| (0..r.responses.len()).map(move |ti| (ri, ti)))
            .collect();
        let complete = &complete;
        let text_of = move |ri: usize, ti: usize| complete[ri].responses[ti].text.as_deref().unwrap_or_default();

        let learn: HashMap<(usize, usize), Result<f64>> = stream::iter(cells.iter().copied())
            .map(|(ri, ti)| async move {
                let r = complete[ri];
                let lp = self
                    .student_logprobs(student, &r.prompt_id, &r.prompt_text, text_of(ri, ti))
                    .await
                    .and_then(|lp| learnability_reward(&lp));
                ((ri, ti), lp)
            })
            .buffer_unordered(self.opts.global_limit)
            .collect()
            .await;

        let quality: Vec<Result<f64>> = match quality {
            QualitySource::RewardModel(ep) => {
                let items: Vec<RewardItem> = cells
                    .iter()
                    .map(|&(ri, ti)| RewardItem {
                        prompt: complete[ri].prompt_text.clone(),
                        response: text_of(ri, ti).to_string(),
                    })
                    .collect();
                self.quality_scores(ep, &items).await
            }
            QualitySource::Verifier(checker) => cells
                .iter()
                .map(|&(ri, ti)| match &complete[ri].reference_answer {
                    Some(reference) => verifier_quality(text_of(ri, ti), reference, checker),
                    None => Err(Error::InvalidConfig(format!(
                        "prompt `{}` has no reference answer",
                        complete[ri].prompt_id
                    ))),
                })
                .collect(),
        };

        let mut learn = learn;
        let mut quality = quality.into_iter();
        let mut boards = Vec::with_capacity(complete.len());
        let mut cell = 0;
        for (ri, r) in complete.iter().enumerate() {
            let mut raw = Vec::with_capacity(r.responses.len());
            let mut failure = None;
            for ti in 0..r.responses.len() {
                debug_assert_eq!(cells[cell], (ri, ti));
                cell += 1;
                let q = quality.next().expect("one quality score per cell");
                let l = learn.remove(&(ri, ti)).expect("one logprob per cell");
                match (l, q) {
                    (Ok(r_learn), Ok(r_quality)) => raw.push(RawResponse {
                        teacher_index: ti,
                        text: text_of(ri, ti).to_string(),
                        r_learn,
                        r_quality,
                    }),
                    (Err(e), _) | (_, Err(e)) => {
                        if failure.is_none() {
                            failure = Some(format!("teacher `{}`: {e}", r.responses[ti].teacher_id));
                        }
                    }
                }
            }
            match failure {
                Some(reason) => skipped.push(SkippedPrompt {
                    prompt_id: r.prompt_id.clone(),
                    reason,
                }),
                None => boards.push(build_scoreboard(&r.prompt_id, raw, r.responses.len(), cfg)?),
            }
        }
        boards.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
        skipped.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
        Ok(ScoreOutcome { boards, skipped })
    }

    /// Generates responses for routed prompts only, each from its assigned
    /// teacher.
    ///
    /// Without a rejection policy every prompt gets one response at the
    /// instruction-mode temperature. With a policy, each teacher draws the
    /// policy's sample count in a single request at the math temperature,
    /// and the keep rule picks one sample using `verifier`.
    pub async fn generate_routed(
        &self,
        allocation: &Allocation,
        pool: &TeacherPool,
        prompts: &[Prompt],
        policy: Option<&RejectionPolicy>,
        verifier: Option<&dyn AnswerChecker>,
        cfg: &RunConfig,
    ) -> Result<GenerationOutcome> {
        if policy.is_some() && verifier.is_none() {
            return Err(Error::VerifierUnavailable);
        }
        if let Some(p) = policy {
            if p.samples_small == 0 || p.samples_large == 0 {
                return Err(Error::InvalidConfig("rejection sample counts must be >= 1".into()));
            }
        }
        if allocation.pool_size != pool.len() {
            return Err(Error::InvalidConfig(format!(
                "allocation is over {} teachers, pool has {}",
                allocation.pool_size,
                pool.len()
            )));
        }
        let by_id: HashMap<&str, &Prompt> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
        let mut jobs = Vec::with_capacity(allocation.len());
        for (pid, &ti) in &allocation.assignments {
            let prompt = *by_id.get(pid.as_str()).ok_or_else(|| Error::UnknownPrompt(pid.clone()))?;
            let ep = teacher_endpoint(pool, ti)?;
            jobs.push((prompt, ti, ep));
        }
        let mode = if policy.is_some() {
            SynthesisMode::Math
        } else {
            SynthesisMode::Instruction
        };
        let temperature = cfg.temperature_for(mode);
        let max_tokens = cfg.max_tokens_for(mode);

        let results: Vec<(&Prompt, usize, u32, Result<Vec<String>>)> = stream::iter(jobs)
            .map(|(prompt, ti, ep)| {
                let n = policy.map_or(1, |p| p.samples_for(&pool.teachers()[ti]));
                async move {
                    let out = self.chat(ep, &prompt.id, &prompt.text, temperature, max_tokens, n).await;
                    (prompt, ti, n, out)
                }
            })
            .buffer_unordered(self.opts.global_limit)
            .collect()
            .await;

        let mut outcome = GenerationOutcome::default();
        for (prompt, ti, n, out) in results {
            let fail = |error: String| GenerationFailure {
                prompt_id: prompt.id.clone(),
                teacher_index: ti,
                error,
            };
            let samples = match out {
                Ok(s) => s,
                Err(e) => {
                    outcome.failures.push(fail(e.to_string()));
                    continue;
                }
            };
            let teacher_id = pool.teachers()[ti].id.clone();
            match (policy, verifier) {
                (Some(policy), Some(checker)) => {
                    let Some(reference) = prompt.reference_answer.as_deref() else {
                        outcome.failures.push(fail("prompt has no reference answer".into()));
                        continue;
                    };
                    let verdicts: Result<Vec<bool>> = samples.iter().map(|s| checker.check(s, reference)).collect();
                    let verdicts = match verdicts {
                        Ok(v) => v,
                        Err(e) => {
                            outcome.failures.push(fail(e.to_string()));
                            continue;
                        }
                    };
                    let (kept, ok) = policy.keep(&verdicts, self.opts.seed, &prompt.id);
                    outcome.generations.push(Generation {
                        prompt_id: prompt.id.clone(),
                        teacher_index: ti,
                        teacher_id,
                        text: samples[kept].clone(),
                        verified: Some(ok),
                        n_samples: n,
                        kept_sample: kept,
                        sample_correct: verdicts,
                    });
                }
                _ => outcome.generations.push(Generation {
                    prompt_id: prompt.id.clone(),
                    teacher_index: ti,
                    teacher_id,
                    text: samples.into_iter().next().unwrap_or_default(),
                    verified: None,
                    n_samples: n,
                    kept_sample: 0,
                    sample_correct: Vec::new(),
                }),
            }
        }
        outcome.generations.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
        outcome.failures.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
        Ok(outcome)
    }
}
