//! Learnability and quality rewards, their per-prompt combination, and the
//! ranking of teachers on each prompt.
//!
//! The combined reward of a response is
//! `(1 - alpha) * quality_norm + alpha * learnability_norm`, where both
//! channels are first normalized across the teachers that answered the same
//! prompt. Learnability is the student's mean per-token log-likelihood (in
//! nats) of the response tokens, conditioned on the prompt.

use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::registry::{Normalization, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    pub text: String,
    pub logprob: f64,
}

/// Per-token log-probabilities of `prompt ++ response`, with the index of the
/// first response token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub tokens: Vec<TokenLogProb>,
    pub prompt_boundary: usize,
}

impl TokenLogProbs {
    /// Builds a response-only sequence (boundary 0).
    pub fn response_only(logprobs: impl IntoIterator<Item = f64>) -> Self {
        Self {
            tokens: logprobs
                .into_iter()
                .map(|logprob| TokenLogProb {
                    text: String::new(),
                    logprob,
                })
                .collect(),
            prompt_boundary: 0,
        }
    }

    pub fn response_tokens(&self) -> &[TokenLogProb] {
        &self.tokens[self.prompt_boundary.min(self.tokens.len())..]
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_boundary > self.tokens.len() {
            return Err(Error::IndexOutOfRange {
                index: self.prompt_boundary,
                len: self.tokens.len(),
            });
        }
        for t in self.response_tokens() {
            if !t.logprob.is_finite() || t.logprob > 0.0 {
                return Err(Error::NonFinite(format!(
                    "token logprob {} must be finite and <= 0",
                    t.logprob
                )));
            }
        }
        if self.response_tokens().is_empty() {
            return Err(Error::EmptyResponse);
        }
        Ok(())
    }
}

/// Mean log-probability of the response tokens. Prompt tokens are excluded.
pub fn learnability_reward(lp: &TokenLogProbs) -> Result<f64> {
    lp.validate()?;
    let response = lp.response_tokens();
    let sum: f64 = response.iter().map(|t| t.logprob).sum();
    Ok(sum / response.len() as f64)
}

/// Normalizes one reward channel across the teachers of a single prompt.
///
/// ZScore uses the population standard deviation; a constant channel maps to
/// all zeros. MinMax maps a constant channel to all 0.5.
pub fn normalize(values: &[f64], method: Normalization) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // Equality check first: the mean of identical values need not round back
    // to that value, which would yield a tiny spurious spread.
    let constant = min == max;
    match method {
        Normalization::ZScore => {
            if constant {
                return vec![0.0; values.len()];
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std == 0.0 {
                return vec![0.0; values.len()];
            }
            values.iter().map(|v| (v - mean) / std).collect()
        }
        Normalization::MinMax => {
            if constant {
                return vec![0.5; values.len()];
            }
            let span = max - min;
            values.iter().map(|v| (v - min) / span).collect()
        }
    }
}

pub fn combined_reward(quality_norm: f64, learn_norm: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok((1.0 - alpha) * quality_norm + alpha * learn_norm)
}

/// A teacher's response with its raw rewards, before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub teacher_index: usize,
    pub text: String,
    pub r_learn: f64,
    pub r_quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub prompt_id: String,
    pub teacher_index: usize,
    pub text: String,
    pub r_learn: f64,
    pub r_quality: f64,
    pub r_learn_norm: f64,
    pub r_quality_norm: f64,
    pub r_combined: f64,
}

/// All teachers' scored responses for one prompt, plus their ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScoreboard {
    pub prompt_id: String,
    /// Indexed by teacher index.
    pub responses: Vec<ScoredResponse>,
    /// Teacher indices by descending combined reward; lower index wins ties.
    pub ranking: Vec<usize>,
}

impl PromptScoreboard {
    pub fn pool_size(&self) -> usize {
        self.responses.len()
    }

    pub fn best(&self) -> usize {
        self.ranking[0]
    }

    pub fn combined(&self, teacher_index: usize) -> f64 {
        self.responses[teacher_index].r_combined
    }

    /// Position of `teacher_index` in the ranking (0 = best).
    pub fn rank_of(&self, teacher_index: usize) -> Option<usize> {
        self.ranking.iter().position(|&t| t == teacher_index)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.responses.len();
        if n < 2 {
            return Err(Error::InvalidPool(format!(
                "scoreboard `{}` has {} responses",
                self.prompt_id, n
            )));
        }
        for (i, r) in self.responses.iter().enumerate() {
            if r.teacher_index != i {
                return Err(Error::MissingTeacher(i));
            }
        }
        let mut seen = vec![false; n];
        if self.ranking.len() != n {
            return Err(Error::parse(
                format!("scoreboard `{}`", self.prompt_id),
                "ranking is not a permutation of the pool",
            ));
        }
        for &t in &self.ranking {
            if t >= n || std::mem::replace(&mut seen[t], true) {
                return Err(Error::parse(
                    format!("scoreboard `{}`", self.prompt_id),
                    "ranking is not a permutation of the pool",
                ));
            }
        }
        Ok(())
    }
}

/// Sorts teacher indices by descending score, lower index first on ties.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Index of the maximal score, lower index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn build_scoreboard(
    prompt_id: &str,
    responses: Vec<RawResponse>,
    pool_size: usize,
    cfg: &RunConfig,
) -> Result<PromptScoreboard> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::AlphaOutOfRange(cfg.alpha));
    }
    let mut slots: Vec<Option<RawResponse>> = vec![None; pool_size];
    for r in responses {
        if r.teacher_index >= pool_size {
            return Err(Error::IndexOutOfRange {
                index: r.teacher_index,
                len: pool_size,
            });
        }
        if !r.r_learn.is_finite() || !r.r_quality.is_finite() {
            return Err(Error::NonFinite(format!(
                "raw rewards for prompt `{prompt_id}`, teacher {}",
                r.teacher_index
            )));
        }
        let idx = r.teacher_index;
        if slots[idx].replace(r).is_some() {
            return Err(Error::DuplicateTeacher(idx));
        }
    }
    let raw: Vec<RawResponse> = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or(Error::MissingTeacher(i)))
        .collect::<Result<_>>()?;

    let learn: Vec<f64> = raw.iter().map(|r| r.r_learn).collect();
    let quality: Vec<f64> = raw.iter().map(|r| r.r_quality).collect();
    let learn_norm = normalize(&learn, cfg.normalization);
    let quality_norm = normalize(&quality, cfg.normalization);

    let mut scored = Vec::with_capacity(pool_size);
    for (i, r) in raw.into_iter().enumerate() {
        let r_combined = combined_reward(quality_norm[i], learn_norm[i], cfg.alpha)?;
        scored.push(ScoredResponse {
            prompt_id: prompt_id.to_string(),
            teacher_index: i,
            text: r.text,
            r_learn: r.r_learn,
            r_quality: r.r_quality,
            r_learn_norm: learn_norm[i],
            r_quality_norm: quality_norm[i],
            r_combined,
        });
    }
    let combined: Vec<f64> = scored.iter().map(|s| s.r_combined).collect();
    Ok(PromptScoreboard {
        prompt_id: prompt_id.to_string(),
        responses: scored,
        ranking: rank_descending(&combined),
    })
}

pub fn save_boards(boards: &[PromptScoreboard], path: &Path) -> Result<()> {
    io::write_jsonl(path, boards)
}

pub fn load_boards(path: &Path) -> Result<Vec<PromptScoreboard>> {
    let boards: Vec<PromptScoreboard> = io::read_jsonl(path)?;
    for b in &boards {
        b.validate()?;
    }
    Ok(boards)
}

/// Decides whether a response's final answer matches a reference answer.
pub trait AnswerChecker: Send + Sync {
    fn check(&self, response_text: &str, reference_answer: &str) -> Result<bool>;
}

/// Binary quality in verifier mode: 1.0 if the checker accepts, else 0.0.
pub fn verifier_quality(
    response_text: &str,
    reference_answer: &str,
    checker: &dyn AnswerChecker,
) -> Result<f64> {
    Ok(if checker.check(response_text, reference_answer)? {
        1.0
    } else {
        0.0
    })
}

/// Exact match after answer extraction and light normalization.
///
/// The final answer is the content of the last `\boxed{...}` if present,
/// otherwise the text after the last "answer is" / "Answer:", otherwise the
/// last number in the response. Numeric answers compare by value.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchChecker;

impl AnswerChecker for ExactMatchChecker {
    fn check(&self, response_text: &str, reference_answer: &str) -> Result<bool> {
        let got = match extract_answer(response_text) {
            Some(a) => normalize_answer(&a),
            None => return Ok(false),
        };
        let want = normalize_answer(&last_boxed(reference_answer).unwrap_or_else(|| reference_answer.to_string()));
        if got.is_empty() {
            return Ok(false);
        }
        Ok(match (got.parse::<f64>(), want.parse::<f64>()) {
            (Ok(a), Ok(b)) => (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0),
            _ => got == want,
        })
    }
}

fn last_boxed(text: &str) -> Option<String> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..start + i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

fn last_number(text: &str) -> Option<String> {
    let mut best: Option<&str> = None;
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let signed = c == b'-' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit();
        if c.is_ascii_digit() || signed {
            let start = i;
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.' || bytes[i] == b',') {
                i += 1;
            }
            best = Some(text[start..i].trim_end_matches(['.', ',']));
        } else {
            i += 1;
        }
    }
    best.map(str::to_string)
}

pub fn extract_answer(text: &str) -> Option<String> {
    if let Some(b) = last_boxed(text) {
        return Some(b);
    }
    let lower = text.to_lowercase();
    for marker in ["answer is", "answer:"] {
        if let Some(pos) = lower.rfind(marker) {
            let tail = text[pos + marker.len()..].trim();
            let line = tail.lines().next().unwrap_or("").trim();
            if !line.is_empty() {
                return Some(line.to_string());
            }
        }
    }
    last_number(text)
}

fn normalize_answer(ans: &str) -> String {
    let mut s: String = ans.trim().trim_matches('$').chars().filter(|c| !c.is_whitespace()).collect();
    while s.ends_with('.') {
        s.pop();
    }
    for wrapper in ["\\text{", "\\mathrm{"] {
        if s.starts_with(wrapper) && s.ends_with('}') {
            s = s[wrapper.len()..s.len() - 1].to_string();
        }
    }
    let stripped = s.replace("\\!", "").replace("\\,", "");
    let numeric_with_commas = stripped.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.' || c == '-');
    if numeric_with_commas {
        stripped.replace(',', "")
    } else {
        stripped
    }
}

/// Delegates to an external program (e.g. a math-equivalence checker).
///
/// The program receives `{"response": ..., "reference": ...}` as JSON on
/// stdin and must print `1`/`true` to accept or `0`/`false` to reject.
#[derive(Debug, Clone)]
pub struct CommandChecker {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandChecker {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

impl AnswerChecker for CommandChecker {
    fn check(&self, response_text: &str, reference_answer: &str) -> Result<bool> {
        use std::io::Write;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::CheckerUnavailable(format!("{}: {e}", self.program)))?;
        let payload = serde_json::json!({ "response": response_text, "reference": reference_answer });
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            stdin
                .write_all(payload.to_string().as_bytes())
                .map_err(|e| Error::CheckerUnavailable(e.to_string()))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| Error::CheckerUnavailable(e.to_string()))?;
        if !out.status.success() {
            return Err(Error::CheckerUnavailable(format!(
                "{} exited with {}",
                self.program, out.status
            )));
        }
        match String::from_utf8_lossy(&out.stdout).trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(Error::CheckerUnavailable(format!("unrecognized checker output `{other}`"))),
        }
    }
}
