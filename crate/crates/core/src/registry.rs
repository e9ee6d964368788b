//! Model identities, teacher pools, prompt corpora and run configuration.
//!
//! A teacher's position in its [`TeacherPool`] is its routing index. Router
//! weight columns and pairwise encodings are addressed by that index, so the
//! order is fixed at construction and written back unchanged by
//! [`save_pool`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::orchestrator::EndpointBinding;

/// Teachers at or above this size (in billions of parameters) count as large.
pub const LARGE_TEACHER_SIZE_B: f64 = 72.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CotStyle {
    ShortCoT,
    LongCoT,
}

impl fmt::Display for CotStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CotStyle::ShortCoT => f.write_str("ShortCoT"),
            CotStyle::LongCoT => f.write_str("LongCoT"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherModel {
    pub id: String,
    pub family: String,
    pub size_b: f64,
    pub cot_style: CotStyle,
    #[serde(default)]
    pub endpoint: Option<EndpointBinding>,
}

impl TeacherModel {
    pub fn new(id: impl Into<String>, family: impl Into<String>, size_b: f64, cot_style: CotStyle) -> Self {
        Self {
            id: id.into(),
            family: family.into(),
            size_b,
            cot_style,
            endpoint: None,
        }
    }

    pub fn with_endpoint(mut self, endpoint: EndpointBinding) -> Self {
        self.endpoint = Some(endpoint);
        self
    }

    pub fn is_large(&self) -> bool {
        self.size_b >= LARGE_TEACHER_SIZE_B
    }
}

/// An ordered, immutable set of at least two teachers with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPool {
    teachers: Vec<TeacherModel>,
    by_id: HashMap<String, usize>,
}

impl TeacherPool {
    pub fn new(teachers: Vec<TeacherModel>) -> Result<Self> {
        if teachers.len() < 2 {
            return Err(Error::InvalidPool(format!(
                "a pool needs at least 2 teachers, got {}",
                teachers.len()
            )));
        }
        let mut by_id = HashMap::with_capacity(teachers.len());
        for (i, t) in teachers.iter().enumerate() {
            if t.id.is_empty() {
                return Err(Error::InvalidPool(format!("teacher at index {i} has an empty id")));
            }
            if !(t.size_b.is_finite() && t.size_b > 0.0) {
                return Err(Error::InvalidPool(format!(
                    "teacher `{}` has non-positive size_b {}",
                    t.id, t.size_b
                )));
            }
            if let Some(ep) = &t.endpoint {
                ep.validate()?;
            }
            if by_id.insert(t.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(t.id.clone()));
            }
        }
        Ok(Self { teachers, by_id })
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    pub fn teachers(&self) -> &[TeacherModel] {
        &self.teachers
    }

    pub fn teacher_at(&self, index: usize) -> Option<&TeacherModel> {
        self.teachers.get(index)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn require_index(&self, id: &str) -> Result<usize> {
        self.index_of(id).ok_or_else(|| Error::UnknownTeacher(id.to_string()))
    }

    pub fn require_teacher(&self, index: usize) -> Result<&TeacherModel> {
        self.teacher_at(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.len(),
        })
    }

    /// Hex digest over the ordered teacher ids. Anything index-addressed
    /// (pairs, router checkpoints) records this to detect a reordered pool.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.teachers.len() as u64).to_le_bytes());
        for t in &self.teachers {
            hasher.update((t.id.len() as u64).to_le_bytes());
            hasher.update(t.id.as_bytes());
        }
        hex::encode(&hasher.finalize()[..16])
    }
}

pub fn load_pool(path: &Path) -> Result<TeacherPool> {
    let teachers: Vec<TeacherModel> = io::read_json(path)?;
    TeacherPool::new(teachers)
}

pub fn save_pool(pool: &TeacherPool, path: &Path) -> Result<()> {
    io::write_json(path, pool.teachers())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub id: String,
    pub family: String,
    pub size_b: f64,
    #[serde(default)]
    pub logprob_endpoint: Option<EndpointBinding>,
}

impl StudentModel {
    pub fn new(id: impl Into<String>, family: impl Into<String>, size_b: f64) -> Result<Self> {
        let s = Self {
            id: id.into(),
            family: family.into(),
            size_b,
            logprob_endpoint: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size_b.is_finite() && self.size_b > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "student `{}` has non-positive size_b {}",
                self.id, self.size_b
            )));
        }
        if let Some(ep) = &self.logprob_endpoint {
            ep.validate()?;
        }
        Ok(())
    }
}

pub fn load_student(path: &Path) -> Result<StudentModel> {
    let s: StudentModel = io::read_json(path)?;
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    RouterTrain,
    RouterEval,
    Synthesis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    pub split: Split,
    /// Reference final answer, only present in verifiable (math) corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
}

impl Prompt {
    pub fn new(id: impl Into<String>, text: impl Into<String>, split: Split) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            split,
            reference_answer: None,
        }
    }

    pub fn with_reference(mut self, answer: impl Into<String>) -> Self {
        self.reference_answer = Some(answer.into());
        self
    }
}

/// Checks corpus invariants: non-empty text, unique ids.
pub fn validate_prompts(prompts: &[Prompt]) -> Result<()> {
    let mut seen = HashSet::with_capacity(prompts.len());
    for p in prompts {
        if p.id.is_empty() {
            return Err(Error::parse("prompt corpus", "prompt with empty id"));
        }
        if p.text.is_empty() {
            return Err(Error::parse("prompt corpus", format!("prompt `{}` has empty text", p.id)));
        }
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    Ok(())
}

pub fn load_prompts(path: &Path) -> Result<Vec<Prompt>> {
    let prompts: Vec<Prompt> = io::read_jsonl(path)?;
    for p in &prompts {
        if p.text.is_empty() {
            return Err(Error::parse(
                path.display().to_string(),
                format!("prompt `{}` has empty text", p.id),
            ));
        }
    }
    validate_prompts(&prompts)?;
    Ok(prompts)
}

pub fn save_prompts(prompts: &[Prompt], path: &Path) -> Result<()> {
    io::write_jsonl(path, prompts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Normalization {
    #[default]
    ZScore,
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SynthesisMode {
    /// One greedy response per prompt.
    #[default]
    Instruction,
    /// Rejection sampling against a verifier.
    Math,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub alpha: f64,
    pub seed: u64,
    pub normalization: Normalization,
    pub concurrency_limit: usize,
    /// Sampling temperature; `None` means the mode default (0.0 instruction, 0.6 math).
    pub temperature: Option<f64>,
    /// Generation budget; `None` means the mode default (4096 instruction, 16384 math).
    pub max_tokens: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            seed: 0,
            normalization: Normalization::ZScore,
            concurrency_limit: 8,
            temperature: None,
            max_tokens: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if self.concurrency_limit == 0 {
            return Err(Error::InvalidConfig("concurrency_limit must be >= 1".into()));
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidConfig(format!("temperature {t} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn temperature_for(&self, mode: SynthesisMode) -> f64 {
        self.temperature.unwrap_or(match mode {
            SynthesisMode::Instruction => 0.0,
            SynthesisMode::Math => 0.6,
        })
    }

    pub fn max_tokens_for(&self, mode: SynthesisMode) -> u32 {
        self.max_tokens.unwrap_or(match mode {
            SynthesisMode::Instruction => 4096,
            SynthesisMode::Math => 16384,
        })
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = io::read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}
