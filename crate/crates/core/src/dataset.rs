//! SFT dataset assembly and allocation analysis.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::orchestrator::Generation;
use crate::registry::{CotStyle, Prompt, TeacherModel, TeacherPool, LARGE_TEACHER_SIZE_B};
use crate::reward::PromptScoreboard;
use crate::strategies::Allocation;

pub const SFT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRewards {
    pub r_quality: f64,
    pub r_learn: f64,
    pub r_combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<SftRewards>,
    pub strategy: String,
    pub run_id: String,
    pub seed: u64,
}

/// One training example. Downstream trainers should compute the loss on
/// `response_text` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub schema_version: u32,
    pub prompt_id: String,
    pub prompt_text: String,
    pub response_text: String,
    pub teacher_id: String,
    pub metadata: SftMetadata,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub seed: u64,
}

/// Joins kept generations with their prompts. Records come out sorted by
/// prompt id, one per allocated prompt.
///
/// `boards`, when given, supplies the assigned teacher's rewards for
/// prompts that have a scoreboard.
pub fn assemble(
    generations: &[Generation],
    allocation: &Allocation,
    pool: &TeacherPool,
    prompts: &[Prompt],
    boards: Option<&[PromptScoreboard]>,
    provenance: &Provenance,
) -> Result<Vec<SftRecord>> {
    let texts: HashMap<&str, &Prompt> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut by_prompt: HashMap<&str, &Generation> = HashMap::with_capacity(generations.len());
    for g in generations {
        if allocation.teacher_for(&g.prompt_id).is_none() {
            return Err(Error::UnknownPrompt(g.prompt_id.clone()));
        }
        if by_prompt.insert(g.prompt_id.as_str(), g).is_some() {
            return Err(Error::DuplicateId(g.prompt_id.clone()));
        }
    }
    let boards: HashMap<&str, &PromptScoreboard> = boards
        .unwrap_or_default()
        .iter()
        .map(|b| (b.prompt_id.as_str(), b))
        .collect();

    let mut records = Vec::with_capacity(allocation.len());
    for (pid, &ti) in &allocation.assignments {
        let teacher = pool.require_teacher(ti)?;
        let g = by_prompt
            .get(pid.as_str())
            .ok_or_else(|| Error::MissingGeneration(pid.clone()))?;
        if g.teacher_id != teacher.id || g.teacher_index != ti {
            return Err(Error::TeacherMismatch {
                prompt_id: pid.clone(),
                expected: teacher.id.clone(),
                found: g.teacher_id.clone(),
            });
        }
        if g.text.is_empty() {
            return Err(Error::MissingGeneration(format!("{pid} (empty response)")));
        }
        let prompt = texts.get(pid.as_str()).ok_or_else(|| Error::UnknownPrompt(pid.clone()))?;
        let rewards = boards.get(pid.as_str()).and_then(|b| b.responses.get(ti)).map(|r| SftRewards {
            r_quality: r.r_quality,
            r_learn: r.r_learn,
            r_combined: r.r_combined,
        });
        records.push(SftRecord {
            schema_version: SFT_SCHEMA_VERSION,
            prompt_id: pid.clone(),
            prompt_text: prompt.text.clone(),
            response_text: g.text.clone(),
            teacher_id: teacher.id.clone(),
            metadata: SftMetadata {
                verified: g.verified,
                rewards,
                strategy: allocation.strategy.clone(),
                run_id: provenance.run_id.clone(),
                seed: provenance.seed,
            },
        });
    }
    Ok(records)
}

pub fn save_sft(records: &[SftRecord], path: &Path) -> Result<()> {
    io::write_jsonl(path, records)
}

pub fn load_sft(path: &Path) -> Result<Vec<SftRecord>> {
    io::read_jsonl(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherShare {
    pub teacher_id: String,
    pub family: String,
    pub size_b: f64,
    pub cot_style: CotStyle,
    pub count: usize,
    pub ratio: f64,
}

/// Allocation ratios grouped by teacher, family, CoT style, and size class.
/// Every group lists all pool members, so non-empty groups sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub strategy: String,
    pub n_prompts: usize,
    pub teachers: Vec<TeacherShare>,
    pub families: BTreeMap<String, f64>,
    pub cot_styles: BTreeMap<String, f64>,
    pub long_cot_fraction: f64,
    /// Fraction routed to teachers under the large-size threshold.
    pub small_teacher_fraction: f64,
    pub large_teacher_fraction: f64,
}

pub fn report(allocation: &Allocation, pool: &TeacherPool) -> Result<AllocationReport> {
    if allocation.pool_size != pool.len() {
        return Err(Error::InvalidConfig(format!(
            "allocation is over {} teachers, pool has {}",
            allocation.pool_size,
            pool.len()
        )));
    }
    let counts = allocation.counts();
    let total = allocation.len();
    let frac = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };

    let mut families: BTreeMap<String, usize> = BTreeMap::new();
    let mut styles: BTreeMap<String, usize> = BTreeMap::new();
    let mut large = 0;
    let mut teachers = Vec::with_capacity(pool.len());
    for (t, &c) in pool.teachers().iter().zip(&counts) {
        *families.entry(t.family.clone()).or_default() += c;
        *styles.entry(t.cot_style.to_string()).or_default() += c;
        if t.size_b >= LARGE_TEACHER_SIZE_B {
            large += c;
        }
        teachers.push(TeacherShare {
            teacher_id: t.id.clone(),
            family: t.family.clone(),
            size_b: t.size_b,
            cot_style: t.cot_style,
            count: c,
            ratio: frac(c),
        });
    }
    let long_cot: usize = pool
        .teachers()
        .iter()
        .zip(&counts)
        .filter(|(t, _)| t.cot_style == CotStyle::LongCoT)
        .map(|(_, &c)| c)
        .sum();
    Ok(AllocationReport {
        strategy: allocation.strategy.clone(),
        n_prompts: total,
        teachers,
        families: families.into_iter().map(|(k, c)| (k, frac(c))).collect(),
        cot_styles: styles.into_iter().map(|(k, c)| (k, frac(c))).collect(),
        long_cot_fraction: frac(long_cot),
        small_teacher_fraction: frac(total - large),
        large_teacher_fraction: frac(large),
    })
}

/// Fixed-width text rendering of a report.
pub fn report_table(r: &AllocationReport) -> String {
    let width = r.teachers.iter().map(|t| t.teacher_id.len()).max().unwrap_or(0).max(7);
    let fam_width = r.teachers.iter().map(|t| t.family.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "strategy: {}  prompts: {}", r.strategy, r.n_prompts);
    let _ = writeln!(
        out,
        "{:<width$}  {:<fam_width$}  {:>8}  {:<8}  {:>8}  {:>8}",
        "teacher", "family", "size_b", "cot", "count", "ratio"
    );
    for t in &r.teachers {
        let _ = writeln!(
            out,
            "{:<width$}  {:<fam_width$}  {:>8.1}  {:<8}  {:>8}  {:>8.4}",
            t.teacher_id, t.family, t.size_b, t.cot_style.to_string(), t.count, t.ratio
        );
    }
    let _ = writeln!(out);
    for (family, ratio) in &r.families {
        let _ = writeln!(out, "family {:<fam_width$}  {:>8.4}", family, ratio);
    }
    for (style, ratio) in &r.cot_styles {
        let _ = writeln!(out, "cot    {:<fam_width$}  {:>8.4}", style, ratio);
    }
    let _ = writeln!(out, "long_cot_fraction      {:.4}", r.long_cot_fraction);
    let _ = writeln!(out, "small_teacher_fraction {:.4}", r.small_teacher_fraction);
    let _ = writeln!(out, "large_teacher_fraction {:.4}", r.large_teacher_fraction);
    out
}

/// Which teachers' prompts a swap reassigns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TeacherFilter {
    LongCot,
    ShortCot,
    Family(String),
    Ids(Vec<String>),
    SizeAtLeast(f64),
    SizeBelow(f64),
}

impl TeacherFilter {
    pub fn matches(&self, t: &TeacherModel) -> bool {
        match self {
            TeacherFilter::LongCot => t.cot_style == CotStyle::LongCoT,
            TeacherFilter::ShortCot => t.cot_style == CotStyle::ShortCoT,
            TeacherFilter::Family(f) => &t.family == f,
            TeacherFilter::Ids(ids) => ids.iter().any(|id| id == &t.id),
            TeacherFilter::SizeAtLeast(s) => t.size_b >= *s,
            TeacherFilter::SizeBelow(s) => t.size_b < *s,
        }
    }
}

/// Moves every prompt assigned to a teacher matching `filter` onto
/// `to_teacher`. Other prompts keep their teacher.
pub fn swap_experiment(
    allocation: &Allocation,
    pool: &TeacherPool,
    filter: &TeacherFilter,
    to_teacher: &str,
) -> Result<Allocation> {
    let target = pool.require_index(to_teacher)?;
    let mut assignments = allocation.assignments.clone();
    for t in assignments.values_mut() {
        if filter.matches(pool.require_teacher(*t)?) {
            *t = target;
        }
    }
    Allocation::from_assignments(allocation.strategy.clone(), allocation.pool_size, assignments)
}
