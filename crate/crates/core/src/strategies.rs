//! Prompt-to-teacher assignment strategies.
//!
//! Single-teacher baselines (Strong, Family-Strong, CAR) send every prompt to
//! one teacher; Mix assigns uniformly at random; the learned router and the
//! Oracle choose a teacher per prompt.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::registry::{Prompt, StudentModel, TeacherPool};
use crate::reward::{argmax, PromptScoreboard};
use crate::router::{self, RouterModel};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Strong,
    Mix,
    FamilyStrong,
    Car,
    Persyn,
    Oracle,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Strong,
        StrategyKind::Mix,
        StrategyKind::FamilyStrong,
        StrategyKind::Car,
        StrategyKind::Persyn,
        StrategyKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Strong => "strong",
            StrategyKind::Mix => "mix",
            StrategyKind::FamilyStrong => "family-strong",
            StrategyKind::Car => "car",
            StrategyKind::Persyn => "persyn",
            StrategyKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

/// A strategy with its parameters.
#[derive(Debug, Clone)]
pub enum StrategySpec<'a> {
    Strong { teacher_id: &'a str },
    Mix { seed: u64 },
    FamilyStrong { student: &'a StudentModel },
    Car { calibration: &'a [PromptScoreboard] },
    Persyn { router: &'a RouterModel },
    Oracle { boards: &'a [PromptScoreboard] },
}

impl StrategySpec<'_> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            StrategySpec::Strong { .. } => StrategyKind::Strong,
            StrategySpec::Mix { .. } => StrategyKind::Mix,
            StrategySpec::FamilyStrong { .. } => StrategyKind::FamilyStrong,
            StrategySpec::Car { .. } => StrategyKind::Car,
            StrategySpec::Persyn { .. } => StrategyKind::Persyn,
            StrategySpec::Oracle { .. } => StrategyKind::Oracle,
        }
    }
}

/// Prompt → teacher assignment with per-teacher prompt fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub strategy: String,
    pub pool_size: usize,
    pub assignments: BTreeMap<String, usize>,
    /// Fraction of prompts per teacher; teachers with no prompts are absent.
    pub ratios: BTreeMap<usize, f64>,
}

impl Allocation {
    pub fn from_assignments(
        strategy: impl Into<String>,
        pool_size: usize,
        assignments: BTreeMap<String, usize>,
    ) -> Result<Self> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &t in assignments.values() {
            if t >= pool_size {
                return Err(Error::IndexOutOfRange {
                    index: t,
                    len: pool_size,
                });
            }
            *counts.entry(t).or_default() += 1;
        }
        let total = assignments.len() as f64;
        let ratios = counts.into_iter().map(|(t, c)| (t, c as f64 / total)).collect();
        Ok(Self {
            strategy: strategy.into(),
            pool_size,
            assignments,
            ratios,
        })
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn teacher_for(&self, prompt_id: &str) -> Option<usize> {
        self.assignments.get(prompt_id).copied()
    }

    pub fn ratio(&self, teacher: usize) -> f64 {
        self.ratios.get(&teacher).copied().unwrap_or(0.0)
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.pool_size];
        for &t in self.assignments.values() {
            counts[t] += 1;
        }
        counts
    }

    /// Prompt ids assigned to each teacher, in prompt-id order.
    pub fn partition(&self) -> Vec<Vec<&str>> {
        let mut parts = vec![Vec::new(); self.pool_size];
        for (id, &t) in &self.assignments {
            parts[t].push(id.as_str());
        }
        parts
    }
}

fn single_teacher(strategy: StrategyKind, prompts: &[Prompt], pool_size: usize, teacher: usize) -> Result<Allocation> {
    let assignments = prompts.iter().map(|p| (p.id.clone(), teacher)).collect();
    Allocation::from_assignments(strategy.name(), pool_size, assignments)
}

pub fn assign_strong(prompts: &[Prompt], pool: &TeacherPool, teacher_id: &str) -> Result<Allocation> {
    let t = pool.require_index(teacher_id)?;
    single_teacher(StrategyKind::Strong, prompts, pool.len(), t)
}

/// I.i.d. uniform teacher per prompt, one seeded stream consumed in prompt order.
pub fn assign_mix(prompts: &[Prompt], pool: &TeacherPool, seed: u64) -> Result<Allocation> {
    let mut rng = seeding::substream(seed, "mix");
    let assignments = prompts
        .iter()
        .map(|p| (p.id.clone(), rng.gen_range(0..pool.len())))
        .collect();
    Allocation::from_assignments(StrategyKind::Mix.name(), pool.len(), assignments)
}

/// Largest teacher of the student's family; lower index wins size ties.
pub fn family_strong_teacher(pool: &TeacherPool, student: &StudentModel) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in pool.teachers().iter().enumerate() {
        if t.family == student.family && best.is_none_or(|b| t.size_b > pool.teachers()[b].size_b) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::NoFamilyMatch(student.family.clone()))
}

pub fn assign_family_strong(prompts: &[Prompt], pool: &TeacherPool, student: &StudentModel) -> Result<Allocation> {
    let t = family_strong_teacher(pool, student)?;
    single_teacher(StrategyKind::FamilyStrong, prompts, pool.len(), t)
}

/// Mean combined reward of every teacher over the calibration boards.
pub fn mean_combined(boards: &[PromptScoreboard]) -> Result<Vec<f64>> {
    let first = boards.first().ok_or(Error::EmptyCalibration)?;
    let n = first.pool_size();
    let mut sums = vec![0.0; n];
    for b in boards {
        if b.pool_size() != n {
            return Err(Error::InvalidPool(format!(
                "calibration board `{}` has {} teachers, expected {n}",
                b.prompt_id,
                b.pool_size()
            )));
        }
        for (s, r) in sums.iter_mut().zip(&b.responses) {
            *s += r.r_combined;
        }
    }
    Ok(sums.into_iter().map(|s| s / boards.len() as f64).collect())
}

/// Corpus-level teacher selection: the teacher with the highest mean
/// combined reward over the calibration boards takes every prompt.
pub fn car_teacher(calibration: &[PromptScoreboard]) -> Result<usize> {
    Ok(argmax(&mean_combined(calibration)?))
}

pub fn assign_car(prompts: &[Prompt], calibration: &[PromptScoreboard]) -> Result<Allocation> {
    let t = car_teacher(calibration)?;
    single_teacher(StrategyKind::Car, prompts, calibration[0].pool_size(), t)
}

pub fn assign_persyn(prompts: &[Prompt], router: &RouterModel, pool: &TeacherPool) -> Result<Allocation> {
    router.check_fingerprint(&pool.fingerprint())?;
    let assignments = prompts
        .iter()
        .map(|p| Ok((p.id.clone(), router::route(router, p)?)))
        .collect::<Result<_>>()?;
    Allocation::from_assignments(StrategyKind::Persyn.name(), pool.len(), assignments)
}

/// Router assignment from precomputed features (e.g. external embeddings).
pub fn assign_persyn_features(
    prompts: &[Prompt],
    router: &RouterModel,
    pool: &TeacherPool,
    features: &router::FeatureTable,
) -> Result<Allocation> {
    router.check_fingerprint(&pool.fingerprint())?;
    let assignments = prompts
        .iter()
        .map(|p| {
            let x = features.get(&p.id).ok_or_else(|| Error::UnknownPrompt(p.id.clone()))?;
            Ok((p.id.clone(), router::route_features(router, x)))
        })
        .collect::<Result<_>>()?;
    Allocation::from_assignments(StrategyKind::Persyn.name(), pool.len(), assignments)
}

pub fn assign_oracle(prompts: &[Prompt], boards: &[PromptScoreboard]) -> Result<Allocation> {
    let by_id: HashMap<&str, &PromptScoreboard> = boards.iter().map(|b| (b.prompt_id.as_str(), b)).collect();
    let pool_size = boards.first().map(|b| b.pool_size()).unwrap_or(0);
    let assignments = prompts
        .iter()
        .map(|p| {
            let b = by_id.get(p.id.as_str()).ok_or_else(|| Error::MissingBoard(p.id.clone()))?;
            Ok((p.id.clone(), b.best()))
        })
        .collect::<Result<_>>()?;
    Allocation::from_assignments(StrategyKind::Oracle.name(), pool_size, assignments)
}

pub fn assign(spec: &StrategySpec<'_>, prompts: &[Prompt], pool: &TeacherPool) -> Result<Allocation> {
    match spec {
        StrategySpec::Strong { teacher_id } => assign_strong(prompts, pool, teacher_id),
        StrategySpec::Mix { seed } => assign_mix(prompts, pool, *seed),
        StrategySpec::FamilyStrong { student } => assign_family_strong(prompts, pool, student),
        StrategySpec::Car { calibration } => assign_car(prompts, calibration),
        StrategySpec::Persyn { router } => assign_persyn(prompts, router, pool),
        StrategySpec::Oracle { boards } => assign_oracle(prompts, boards),
    }
}

#[derive(Serialize, Deserialize)]
struct AllocationRow {
    prompt_id: String,
    teacher_id: String,
}

#[derive(Serialize, Deserialize)]
struct AllocationSummary {
    strategy: String,
    pool_fingerprint: String,
    n_prompts: usize,
    ratios: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct SummaryRecord {
    summary: AllocationSummary,
}

/// Writes a summary record followed by one `(prompt_id, teacher_id)` line
/// per prompt, sorted by prompt id.
pub fn save_allocation(alloc: &Allocation, pool: &TeacherPool, path: &Path) -> Result<()> {
    let teacher_id = |t: usize| pool.require_teacher(t).map(|t| t.id.clone());
    let ratios = alloc
        .ratios
        .iter()
        .map(|(&t, &r)| Ok((teacher_id(t)?, r)))
        .collect::<Result<_>>()?;
    let mut rows = vec![io::to_value(&SummaryRecord {
        summary: AllocationSummary {
            strategy: alloc.strategy.clone(),
            pool_fingerprint: pool.fingerprint(),
            n_prompts: alloc.len(),
            ratios,
        },
    })];
    for (id, &t) in &alloc.assignments {
        rows.push(io::to_value(&AllocationRow {
            prompt_id: id.clone(),
            teacher_id: teacher_id(t)?,
        }));
    }
    io::write_jsonl(path, &rows)
}

pub fn load_allocation(path: &Path, pool: &TeacherPool) -> Result<Allocation> {
    let ctx = |line: usize| format!("{}:{line}", path.display());
    let mut strategy = String::from("unknown");
    let mut assignments = BTreeMap::new();
    for (line, v) in io::read_jsonl_values(path)? {
        if v.get("summary").is_some() {
            let s: SummaryRecord = serde_json::from_value(v).map_err(|e| Error::parse(ctx(line), e))?;
            if s.summary.pool_fingerprint != pool.fingerprint() {
                return Err(Error::FingerprintMismatch {
                    expected: pool.fingerprint(),
                    found: s.summary.pool_fingerprint,
                });
            }
            strategy = s.summary.strategy;
            continue;
        }
        let row: AllocationRow = serde_json::from_value(v).map_err(|e| Error::parse(ctx(line), e))?;
        let t = pool.require_index(&row.teacher_id)?;
        if assignments.insert(row.prompt_id.clone(), t).is_some() {
            return Err(Error::DuplicateId(row.prompt_id));
        }
    }
    Allocation::from_assignments(strategy, pool.len(), assignments)
}
