//! Pairwise preference data derived from per-prompt teacher rankings.
//!
//! Each pair `(A, B, label)` states whether teacher B (label 1) or teacher A
//! (label 0) is preferred on the prompt. Every unordered teacher pair of a
//! ranking is emitted exactly once.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::reward::PromptScoreboard;
use crate::seeding;

pub const PAIR_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub a_index: usize,
    pub b_index: usize,
    /// 1 when B is preferred over A.
    pub label: u8,
}

impl PreferencePair {
    pub fn preferred(&self) -> usize {
        if self.label == 1 {
            self.b_index
        } else {
            self.a_index
        }
    }

    pub fn other(&self) -> usize {
        if self.label == 1 {
            self.a_index
        } else {
            self.b_index
        }
    }

    /// Same comparison with A and B swapped.
    pub fn flipped(&self) -> Self {
        Self {
            prompt_id: self.prompt_id.clone(),
            a_index: self.b_index,
            b_index: self.a_index,
            label: 1 - self.label,
        }
    }

    pub fn validate(&self, pool_size: usize) -> Result<()> {
        for index in [self.a_index, self.b_index] {
            if index >= pool_size {
                return Err(Error::IndexOutOfRange { index, len: pool_size });
            }
        }
        if self.a_index == self.b_index {
            return Err(Error::parse(
                format!("pair for `{}`", self.prompt_id),
                "a_index equals b_index",
            ));
        }
        if self.label > 1 {
            return Err(Error::parse(format!("pair for `{}`", self.prompt_id), "label must be 0 or 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub pool_fingerprint: String,
    pub pool_size: usize,
    pub pairs: Vec<PreferencePair>,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Distinct prompt ids in order of first appearance.
    pub fn prompt_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.pairs
            .iter()
            .filter(|p| seen.insert(p.prompt_id.as_str()))
            .map(|p| p.prompt_id.as_str())
            .collect()
    }
}

/// Number of unordered pairs in a pool of `n` teachers.
pub fn pairs_per_prompt(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Emits all unordered teacher pairs of a ranking.
///
/// Unsymmetrized, every pair has A = lower-ranked, B = higher-ranked,
/// label 1. Symmetrized, a fair coin seeded by `(seed, prompt_id)` picks the
/// orientation and the label follows it.
pub fn pairs_from_ranking(board: &PromptScoreboard, symmetrize: bool, seed: u64) -> Vec<PreferencePair> {
    let n = board.ranking.len();
    let mut rng = seeding::substream(seed, &board.prompt_id);
    let mut out = Vec::with_capacity(pairs_per_prompt(n));
    for hi in 0..n {
        for lo in hi + 1..n {
            let pair = PreferencePair {
                prompt_id: board.prompt_id.clone(),
                a_index: board.ranking[lo],
                b_index: board.ranking[hi],
                label: 1,
            };
            if symmetrize && rng.gen::<bool>() {
                out.push(pair.flipped());
            } else {
                out.push(pair);
            }
        }
    }
    out
}

pub fn build_pair_dataset(
    boards: &[PromptScoreboard],
    pool_fingerprint: &str,
    symmetrize: bool,
    seed: u64,
) -> Result<PairDataset> {
    let pool_size = boards.first().map(|b| b.pool_size()).unwrap_or(0);
    let mut pairs = Vec::with_capacity(boards.len() * pairs_per_prompt(pool_size));
    for b in boards {
        if b.pool_size() != pool_size {
            return Err(Error::InvalidPool(format!(
                "scoreboard `{}` has {} teachers, expected {pool_size}",
                b.prompt_id,
                b.pool_size()
            )));
        }
        pairs.extend(pairs_from_ranking(b, symmetrize, seed));
    }
    Ok(PairDataset {
        pool_fingerprint: pool_fingerprint.to_string(),
        pool_size,
        pairs,
    })
}

/// `+1` at B's index, `-1` at A's index, zeros elsewhere.
pub fn two_hot(pair: &PreferencePair, pool_size: usize) -> Result<Vec<f64>> {
    for index in [pair.a_index, pair.b_index] {
        if index >= pool_size {
            return Err(Error::IndexOutOfRange { index, len: pool_size });
        }
    }
    let mut z = vec![0.0; pool_size];
    z[pair.b_index] = 1.0;
    z[pair.a_index] = -1.0;
    Ok(z)
}

/// Splits by prompt: all pairs of a prompt land on the same side.
pub fn split_pairs(ds: &PairDataset, eval_fraction: f64, seed: u64) -> Result<(PairDataset, PairDataset)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "eval_fraction {eval_fraction} must be in (0, 1)"
        )));
    }
    let mut ids: Vec<&str> = ds.prompt_ids();
    let n = ids.len();
    let n_eval = (n as f64 * eval_fraction).round() as usize;
    if n_eval == 0 || n_eval >= n {
        return Err(Error::TooFewPrompts(format!(
            "{n} prompts with eval_fraction {eval_fraction} leaves one side empty"
        )));
    }
    ids.shuffle(&mut seeding::stream(seed));
    let eval_ids: HashSet<&str> = ids[..n_eval].iter().copied().collect();
    let (eval, train): (Vec<_>, Vec<_>) = ds
        .pairs
        .iter()
        .cloned()
        .partition(|p| eval_ids.contains(p.prompt_id.as_str()));
    let side = |pairs| PairDataset {
        pool_fingerprint: ds.pool_fingerprint.clone(),
        pool_size: ds.pool_size,
        pairs,
    };
    Ok((side(train), side(eval)))
}

#[derive(Serialize, Deserialize)]
struct PairHeader {
    schema_version: u32,
    pool_fingerprint: String,
    pool_size: usize,
}

pub fn save_pairs(ds: &PairDataset, path: &Path) -> Result<()> {
    let header = io::to_value(&PairHeader {
        schema_version: PAIR_SCHEMA_VERSION,
        pool_fingerprint: ds.pool_fingerprint.clone(),
        pool_size: ds.pool_size,
    });
    let rows: Vec<serde_json::Value> = std::iter::once(header)
        .chain(ds.pairs.iter().map(io::to_value))
        .collect();
    io::write_jsonl(path, &rows)
}

pub fn load_pairs(path: &Path) -> Result<PairDataset> {
    let mut rows = io::read_jsonl_values(path)?.into_iter();
    let (_, header) = rows
        .next()
        .ok_or_else(|| Error::parse(path.display().to_string(), "missing header record"))?;
    let header: PairHeader =
        serde_json::from_value(header).map_err(|e| Error::parse(format!("{}: header", path.display()), e))?;
    let mut pairs = Vec::new();
    for (line, v) in rows {
        let p: PreferencePair =
            serde_json::from_value(v).map_err(|e| Error::parse(format!("{}:{line}", path.display()), e))?;
        p.validate(header.pool_size)?;
        pairs.push(p);
    }
    Ok(PairDataset {
        pool_fingerprint: header.pool_fingerprint,
        pool_size: header.pool_size,
        pairs,
    })
}
