//! Query-level router: prompt text → one score per teacher.
//!
//! Features are signed, hashed character n-gram counts (L2-normalized), or
//! externally supplied embeddings. A linear head maps features to raw scores
//! `o = Wᵀx + b`. Training fits a Bradley–Terry model on preference pairs:
//! `P(B ≻ A) = σ(o_B − o_A)`, minimizing mean binary cross-entropy with
//! momentum mini-batch gradient descent. Routing takes the argmax of `o`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::io;
use crate::pairs::{PairDataset, PreferencePair};
use crate::registry::Prompt;
use crate::reward::{argmax, PromptScoreboard};
use crate::seeding;

pub const CHECKPOINT_FORMAT: &str = "teachroute-router/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizerConfig {
    pub dim: usize,
    /// Inclusive character n-gram lengths.
    pub ngram_range: (usize, usize),
    pub hash_seed: u64,
    pub signed: bool,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            dim: 1024,
            ngram_range: (3, 5),
            hash_seed: 0,
            signed: true,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ngram_range;
        if self.dim < 16 {
            return Err(Error::InvalidConfig(format!("featurizer dim {} < 16", self.dim)));
        }
        if lo < 1 || lo > hi {
            return Err(Error::InvalidConfig(format!("bad ngram_range ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Bucket and sign of one n-gram.
    pub fn slot(&self, gram: &str) -> (usize, f64) {
        let h = xxh3_64_with_seed(gram.as_bytes(), self.hash_seed);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if self.signed && (h >> 63) == 1 { -1.0 } else { 1.0 };
        (bucket, sign)
    }
}

/// Where a router's input features come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeaturizerSpec {
    HashedNgrams(FeaturizerConfig),
    /// Dense vectors from an embeddings endpoint serving `model_name`.
    Embedding { model_name: String, dim: usize },
}

impl FeaturizerSpec {
    pub fn dim(&self) -> usize {
        match self {
            FeaturizerSpec::HashedNgrams(c) => c.dim,
            FeaturizerSpec::Embedding { dim, .. } => *dim,
        }
    }
}

impl Default for FeaturizerSpec {
    fn default() -> Self {
        FeaturizerSpec::HashedNgrams(FeaturizerConfig::default())
    }
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut v = SparseVector::default();
        for (i, &x) in dense.iter().enumerate() {
            if x != 0.0 {
                v.indices.push(i as u32);
                v.values.push(x);
            }
        }
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().map(|&i| i as usize)
    }
}

/// Character n-grams of `text` for lengths in `range`. Text shorter than the
/// minimum length contributes itself as a single gram.
pub fn char_ngrams(text: &str, range: (usize, usize)) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut grams = Vec::new();
    for n in range.0..=range.1 {
        if n > chars.len() {
            break;
        }
        grams.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
    }
    if grams.is_empty() && !chars.is_empty() {
        grams.push(text.to_string());
    }
    grams
}

pub fn featurize(text: &str, cfg: &FeaturizerConfig) -> Result<SparseVector> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut dense = vec![0.0; cfg.dim];
    for gram in char_ngrams(text, cfg.ngram_range) {
        let (bucket, sign) = cfg.slot(&gram);
        dense[bucket] += sign;
    }
    let norm = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        dense.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(SparseVector::from_dense(&dense))
}

/// Precomputed features keyed by prompt id.
pub type FeatureTable = HashMap<String, SparseVector>;

pub fn featurize_all<'a, I>(texts: I, cfg: &FeaturizerConfig) -> Result<FeatureTable>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    texts
        .into_iter()
        .map(|(id, text)| Ok((id.to_string(), featurize(text, cfg)?)))
        .collect()
}

pub fn prompt_texts(prompts: &[Prompt]) -> HashMap<String, String> {
    prompts.iter().map(|p| (p.id.clone(), p.text.clone())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty on weights (not bias).
    pub l2: f64,
    pub seed: u64,
    /// Hit@k cutoffs reported after training; the pool size is always added.
    pub report_k: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.1,
            momentum: 0.9,
            l2: 0.0,
            seed: 0,
            report_k: vec![1, 3],
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum {} must be in [0, 1)", self.momentum)));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidConfig(format!("l2 {} must be >= 0", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    pub n_train_pairs: usize,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterModel {
    pub featurizer: FeaturizerSpec,
    pub pool_size: usize,
    /// Row-major `[dim × pool_size]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub pool_fingerprint: String,
    #[serde(default)]
    pub metadata: TrainMetadata,
}

impl RouterModel {
    pub fn zeros(featurizer: FeaturizerSpec, pool_size: usize, pool_fingerprint: impl Into<String>) -> Self {
        let dim = featurizer.dim();
        Self {
            featurizer,
            pool_size,
            weights: vec![0.0; dim * pool_size],
            bias: vec![0.0; pool_size],
            pool_fingerprint: pool_fingerprint.into(),
            metadata: TrainMetadata::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.featurizer.dim()
    }

    pub fn weight(&self, feature: usize, teacher: usize) -> f64 {
        self.weights[feature * self.pool_size + teacher]
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_size < 2 {
            return Err(Error::InvalidPool(format!("router pool_size {}", self.pool_size)));
        }
        if let FeaturizerSpec::HashedNgrams(c) = &self.featurizer {
            c.validate()?;
        }
        if self.weights.len() != self.dim() * self.pool_size || self.bias.len() != self.pool_size {
            return Err(Error::parse("router checkpoint", "weight or bias shape does not match dim × pool_size"));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("router parameters".into()));
        }
        Ok(())
    }

    pub fn check_fingerprint(&self, expected: &str) -> Result<()> {
        if self.pool_fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: self.pool_fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn features(&self, text: &str) -> Result<SparseVector> {
        match &self.featurizer {
            FeaturizerSpec::HashedNgrams(cfg) => featurize(text, cfg),
            FeaturizerSpec::Embedding { model_name, .. } => {
                if text.is_empty() {
                    return Err(Error::EmptyText);
                }
                Err(Error::ExternalFeaturesRequired(model_name.clone()))
            }
        }
    }

    /// `o = Wᵀx + b`.
    pub fn score_features(&self, x: &SparseVector) -> Vec<f64> {
        let mut o = self.bias.clone();
        for (i, v) in x.iter() {
            let row = &self.weights[i * self.pool_size..(i + 1) * self.pool_size];
            for (o, w) in o.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        o
    }

    fn pair_logit(&self, x: &SparseVector, a: usize, b: usize) -> f64 {
        let mut logit = self.bias[b] - self.bias[a];
        for (i, v) in x.iter() {
            let row = i * self.pool_size;
            logit += v * (self.weights[row + b] - self.weights[row + a]);
        }
        logit
    }
}

pub fn score(router: &RouterModel, text: &str) -> Result<Vec<f64>> {
    Ok(router.score_features(&router.features(text)?))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of `σ(logit)` against `label`, computed from the logit.
pub fn bce_with_logit(logit: f64, label: u8) -> f64 {
    softplus(logit) - if label == 1 { logit } else { 0.0 }
}

/// `σ(o_B − o_A)`: probability that B is preferred over A.
pub fn pair_prob(o: &[f64], pair: &PreferencePair) -> Result<f64> {
    for index in [pair.a_index, pair.b_index] {
        if index >= o.len() {
            return Err(Error::IndexOutOfRange { index, len: o.len() });
        }
    }
    Ok(sigmoid(o[pair.b_index] - o[pair.a_index]))
}

/// Argmax of the scores, lower index on ties.
pub fn route_features(router: &RouterModel, x: &SparseVector) -> usize {
    argmax(&router.score_features(x))
}

pub fn route(router: &RouterModel, prompt: &Prompt) -> Result<usize> {
    Ok(argmax(&score(router, &prompt.text)?))
}

/// Gradient of the mean objective with respect to weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean BCE loss (plus `l2/2·‖W‖²`) over `pairs` and its analytic gradient.
pub fn loss_and_gradient(
    router: &RouterModel,
    features: &FeatureTable,
    pairs: &[PreferencePair],
    l2: f64,
) -> Result<(f64, Gradient)> {
    let mut grad = Gradient {
        weights: vec![0.0; router.weights.len()],
        bias: vec![0.0; router.pool_size],
    };
    if pairs.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    for p in pairs {
        let x = features
            .get(&p.prompt_id)
            .ok_or_else(|| Error::UnknownPrompt(p.prompt_id.clone()))?;
        accumulate_pair(router, x, p, scale, &mut loss, &mut grad);
    }
    if l2 > 0.0 {
        loss += 0.5 * l2 * router.weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in grad.weights.iter_mut().zip(&router.weights) {
            *g += l2 * w;
        }
    }
    Ok((loss, grad))
}

fn accumulate_pair(
    router: &RouterModel,
    x: &SparseVector,
    p: &PreferencePair,
    scale: f64,
    loss: &mut f64,
    grad: &mut Gradient,
) {
    let (a, b) = (p.a_index, p.b_index);
    let logit = router.pair_logit(x, a, b);
    *loss += scale * bce_with_logit(logit, p.label);
    let g = scale * (sigmoid(logit) - f64::from(p.label));
    grad.bias[b] += g;
    grad.bias[a] -= g;
    let k = router.pool_size;
    for (i, v) in x.iter() {
        grad.weights[i * k + b] += g * v;
        grad.weights[i * k + a] -= g * v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_train_loss: f64,
    /// Pair accuracy on the eval pairs if given, otherwise on the training pairs.
    pub eval_pair_accuracy: f64,
    pub hit_at: BTreeMap<usize, f64>,
    pub epoch_losses: Vec<f64>,
}

/// Held-out data used only for the training report.
#[derive(Debug, Clone, Copy)]
pub struct EvalData<'a> {
    pub pairs: Option<&'a PairDataset>,
    pub boards: &'a [PromptScoreboard],
}

/// Featurizes every prompt referenced by the pairs or eval boards, then trains.
pub fn train(
    pairs: &PairDataset,
    texts: &HashMap<String, String>,
    featurizer: &FeaturizerConfig,
    cfg: &TrainConfig,
    eval: Option<EvalData<'_>>,
) -> Result<(RouterModel, TrainReport)> {
    featurizer.validate()?;
    let mut features = FeatureTable::new();
    let needed = pairs
        .pairs
        .iter()
        .map(|p| p.prompt_id.as_str())
        .chain(eval.iter().flat_map(|e| {
            e.boards
                .iter()
                .map(|b| b.prompt_id.as_str())
                .chain(e.pairs.into_iter().flat_map(|d| d.pairs.iter().map(|p| p.prompt_id.as_str())))
        }));
    for id in needed {
        if !features.contains_key(id) {
            let text = texts.get(id).ok_or_else(|| Error::UnknownPrompt(id.to_string()))?;
            features.insert(id.to_string(), featurize(text, featurizer)?);
        }
    }
    train_with_features(
        pairs,
        &features,
        FeaturizerSpec::HashedNgrams(featurizer.clone()),
        cfg,
        eval,
    )
}

/// Trains on precomputed features (hashed or external embeddings).
///
/// Deterministic given `cfg.seed`: the shuffle order comes from a seeded
/// stream and gradients accumulate sequentially in batch order.
pub fn train_with_features(
    pairs: &PairDataset,
    features: &FeatureTable,
    featurizer: FeaturizerSpec,
    cfg: &TrainConfig,
    eval: Option<EvalData<'_>>,
) -> Result<(RouterModel, TrainReport)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("no training pairs".into()));
    }
    if pairs.pool_size < 2 {
        return Err(Error::InvalidPool(format!("pair dataset pool_size {}", pairs.pool_size)));
    }
    let dim = featurizer.dim();
    for p in &pairs.pairs {
        p.validate(pairs.pool_size)?;
        let x = features
            .get(&p.prompt_id)
            .ok_or_else(|| Error::UnknownPrompt(p.prompt_id.clone()))?;
        if x.max_index().is_some_and(|m| m >= dim) {
            return Err(Error::IndexOutOfRange {
                index: x.max_index().unwrap_or(0),
                len: dim,
            });
        }
    }
    if let Some(ep) = eval.and_then(|e| e.pairs) {
        if ep.pool_fingerprint != pairs.pool_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: pairs.pool_fingerprint.clone(),
                found: ep.pool_fingerprint.clone(),
            });
        }
    }

    let mut model = RouterModel::zeros(featurizer, pairs.pool_size, pairs.pool_fingerprint.clone());
    let mut vel_w = vec![0.0; model.weights.len()];
    let mut vel_b = vec![0.0; model.pool_size];
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = seeding::stream(cfg.seed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grad = Gradient {
        weights: vec![0.0; model.weights.len()],
        bias: vec![0.0; model.pool_size],
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.weights.iter_mut().for_each(|g| *g = 0.0);
            grad.bias.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let p = &pairs.pairs[i];
                accumulate_pair(&model, &features[&p.prompt_id], p, scale, &mut batch_loss, &mut grad);
            }
            if cfg.l2 > 0.0 {
                batch_loss += 0.5 * cfg.l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
                for (g, w) in grad.weights.iter_mut().zip(&model.weights) {
                    *g += cfg.l2 * w;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            for ((w, v), g) in model.weights.iter_mut().zip(&mut vel_w).zip(&grad.weights) {
                *v = cfg.momentum * *v + g;
                *w -= cfg.learning_rate * *v;
            }
            for ((b, v), g) in model.bias.iter_mut().zip(&mut vel_b).zip(&grad.bias) {
                *v = cfg.momentum * *v + g;
                *b -= cfg.learning_rate * *v;
            }
        }
        let mean = epoch_loss / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: pairs.len().div_ceil(cfg.batch_size),
            });
        }
        epoch_losses.push(mean);
    }
    if model.weights.iter().chain(&model.bias).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            step: 0,
        });
    }

    let (final_train_loss, _) = loss_and_gradient(&model, features, &pairs.pairs, cfg.l2)?;
    let acc_pairs = eval.and_then(|e| e.pairs).unwrap_or(pairs);
    let eval_pair_accuracy = pair_accuracy(&model, features, &acc_pairs.pairs)?;

    let mut hit_at = BTreeMap::new();
    if let Some(e) = eval.filter(|e| !e.boards.is_empty()) {
        let mut ks: Vec<usize> = cfg.report_k.iter().copied().filter(|&k| k >= 1 && k <= model.pool_size).collect();
        ks.push(model.pool_size);
        let routes = e
            .boards
            .iter()
            .map(|b| {
                let x = features
                    .get(&b.prompt_id)
                    .ok_or_else(|| Error::UnknownPrompt(b.prompt_id.clone()))?;
                Ok((b.prompt_id.clone(), route_features(&model, x)))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        for k in ks {
            hit_at.insert(k, hit_rate(&routes, e.boards, k)?);
        }
    }

    model.metadata = TrainMetadata {
        seed: cfg.seed,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        l2: cfg.l2,
        n_train_pairs: pairs.len(),
        final_train_loss,
    };
    let report = TrainReport {
        epochs_run: cfg.epochs,
        final_train_loss,
        eval_pair_accuracy,
        hit_at,
        epoch_losses,
    };
    Ok((model, report))
}

/// Fraction of pairs whose label matches `σ(o_B − o_A) > 0.5`.
pub fn pair_accuracy(router: &RouterModel, features: &FeatureTable, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for p in pairs {
        let x = features
            .get(&p.prompt_id)
            .ok_or_else(|| Error::UnknownPrompt(p.prompt_id.clone()))?;
        let predicted = u8::from(router.pair_logit(x, p.a_index, p.b_index) > 0.0);
        if predicted == p.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Fraction of boards whose assigned teacher is within the top `k` of the
/// board's ranking. Works for any assignment source (router, oracle, random).
pub fn hit_rate(assignments: &HashMap<String, usize>, boards: &[PromptScoreboard], k: usize) -> Result<f64> {
    let pool_size = boards.first().map(|b| b.pool_size()).unwrap_or(0);
    if k < 1 || k > pool_size {
        return Err(Error::KOutOfRange { k, pool_size });
    }
    let mut hits = 0usize;
    for b in boards {
        let t = *assignments
            .get(&b.prompt_id)
            .ok_or_else(|| Error::UnknownPrompt(b.prompt_id.clone()))?;
        if b.ranking[..k].contains(&t) {
            hits += 1;
        }
    }
    Ok(hits as f64 / boards.len() as f64)
}

pub fn hit_at_k(
    router: &RouterModel,
    boards: &[PromptScoreboard],
    texts: &HashMap<String, String>,
    k: usize,
) -> Result<f64> {
    if k < 1 || k > router.pool_size {
        return Err(Error::KOutOfRange {
            k,
            pool_size: router.pool_size,
        });
    }
    let mut routes = HashMap::with_capacity(boards.len());
    for b in boards {
        let text = texts
            .get(&b.prompt_id)
            .ok_or_else(|| Error::UnknownPrompt(b.prompt_id.clone()))?;
        routes.insert(b.prompt_id.clone(), argmax(&score(router, text)?));
    }
    hit_rate(&routes, boards, k)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    #[serde(flatten)]
    model: RouterModel,
}

pub fn save_router(router: &RouterModel, path: &Path) -> Result<()> {
    io::write_json(
        path,
        &Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            model: router.clone(),
        },
    )
}

pub fn load_router(path: &Path) -> Result<RouterModel> {
    let ckpt: Checkpoint = io::read_json(path)?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::parse(
            path.display().to_string(),
            format!("unsupported checkpoint format `{}`", ckpt.format),
        ));
    }
    ckpt.model.validate()?;
    Ok(ckpt.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_cfg() -> FeaturizerConfig {
        FeaturizerConfig {
            dim: 64,
            ..FeaturizerConfig::default()
        }
    }

    #[test]
    fn featurize_is_deterministic_and_unit_norm() {
        let cfg = FeaturizerConfig::default();
        let a = featurize("Solve for x: 2x + 3 = 7", &cfg).unwrap();
        let b = featurize("Solve for x: 2x + 3 = 7", &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let short = featurize("a", &cfg).unwrap();
        assert!((short.norm() - 1.0).abs() < 1e-12);
        assert!(matches!(featurize("", &cfg), Err(Error::EmptyText)));
    }

    #[test]
    fn disjoint_alphabets_are_orthogonal() {
        let cfg = FeaturizerConfig {
            dim: 1 << 20,
            ..FeaturizerConfig::default()
        };
        let (s, t) = ("abcdefg abc", "ΩΨΦΣΔ ΩΨ");
        let buckets = |text: &str| -> HashSet<usize> {
            char_ngrams(text, cfg.ngram_range).iter().map(|g| cfg.slot(g).0).collect()
        };
        let grams_s: HashSet<String> = char_ngrams(s, cfg.ngram_range).into_iter().collect();
        let grams_t: HashSet<String> = char_ngrams(t, cfg.ngram_range).into_iter().collect();
        assert!(grams_s.is_disjoint(&grams_t));
        // Exact orthogonality requires no bucket collision between the two gram sets.
        assert!(buckets(s).is_disjoint(&buckets(t)));
        assert_eq!(featurize(s, &cfg).unwrap().dot(&featurize(t, &cfg).unwrap()), 0.0);
    }

    #[test]
    fn zero_router_is_indifferent() {
        let r = RouterModel::zeros(FeaturizerSpec::HashedNgrams(small_cfg()), 3, "fp");
        let o = score(&r, "hello world").unwrap();
        assert_eq!(o, vec![0.0; 3]);
        let p = PreferencePair {
            prompt_id: "x".into(),
            a_index: 0,
            b_index: 2,
            label: 1,
        };
        assert_eq!(pair_prob(&o, &p).unwrap(), 0.5);
        assert_eq!(bce_with_logit(0.0, 1), std::f64::consts::LN_2);
        assert_eq!(bce_with_logit(0.0, 0), std::f64::consts::LN_2);
    }

    #[test]
    fn bias_decides_route_for_zero_weights() {
        let mut r = RouterModel::zeros(FeaturizerSpec::HashedNgrams(small_cfg()), 3, "fp");
        r.bias = vec![0.0, 1.0, -1.0];
        for text in ["one", "two words", "something else entirely"] {
            let p = Prompt::new("p", text, crate::registry::Split::Synthesis);
            assert_eq!(route(&r, &p).unwrap(), 1);
        }
    }

    #[test]
    fn pair_prob_examples() {
        let o = [0.2, 0.0, 1.0];
        let p = PreferencePair {
            prompt_id: "x".into(),
            a_index: 0,
            b_index: 2,
            label: 1,
        };
        // Independent evaluation: 1 / (1 + e^-0.8) = 0.6899744811276125
        let expected = 1.0 / (1.0 + (-0.8f64).exp());
        assert!((pair_prob(&o, &p).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.68997).abs() < 1e-5);
        assert!((pair_prob(&[0.0, 800.0], &PreferencePair { a_index: 0, b_index: 1, ..p.clone() }).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            pair_prob(&o, &PreferencePair { b_index: 5, ..p }),
            Err(Error::IndexOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        assert!(bce_with_logit(1000.0, 1) < 1e-300 + 1e-12);
        assert!((bce_with_logit(-1000.0, 1) - 1000.0).abs() < 1e-9);
        assert!(bce_with_logit(-1000.0, 0) >= 0.0);
    }

    fn pair_fixture() -> (PairDataset, FeatureTable) {
        let cfg = small_cfg();
        let mut features = FeatureTable::new();
        let mut pairs = Vec::new();
        for i in 0..40 {
            let id = format!("p{i}");
            features.insert(id.clone(), featurize(&format!("prompt number {i}"), &cfg).unwrap());
            for (a, b) in [(0, 1), (2, 1), (0, 2)] {
                pairs.push(PreferencePair {
                    prompt_id: id.clone(),
                    a_index: a,
                    b_index: b,
                    label: (i % 2) as u8,
                });
            }
        }
        let ds = PairDataset {
            pool_fingerprint: "fp".into(),
            pool_size: 3,
            pairs,
        };
        (ds, features)
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (ds, features) = pair_fixture();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (model, report) = train_with_features(&ds, &features, FeaturizerSpec::HashedNgrams(small_cfg()), &cfg, None).unwrap();
        assert!(model.weights.iter().all(|&w| w == 0.0));
        assert!((report.final_train_loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((report.eval_pair_accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let (ds, features) = pair_fixture();
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            momentum: 0.0,
            epochs: 5,
            ..TrainConfig::default()
        };
        let err = train_with_features(&ds, &features, FeaturizerSpec::HashedNgrams(small_cfg()), &cfg, None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    }

    #[test]
    fn missing_prompt_text_is_an_error() {
        let (ds, _) = pair_fixture();
        let texts = HashMap::new();
        let err = train(&ds, &texts, &small_cfg(), &TrainConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::UnknownPrompt(_)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (ds, features) = pair_fixture();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let (model, _) = train_with_features(&ds, &features, FeaturizerSpec::HashedNgrams(small_cfg()), &cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("router.json");
        save_router(&model, &path).unwrap();
        assert_eq!(load_router(&path).unwrap(), model);
    }

    #[test]
    fn hit_rate_rejects_bad_k() {
        let boards: Vec<PromptScoreboard> = Vec::new();
        assert!(matches!(hit_rate(&HashMap::new(), &boards, 1), Err(Error::KOutOfRange { .. })));
    }
}
