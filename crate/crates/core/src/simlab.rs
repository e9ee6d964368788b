//! Synthetic teachers with known reward processes.
//!
//! A world assigns every teacher a quality skill and a learnability level per
//! topic. Prompts carry literal topic markers, so a text featurizer can see
//! the topic; rewards depend only on (topic, teacher) plus seeded Gaussian
//! noise. Running the real pipeline over such a world gives results with a
//! known ground truth.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::pairs::{build_pair_dataset, save_pairs, PairDataset};
use crate::registry::{CotStyle, Normalization, Prompt, RunConfig, Split, StudentModel, TeacherModel, TeacherPool};
use crate::reward::{
    argmax, build_scoreboard, learnability_reward, save_boards, PromptScoreboard, RawResponse, TokenLogProbs,
};
use crate::router::{self, save_router, EvalData, FeaturizerConfig, RouterModel, TrainConfig};
use crate::seeding;
use crate::strategies::{self, save_allocation, Allocation, StrategyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub name: String,
    /// Relative sampling weight.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTeacher {
    pub id: String,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_size")]
    pub size_b: f64,
    #[serde(default = "default_cot")]
    pub cot_style: CotStyle,
    /// Mean quality reward per topic.
    pub skill_by_topic: BTreeMap<String, f64>,
    /// Mean token log-probability under the student per topic; must be <= 0.
    pub learnability_by_topic: BTreeMap<String, f64>,
    /// Scales the synthetic response length in tokens.
    #[serde(default = "default_verbosity")]
    pub verbosity: f64,
    #[serde(default)]
    pub noise_std: f64,
}

fn default_family() -> String {
    "sim".into()
}

fn default_size() -> f64 {
    7.0
}

fn default_cot() -> CotStyle {
    CotStyle::ShortCoT
}

fn default_verbosity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub topics: Vec<TopicSpec>,
    pub teachers: Vec<SyntheticTeacher>,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_synthesis: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub normalization: Normalization,
    /// Student family, enabling the Family-Strong baseline when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_family: Option<String>,
}

fn default_alpha() -> f64 {
    0.4
}

const BASE_RESPONSE_TOKENS: f64 = 12.0;
const MARKER_REPEATS: usize = 3;
const FILLER_WORDS: std::ops::RangeInclusive<usize> = 8..=16;

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::WorldSpec(m));
        if self.teachers.len() < 2 {
            return bad(format!("need >= 2 teachers, got {}", self.teachers.len()));
        }
        if self.topics.len() < 2 {
            return bad(format!("need >= 2 topics, got {}", self.topics.len()));
        }
        let mut names = std::collections::HashSet::new();
        for t in &self.topics {
            if t.name.is_empty() || t.name.chars().any(char::is_whitespace) {
                return bad(format!("topic name `{}` must be non-empty without whitespace", t.name));
            }
            if !names.insert(t.name.as_str()) {
                return bad(format!("duplicate topic `{}`", t.name));
            }
            if !(t.frequency.is_finite() && t.frequency > 0.0) {
                return bad(format!("topic `{}` frequency must be > 0", t.name));
            }
        }
        for t in &self.teachers {
            if !(t.noise_std.is_finite() && t.noise_std >= 0.0) {
                return bad(format!("teacher `{}` noise_std must be >= 0", t.id));
            }
            if !(t.verbosity.is_finite() && t.verbosity > 0.0) {
                return bad(format!("teacher `{}` verbosity must be > 0", t.id));
            }
            for topic in &self.topics {
                let q = t.skill_by_topic.get(&topic.name);
                let l = t.learnability_by_topic.get(&topic.name);
                match (q, l) {
                    (Some(q), Some(l)) if q.is_finite() && l.is_finite() && *l <= 0.0 => {}
                    _ => {
                        return bad(format!(
                            "teacher `{}` needs finite skill and learnability <= 0 for topic `{}`",
                            t.id, topic.name
                        ))
                    }
                }
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        Ok(())
    }

    /// Sets every teacher's noise level.
    pub fn with_noise(mut self, noise_std: f64) -> Self {
        for t in &mut self.teachers {
            t.noise_std = noise_std;
        }
        self
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            alpha: self.alpha,
            seed,
            normalization: self.normalization,
            ..RunConfig::default()
        }
    }
}

pub fn load_world_spec(path: &Path) -> Result<WorldSpec> {
    let spec: WorldSpec = io::read_json(path)?;
    spec.validate()?;
    Ok(spec)
}

fn topic_map(names: &[&str], values: &[f64]) -> BTreeMap<String, f64> {
    names.iter().map(|n| n.to_string()).zip(values.iter().copied()).collect()
}

/// Three topics, each owned by one specialist, plus a strong generalist and
/// a weak teacher. Specialists are small; the generalist is large.
pub fn heterogeneous_preset() -> WorldSpec {
    let topics = ["algebra", "biology", "poetry"];
    let teacher = |id: &str, size_b: f64, skill: [f64; 3], learn: [f64; 3]| SyntheticTeacher {
        id: id.into(),
        family: "sim".into(),
        size_b,
        cot_style: CotStyle::ShortCoT,
        skill_by_topic: topic_map(&topics, &skill),
        learnability_by_topic: topic_map(&topics, &learn),
        verbosity: 1.0,
        noise_std: 0.15,
    };
    WorldSpec {
        topics: vec![
            TopicSpec {
                name: "algebra".into(),
                frequency: 0.4,
            },
            TopicSpec {
                name: "biology".into(),
                frequency: 0.35,
            },
            TopicSpec {
                name: "poetry".into(),
                frequency: 0.25,
            },
        ],
        teachers: vec![
            teacher("generalist-72b", 72.0, [0.7, 0.7, 0.7], [-1.0, -1.0, -1.0]),
            teacher("algebra-7b", 7.0, [1.0, 0.2, 0.2], [-0.8, -1.2, -1.2]),
            teacher("biology-7b", 7.0, [0.2, 1.0, 0.2], [-1.2, -0.8, -1.2]),
            teacher("poetry-7b", 7.0, [0.2, 0.2, 1.0], [-1.2, -1.2, -0.8]),
            teacher("weak-1b", 1.0, [0.3, 0.3, 0.3], [-1.5, -1.5, -1.5]),
        ],
        n_train: 2000,
        n_eval: 500,
        n_synthesis: 1000,
        alpha: 0.4,
        normalization: Normalization::ZScore,
        student_family: None,
    }
}

/// Noise-free world where every topic has one dominant owner.
pub fn separable_preset() -> WorldSpec {
    heterogeneous_preset().with_noise(0.0)
}

pub fn preset(name: &str) -> Result<WorldSpec> {
    match name {
        "heterogeneous" => Ok(heterogeneous_preset()),
        "separable" => Ok(separable_preset()),
        other => Err(Error::WorldSpec(format!("unknown preset `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPrompt {
    pub prompt: Prompt,
    pub topic: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub seed: u64,
    pub pool: TeacherPool,
    pub train: Vec<SimPrompt>,
    pub eval: Vec<SimPrompt>,
    pub synthesis: Vec<SimPrompt>,
}

fn filler_vocabulary() -> Vec<String> {
    const ONSETS: [&str; 8] = ["b", "d", "k", "l", "m", "n", "r", "s"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut words = Vec::new();
    for a in ONSETS {
        for v in VOWELS {
            for b in ["", "n", "t"] {
                words.push(format!("{a}{v}{b}o"));
            }
        }
    }
    words
}

/// The literal marker for a topic inside prompt text.
pub fn topic_marker(topic: &str) -> String {
    format!("<{topic}>")
}

pub fn make_world(spec: WorldSpec, seed: u64) -> Result<SyntheticWorld> {
    spec.validate()?;
    let teachers = spec
        .teachers
        .iter()
        .map(|t| TeacherModel::new(t.id.clone(), t.family.clone(), t.size_b, t.cot_style))
        .collect();
    let pool = TeacherPool::new(teachers).map_err(|e| Error::WorldSpec(e.to_string()))?;
    let weights = WeightedIndex::new(spec.topics.iter().map(|t| t.frequency))
        .map_err(|e| Error::WorldSpec(e.to_string()))?;
    let vocab = filler_vocabulary();
    let make = |prefix: &str, split: Split, n: usize| -> Vec<SimPrompt> {
        (0..n)
            .map(|i| {
                let id = format!("{prefix}-{i:05}");
                let mut rng = seeding::substream(seed, &format!("prompt/{id}"));
                let topic = weights.sample(&mut rng);
                let n_words = rng.gen_range(FILLER_WORDS);
                let mut words: Vec<String> = (0..n_words).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
                let marker = topic_marker(&spec.topics[topic].name);
                for _ in 0..MARKER_REPEATS {
                    let at = rng.gen_range(0..=words.len());
                    words.insert(at, marker.clone());
                }
                SimPrompt {
                    prompt: Prompt::new(id, words.join(" "), split),
                    topic,
                }
            })
            .collect()
    };
    let train = make("train", Split::RouterTrain, spec.n_train);
    let eval = make("eval", Split::RouterEval, spec.n_eval);
    let synthesis = make("syn", Split::Synthesis, spec.n_synthesis);
    Ok(SyntheticWorld {
        spec,
        seed,
        pool,
        train,
        eval,
        synthesis,
    })
}

impl SyntheticWorld {
    pub fn topic_names(&self) -> Vec<&str> {
        self.spec.topics.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn run_config(&self) -> RunConfig {
        self.spec.run_config(self.seed)
    }

    fn teacher_topic(&self, teacher: usize, topic: usize) -> (&SyntheticTeacher, f64, f64) {
        let t = &self.spec.teachers[teacher];
        let name = &self.spec.topics[topic].name;
        (t, t.skill_by_topic[name], t.learnability_by_topic[name])
    }

    /// Quality skill plus seeded noise.
    pub fn true_quality(&self, prompt_id: &str, topic: usize, teacher: usize) -> f64 {
        let (t, skill, _) = self.teacher_topic(teacher, topic);
        if t.noise_std == 0.0 {
            return skill;
        }
        let mut rng = seeding::substream(self.seed, &format!("quality/{prompt_id}/{teacher}"));
        let z: f64 = StandardNormal.sample(&mut rng);
        skill + t.noise_std * z
    }

    /// Synthetic student log-probabilities of the teacher's response.
    /// Length follows verbosity; each token is the topic level plus noise,
    /// clipped at zero.
    pub fn true_logprobs(&self, prompt_id: &str, topic: usize, teacher: usize) -> TokenLogProbs {
        let (t, _, level) = self.teacher_topic(teacher, topic);
        let n = ((BASE_RESPONSE_TOKENS * t.verbosity).round() as usize).max(1);
        let mut rng = seeding::substream(self.seed, &format!("learn/{prompt_id}/{teacher}"));
        TokenLogProbs::response_only((0..n).map(|_| {
            if t.noise_std == 0.0 {
                level
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                (level + t.noise_std * z).min(0.0)
            }
        }))
    }

    pub fn true_learnability(&self, prompt_id: &str, topic: usize, teacher: usize) -> f64 {
        learnability_reward(&self.true_logprobs(prompt_id, topic, teacher)).expect("synthetic logprobs are valid")
    }

    fn raw_responses(&self, prompt_id: &str, topic: usize) -> Vec<RawResponse> {
        (0..self.pool.len())
            .map(|t| RawResponse {
                teacher_index: t,
                text: format!("response of {} to {prompt_id}", self.spec.teachers[t].id),
                r_learn: self.true_learnability(prompt_id, topic, t),
                r_quality: self.true_quality(prompt_id, topic, t),
            })
            .collect()
    }

    pub fn board(&self, prompt_id: &str, topic: usize) -> Result<PromptScoreboard> {
        build_scoreboard(prompt_id, self.raw_responses(prompt_id, topic), self.pool.len(), &self.run_config())
    }

    pub fn prompts(split: &[SimPrompt]) -> Vec<Prompt> {
        split.iter().map(|p| p.prompt.clone()).collect()
    }
}

/// Scoreboards for `prompts` from true rewards, through the regular reward
/// module.
pub fn emit_boards(world: &SyntheticWorld, prompts: &[SimPrompt]) -> Result<Vec<PromptScoreboard>> {
    prompts.iter().map(|p| world.board(&p.prompt.id, p.topic)).collect()
}

/// The best router that sees only the topic: route each topic to the teacher
/// most often ranked first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesOracle {
    pub topic_teacher: Vec<usize>,
    /// Expected Hit@1, estimated by Monte Carlo.
    pub accuracy: f64,
}

impl BayesOracle {
    pub fn route(&self, prompts: &[SimPrompt]) -> HashMap<String, usize> {
        prompts
            .iter()
            .map(|p| (p.prompt.id.clone(), self.topic_teacher[p.topic]))
            .collect()
    }
}

/// Monte Carlo estimate over `samples_per_topic` fresh prompts per topic.
pub fn bayes_oracle(world: &SyntheticWorld, samples_per_topic: usize) -> Result<BayesOracle> {
    if samples_per_topic == 0 {
        return Err(Error::InvalidConfig("samples_per_topic must be >= 1".into()));
    }
    let total: f64 = world.spec.topics.iter().map(|t| t.frequency).sum();
    let mut topic_teacher = Vec::with_capacity(world.spec.topics.len());
    let mut accuracy = 0.0;
    for (k, topic) in world.spec.topics.iter().enumerate() {
        let mut wins = vec![0usize; world.pool.len()];
        for i in 0..samples_per_topic {
            let board = world.board(&format!("bayes-{k}-{i:06}"), k)?;
            wins[board.best()] += 1;
        }
        let counts: Vec<f64> = wins.iter().map(|&w| w as f64).collect();
        let best = argmax(&counts);
        topic_teacher.push(best);
        accuracy += topic.frequency / total * wins[best] as f64 / samples_per_topic as f64;
    }
    Ok(BayesOracle {
        topic_teacher,
        accuracy,
    })
}

/// Finds the common noise level at which the Bayes oracle's Hit@1 is
/// closest to `target`, by bisection.
pub fn calibrate_noise(spec: &WorldSpec, seed: u64, target: f64, samples_per_topic: usize) -> Result<(f64, BayesOracle)> {
    if !(0.0 < target && target < 1.0) {
        return Err(Error::InvalidConfig(format!("target accuracy {target} must be in (0, 1)")));
    }
    let eval = |noise: f64| -> Result<BayesOracle> {
        let world = make_world(spec.clone().with_noise(noise), seed)?;
        bayes_oracle(&world, samples_per_topic)
    };
    let mut lo = 0.0;
    let mut hi = 0.05;
    let mut at_hi = eval(hi)?;
    while at_hi.accuracy > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidConfig(format!("Bayes accuracy never drops to {target}")));
        }
        at_hi = eval(hi)?;
    }
    let mut best = (hi, at_hi);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let at = eval(mid)?;
        if (at.accuracy - target).abs() < (best.1.accuracy - target).abs() {
            best = (mid, at.clone());
        }
        if at.accuracy > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndConfig {
    pub featurizer: FeaturizerConfig,
    pub train: TrainConfig,
    pub symmetrize: bool,
    /// Monte Carlo samples per topic for the Bayes oracle; 0 skips it.
    pub bayes_samples_per_topic: usize,
}

impl Default for EndToEndConfig {
    fn default() -> Self {
        Self {
            featurizer: FeaturizerConfig::default(),
            train: TrainConfig::default(),
            symmetrize: true,
            bayes_samples_per_topic: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    /// Mean true combined reward over the synthesis prompts.
    pub mean_true_reward: f64,
    /// Set for single-teacher strategies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub rows: Vec<StrategyRow>,
    /// Router Hit@k on the eval prompts.
    pub router_hit_at: BTreeMap<usize, f64>,
    pub eval_pair_accuracy: f64,
    /// Bayes oracle Hit@1 on the same eval prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bayes_hit_at_1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bayes_expected_accuracy: Option<f64>,
}

impl Comparison {
    pub fn mean_reward(&self, strategy: StrategyKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy.name())
            .map(|r| r.mean_true_reward)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<14}  {:>12}  teacher\n", "strategy", "mean_reward");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14}  {:>12.6}  {}\n",
                r.strategy,
                r.mean_true_reward,
                r.teacher_id.as_deref().unwrap_or("-")
            ));
        }
        for (k, h) in &self.router_hit_at {
            out.push_str(&format!("router hit@{k:<5}  {h:>12.4}\n"));
        }
        out.push_str(&format!("eval pair acc   {:>12.4}\n", self.eval_pair_accuracy));
        if let Some(b) = self.bayes_hit_at_1 {
            out.push_str(&format!("bayes hit@1     {b:>12.4}\n"));
        }
        out
    }
}

/// Everything an end-to-end run produces.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub comparison: Comparison,
    pub train_boards: Vec<PromptScoreboard>,
    pub eval_boards: Vec<PromptScoreboard>,
    pub synthesis_boards: Vec<PromptScoreboard>,
    pub pairs: PairDataset,
    pub router: RouterModel,
    pub allocations: Vec<Allocation>,
}

/// Mean true combined reward of an allocation over `boards`.
pub fn mean_true_reward(alloc: &Allocation, boards: &[PromptScoreboard]) -> Result<f64> {
    if boards.is_empty() {
        return Err(Error::InvalidConfig("no boards to evaluate".into()));
    }
    let mut sum = 0.0;
    for b in boards {
        let t = alloc
            .teacher_for(&b.prompt_id)
            .ok_or_else(|| Error::UnknownPrompt(b.prompt_id.clone()))?;
        sum += b.combined(t);
    }
    Ok(sum / boards.len() as f64)
}

/// Largest teacher; lower index wins ties.
fn strongest_teacher(pool: &TeacherPool) -> usize {
    let mut best = 0;
    for (i, t) in pool.teachers().iter().enumerate() {
        if t.size_b > pool.teachers()[best].size_b {
            best = i;
        }
    }
    best
}

/// Trains a router on the train split, then compares every strategy on the
/// synthesis split.
pub fn end_to_end(world: &SyntheticWorld, cfg: &EndToEndConfig) -> Result<EndToEnd> {
    let train_boards = emit_boards(world, &world.train)?;
    let eval_boards = emit_boards(world, &world.eval)?;
    let synthesis_boards = emit_boards(world, &world.synthesis)?;
    let fingerprint = world.pool.fingerprint();
    let pairs = build_pair_dataset(&train_boards, &fingerprint, cfg.symmetrize, world.seed)?;
    let eval_pairs = build_pair_dataset(&eval_boards, &fingerprint, cfg.symmetrize, world.seed)?;

    let mut texts = router::prompt_texts(&SyntheticWorld::prompts(&world.train));
    texts.extend(router::prompt_texts(&SyntheticWorld::prompts(&world.eval)));
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = world.seed;
    let (router, report) = router::train(
        &pairs,
        &texts,
        &cfg.featurizer,
        &train_cfg,
        Some(EvalData {
            pairs: Some(&eval_pairs),
            boards: &eval_boards,
        }),
    )?;

    let synthesis = SyntheticWorld::prompts(&world.synthesis);
    let pool = &world.pool;
    let mut allocations = vec![
        strategies::assign_strong(&synthesis, pool, &pool.teachers()[strongest_teacher(pool)].id)?,
        strategies::assign_mix(&synthesis, pool, world.seed)?,
    ];
    if let Some(family) = &world.spec.student_family {
        let student = StudentModel::new("sim-student", family.clone(), 1.0)?;
        allocations.push(strategies::assign_family_strong(&synthesis, pool, &student)?);
    }
    allocations.push(strategies::assign_car(&synthesis, &train_boards)?);
    allocations.push(strategies::assign_persyn(&synthesis, &router, pool)?);
    allocations.push(strategies::assign_oracle(&synthesis, &synthesis_boards)?);

    let mut rows = Vec::with_capacity(allocations.len());
    for a in &allocations {
        let single = [StrategyKind::Strong, StrategyKind::FamilyStrong, StrategyKind::Car]
            .iter()
            .any(|k| k.name() == a.strategy);
        let teacher_id = a
            .ratios
            .keys()
            .next()
            .filter(|_| single)
            .map(|&t| pool.teachers()[t].id.clone());
        rows.push(StrategyRow {
            strategy: a.strategy.clone(),
            mean_true_reward: mean_true_reward(a, &synthesis_boards)?,
            teacher_id,
        });
    }

    let (bayes_hit_at_1, bayes_expected_accuracy) = if cfg.bayes_samples_per_topic > 0 {
        let oracle = bayes_oracle(world, cfg.bayes_samples_per_topic)?;
        let hit = router::hit_rate(&oracle.route(&world.eval), &eval_boards, 1)?;
        (Some(hit), Some(oracle.accuracy))
    } else {
        (None, None)
    };

    Ok(EndToEnd {
        comparison: Comparison {
            seed: world.seed,
            rows,
            router_hit_at: report.hit_at,
            eval_pair_accuracy: report.eval_pair_accuracy,
            bayes_hit_at_1,
            bayes_expected_accuracy,
        },
        train_boards,
        eval_boards,
        synthesis_boards,
        pairs,
        router,
        allocations,
    })
}

/// Writes every artifact of a run into `dir`.
pub fn write_run(world: &SyntheticWorld, run: &EndToEnd, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::registry::save_pool(&world.pool, &dir.join("pool.json"))?;
    let mut all_prompts = SyntheticWorld::prompts(&world.train);
    all_prompts.extend(SyntheticWorld::prompts(&world.eval));
    all_prompts.extend(SyntheticWorld::prompts(&world.synthesis));
    crate::registry::save_prompts(&all_prompts, &dir.join("prompts.jsonl"))?;
    save_boards(&run.train_boards, &dir.join("boards_train.jsonl"))?;
    save_boards(&run.eval_boards, &dir.join("boards_eval.jsonl"))?;
    save_boards(&run.synthesis_boards, &dir.join("boards_synthesis.jsonl"))?;
    save_pairs(&run.pairs, &dir.join("pairs.jsonl"))?;
    save_router(&run.router, &dir.join("router.json"))?;
    for a in &run.allocations {
        save_allocation(a, &world.pool, &dir.join(format!("allocation_{}.jsonl", a.strategy)))?;
    }
    io::write_json(&dir.join("comparison.json"), &run.comparison)?;
    std::fs::write(dir.join("comparison.txt"), run.comparison.table()).map_err(|e| Error::io(dir.join("comparison.txt"), e))
}
