//! Property checks shared by the invariant tests and the acceptance run.

use std::cell::Cell;
use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use teachroute::dataset::{swap_experiment, TeacherFilter};
use teachroute::pairs::{two_hot, PreferencePair};
use teachroute::registry::{CotStyle, Normalization, RunConfig, TeacherModel, TeacherPool};
use teachroute::reward::{build_scoreboard, RawResponse};
use teachroute::router::{self, FeaturizerConfig, FeaturizerSpec, RouterModel};
use teachroute::strategies::{assign_mix, Allocation};
use teachroute::Prompt;

pub const CASES: u32 = 256;

/// Runs `test` on `CASES` deterministic inputs and returns how many ran.
pub fn check<S, F>(strategy: S, test: F) -> Result<u32, String>
where
    S: Strategy,
    F: Fn(S::Value) -> Result<(), TestCaseError>,
{
    let ran = Cell::new(0u32);
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    runner
        .run(&strategy, |v| {
            ran.set(ran.get() + 1);
            test(v)
        })
        .map_err(|e| e.to_string())?;
    Ok(ran.get())
}

fn raw(quality: &[f64], learn: &[f64]) -> Vec<RawResponse> {
    quality
        .iter()
        .zip(learn)
        .enumerate()
        .map(|(i, (&q, &l))| RawResponse {
            teacher_index: i,
            text: String::new(),
            r_learn: l,
            r_quality: q,
        })
        .collect()
}

fn min_gap(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Positive affine maps of either raw reward channel leave the per-prompt
/// ranking unchanged, under both normalizations.
pub fn affine_invariance_of_ranking() -> Result<u32, String> {
    let strat = (2usize..9).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-8.0f64..0.0, n),
            (0.01f64..100.0, -50.0f64..50.0),
            (0.01f64..100.0, -50.0f64..50.0),
            0.0f64..=1.0,
            any::<bool>(),
        )
    });
    check(strat, |(q, l, (qa, qb), (la, lb), alpha, minmax)| {
        let cfg = RunConfig {
            alpha,
            normalization: if minmax { Normalization::MinMax } else { Normalization::ZScore },
            ..RunConfig::default()
        };
        let n = q.len();
        let base = build_scoreboard("p", raw(&q, &l), n, &cfg).unwrap();
        let combined: Vec<f64> = base.responses.iter().map(|r| r.r_combined).collect();
        // Near-ties are decided by rounding, not by the data.
        prop_assume!(min_gap(&combined) > 1e-9);
        let q2: Vec<f64> = q.iter().map(|x| qa * x + qb).collect();
        let l2: Vec<f64> = l.iter().map(|x| la * x + lb).collect();
        let moved = build_scoreboard("p", raw(&q2, &l2), n, &cfg).unwrap();
        prop_assert_eq!(&base.ranking, &moved.ranking);
        Ok(())
    })
}

/// The two-hot vector of a flipped pair is the negation of the original,
/// and the two preference probabilities sum to one.
pub fn two_hot_antisymmetry() -> Result<u32, String> {
    let strat = (2usize..12).prop_flat_map(|n| {
        (
            Just(n),
            (0..n, 0..n - 1),
            0u8..2,
            prop::collection::vec(-20.0f64..20.0, n),
        )
    });
    check(strat, |(n, (a, b), label, o)| {
        let b = if b >= a { b + 1 } else { b };
        let pair = PreferencePair {
            prompt_id: "p".into(),
            a_index: a,
            b_index: b,
            label,
        };
        let z = two_hot(&pair, n).unwrap();
        let zf = two_hot(&pair.flipped(), n).unwrap();
        for i in 0..n {
            prop_assert_eq!(z[i], -zf[i]);
        }
        prop_assert_eq!(z.iter().sum::<f64>(), 0.0);
        prop_assert_eq!(z.iter().filter(|&&v| v == 1.0).count(), 1);
        prop_assert_eq!(z.iter().filter(|&&v| v == -1.0).count(), 1);
        prop_assert_eq!(z[b], 1.0);

        let p = router::pair_prob(&o, &pair).unwrap();
        let pf = router::pair_prob(&o, &pair.flipped()).unwrap();
        prop_assert!((p + pf - 1.0).abs() < 1e-12);
        let zo: f64 = z.iter().zip(&o).map(|(zi, oi)| zi * oi).sum();
        prop_assert!((p - router::sigmoid(zo)).abs() < 1e-12);
        Ok(())
    })
}

/// Adding the same constant to every teacher's bias changes no routing
/// decision and no pair probability.
pub fn bias_translation_routing_invariance() -> Result<u32, String> {
    let dim = 16;
    let strat = (2usize..7).prop_flat_map(move |k| {
        (
            prop::collection::vec(-1.0f64..1.0, dim * k),
            prop::collection::vec(-1.0f64..1.0, k),
            -100.0f64..100.0,
            "[a-z ]{3,40}",
        )
    });
    check(strat, move |(weights, bias, shift, text)| {
        prop_assume!(!text.trim().is_empty());
        let k = bias.len();
        let spec = FeaturizerSpec::HashedNgrams(FeaturizerConfig {
            dim,
            ..FeaturizerConfig::default()
        });
        let mut model = RouterModel::zeros(spec, k, "fp");
        model.weights = weights;
        model.bias = bias;
        let scores = router::score(&model, &text).unwrap();
        prop_assume!(min_gap(&scores) > 1e-9);
        let mut shifted = model.clone();
        shifted.bias.iter_mut().for_each(|b| *b += shift);
        let prompt = Prompt::new("p", text.clone(), teachroute::Split::Synthesis);
        prop_assert_eq!(router::route(&model, &prompt).unwrap(), router::route(&shifted, &prompt).unwrap());
        let scores2 = router::score(&shifted, &text).unwrap();
        let pair = PreferencePair {
            prompt_id: "p".into(),
            a_index: 0,
            b_index: k - 1,
            label: 1,
        };
        let p1 = router::pair_prob(&scores, &pair).unwrap();
        let p2 = router::pair_prob(&scores2, &pair).unwrap();
        prop_assert!((p1 - p2).abs() < 1e-9);
        Ok(())
    })
}

/// Per-teacher ratios of any allocation sum to one and equal count / total.
pub fn allocation_ratio_conservation() -> Result<u32, String> {
    let strat = (2usize..10).prop_flat_map(|k| (Just(k), prop::collection::vec(0..k, 1..300), any::<u64>()));
    check(strat, |(k, teachers, seed)| {
        let assignments: BTreeMap<String, usize> = teachers
            .iter()
            .enumerate()
            .map(|(i, &t)| (format!("p{i:04}"), t))
            .collect();
        let prompts: Vec<Prompt> = assignments
            .keys()
            .map(|id| Prompt::new(id.clone(), "text", teachroute::Split::Synthesis))
            .collect();
        let pool = pool_of(k);
        for alloc in [
            Allocation::from_assignments("custom", k, assignments.clone()).unwrap(),
            assign_mix(&prompts, &pool, seed).unwrap(),
        ] {
            let total: f64 = alloc.ratios.values().sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "ratios sum to {}", total);
            let counts = alloc.counts();
            prop_assert_eq!(counts.iter().sum::<usize>(), alloc.len());
            for (t, &c) in counts.iter().enumerate() {
                prop_assert_eq!(alloc.ratio(t), c as f64 / alloc.len() as f64);
                prop_assert_eq!(alloc.ratios.contains_key(&t), c > 0);
            }
        }
        Ok(())
    })
}

fn pool_of(k: usize) -> TeacherPool {
    TeacherPool::new(
        (0..k)
            .map(|i| TeacherModel::new(format!("t{i}"), "f", 1.0 + i as f64, CotStyle::ShortCoT))
            .collect(),
    )
    .unwrap()
}

fn arb_pool() -> impl Strategy<Value = TeacherPool> {
    let sizes = prop::sample::select(vec![1.0, 3.0, 7.0, 8.0, 14.0, 32.0, 70.0, 72.0, 405.0]);
    let fams = prop::sample::select(vec!["llama", "qwen", "gemma"]);
    prop::collection::vec((fams, sizes, any::<bool>()), 2..8).prop_map(|specs| {
        TeacherPool::new(
            specs
                .into_iter()
                .enumerate()
                .map(|(i, (fam, size, long))| {
                    let cot = if long { CotStyle::LongCoT } else { CotStyle::ShortCoT };
                    TeacherModel::new(format!("{fam}-{i}"), fam, size, cot)
                })
                .collect(),
        )
        .unwrap()
    })
}

fn arb_filter(pool: &TeacherPool) -> impl Strategy<Value = TeacherFilter> {
    let ids: Vec<String> = pool.teachers().iter().map(|t| t.id.clone()).collect();
    prop_oneof![
        Just(TeacherFilter::LongCot),
        Just(TeacherFilter::ShortCot),
        prop::sample::select(vec!["llama", "qwen", "gemma"]).prop_map(|f| TeacherFilter::Family(f.into())),
        prop::sample::subsequence(ids.clone(), 0..=ids.len()).prop_map(TeacherFilter::Ids),
        (1.0f64..500.0).prop_map(TeacherFilter::SizeAtLeast),
        (1.0f64..500.0).prop_map(TeacherFilter::SizeBelow),
    ]
}

/// Applying the same swap twice equals applying it once.
pub fn swap_idempotence() -> Result<u32, String> {
    let strat = arb_pool().prop_flat_map(|pool| {
        let k = pool.len();
        (
            arb_filter(&pool),
            0..k,
            prop::collection::vec(0..k, 1..100),
            Just(pool),
        )
    });
    check(strat, |(filter, to, teachers, pool)| {
        let assignments = teachers.iter().enumerate().map(|(i, &t)| (format!("p{i}"), t)).collect();
        let alloc = Allocation::from_assignments("mix", pool.len(), assignments).unwrap();
        let to_id = pool.teachers()[to].id.clone();
        let once = swap_experiment(&alloc, &pool, &filter, &to_id).unwrap();
        let twice = swap_experiment(&once, &pool, &filter, &to_id).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.len(), alloc.len());
        for (id, &t) in &alloc.assignments {
            let expected = if filter.matches(&pool.teachers()[t]) { to } else { t };
            prop_assert_eq!(once.teacher_for(id), Some(expected));
        }
        Ok(())
    })
}

pub type Check = fn() -> Result<u32, String>;

pub const ALL: [(&str, Check); 5] = [
    ("affine invariance of ranking", affine_invariance_of_ranking),
    ("two-hot antisymmetry", two_hot_antisymmetry),
    ("bias-translation routing invariance", bias_translation_routing_invariance),
    ("allocation ratio conservation", allocation_ratio_conservation),
    ("swap idempotence", swap_idempotence),
];
