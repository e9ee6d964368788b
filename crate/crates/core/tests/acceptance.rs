//! Acceptance run: one PASS/FAIL line per criterion, then a hard assert.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::invariants::{self, CASES};
use common::pipeline::{self, Mocks};
use teachroute::orchestrator::mock::{math_answer, MockBehavior, MockConfig, MockServer};
use teachroute::orchestrator::rejection::RejectionPolicy;
use teachroute::orchestrator::{EndpointBinding, Orchestrator, OrchestratorOptions};
use teachroute::pairs::{build_pair_dataset, pairs_per_prompt, PreferencePair};
use teachroute::registry::{CotStyle, Normalization, RunConfig, TeacherModel, TeacherPool};
use teachroute::reward::{self, build_scoreboard, ExactMatchChecker, RawResponse, TokenLogProb, TokenLogProbs};
use teachroute::router::{self, FeatureTable, FeaturizerConfig, FeaturizerSpec, RouterModel, SparseVector};
use teachroute::simlab::{
    calibrate_noise, end_to_end, heterogeneous_preset, make_world, separable_preset, EndToEndConfig,
};
use teachroute::strategies::{assign_mix, StrategyKind};
use teachroute::{Prompt, PromptScoreboard, Split};

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let verdict = verdict.and_then(|d| {
        if elapsed <= budget {
            Ok(d)
        } else {
            Err(format!("{d}; took {elapsed:.2?}, budget {budget:?}"))
        }
    });
    let (tag, detail) = match &verdict {
        Ok(d) => ("PASS", d.clone()),
        Err(d) => ("FAIL", d.clone()),
    };
    println!("{tag} [{n}] {name}: {detail} ({elapsed:.2?})");
    verdict.is_ok()
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

// Brute-force recomputations, written without the library's helpers.

fn brute_mean_response(lp: &[f64], boundary: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &v) in lp.iter().enumerate() {
        if i >= boundary {
            sum += v;
            count += 1;
        }
    }
    sum / count as f64
}

/// Z-scores from the pairwise form of the population variance.
fn brute_zscore(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mut pair_sq = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            pair_sq += (x[i] - x[j]).powi(2);
        }
    }
    let std = (pair_sq / (n * n)).sqrt();
    if std == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

fn brute_minmax(x: &[f64]) -> Vec<f64> {
    let mut lo = x[0];
    let mut hi = x[0];
    for &v in x {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    if hi == lo {
        return vec![0.5; x.len()];
    }
    x.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn rewards_exact() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_learn = 0.0f64;
    let mut worst_combined = 0.0f64;
    for _ in 0..100 {
        let boundary = rng.gen_range(0..6);
        let len = boundary + rng.gen_range(1..40);
        let lp: Vec<f64> = (0..len).map(|_| -rng.gen_range(0.0..12.0)).collect();
        let tokens = TokenLogProbs {
            tokens: lp
                .iter()
                .map(|&logprob| TokenLogProb {
                    text: String::new(),
                    logprob,
                })
                .collect(),
            prompt_boundary: boundary,
        };
        let got = reward::learnability_reward(&tokens).map_err(|e| e.to_string())?;
        worst_learn = worst_learn.max(rel_err(got, brute_mean_response(&lp, boundary)));
    }
    for i in 0..100 {
        let n = rng.gen_range(2..10);
        let alpha = rng.gen_range(0.0..=1.0);
        let normalization = if i % 2 == 0 { Normalization::ZScore } else { Normalization::MinMax };
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let l: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0..6.0)).collect();
        let raw = (0..n)
            .map(|t| RawResponse {
                teacher_index: t,
                text: String::new(),
                r_learn: l[t],
                r_quality: q[t],
            })
            .collect();
        let cfg = RunConfig {
            alpha,
            normalization,
            ..RunConfig::default()
        };
        let board = build_scoreboard("p", raw, n, &cfg).map_err(|e| e.to_string())?;
        let (qn, ln) = match normalization {
            Normalization::ZScore => (brute_zscore(&q), brute_zscore(&l)),
            Normalization::MinMax => (brute_minmax(&q), brute_minmax(&l)),
        };
        let want: Vec<f64> = (0..n).map(|t| (1.0 - alpha) * qn[t] + alpha * ln[t]).collect();
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for t in 0..n {
            let err = (board.combined(t) - want[t]).abs() / scale;
            worst_combined = worst_combined.max(err);
            let direct = reward::combined_reward(qn[t], ln[t], alpha).map_err(|e| e.to_string())?;
            worst_combined = worst_combined.max((direct - want[t]).abs() / scale);
        }
    }
    ensure(worst_learn < 1e-12 && worst_combined < 1e-12, || {
        format!("worst relative error learnability {worst_learn:e}, combined {worst_combined:e}")
    })?;
    Ok(format!(
        "200 instances, worst relative error learnability {worst_learn:.1e}, combined {worst_combined:.1e}"
    ))
}

fn random_boards(n_teachers: usize, n_prompts: usize, seed: u64) -> Vec<PromptScoreboard> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = RunConfig::default();
    (0..n_prompts)
        .map(|i| {
            let raw = (0..n_teachers)
                .map(|t| RawResponse {
                    teacher_index: t,
                    text: String::new(),
                    r_learn: -rng.gen_range(0.0..5.0),
                    r_quality: rng.gen_range(-3.0..3.0),
                })
                .collect();
            build_scoreboard(&format!("p{i:05}"), raw, n_teachers, &cfg).unwrap()
        })
        .collect()
}

fn pair_counts() -> Verdict {
    let mut detail = Vec::new();
    for (teachers, expected) in [(15usize, 262_500usize), (19, 427_500)] {
        ensure(pairs_per_prompt(teachers) * 2500 == expected, || {
            format!("pairs_per_prompt({teachers}) = {}", pairs_per_prompt(teachers))
        })?;
        let boards = random_boards(teachers, 2500, teachers as u64);
        for symmetrize in [false, true] {
            let ds = build_pair_dataset(&boards, "fp", symmetrize, 1).map_err(|e| e.to_string())?;
            ensure(ds.len() == expected, || {
                format!("{teachers} teachers: {} pairs, expected {expected}", ds.len())
            })?;
            let mut per_prompt: BTreeMap<&str, HashSet<(usize, usize)>> = BTreeMap::new();
            for p in &ds.pairs {
                let key = (p.a_index.min(p.b_index), p.a_index.max(p.b_index));
                ensure(per_prompt.entry(&p.prompt_id).or_default().insert(key), || {
                    format!("duplicate pair {key:?} for {}", p.prompt_id)
                })?;
            }
            ensure(per_prompt.values().all(|s| s.len() == teachers * (teachers - 1) / 2), || {
                "a prompt is missing pairs".into()
            })?;
        }
        detail.push(format!("{teachers}x2500 = {expected}"));
    }
    Ok(detail.join(", "))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let dim = 16;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let instances = 25;
    for inst in 0..instances {
        let k = rng.gen_range(2..7);
        let spec = FeaturizerSpec::HashedNgrams(FeaturizerConfig {
            dim,
            ..FeaturizerConfig::default()
        });
        let mut model = RouterModel::zeros(spec, k, "fp");
        model.weights = (0..dim * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        model.bias = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut features = FeatureTable::new();
        for p in 0..8 {
            let dense: Vec<f64> = (0..dim)
                .map(|_| if rng.gen_bool(0.4) { rng.gen_range(-1.0..1.0) } else { 0.0 })
                .collect();
            features.insert(format!("p{p}"), SparseVector::from_dense(&dense));
        }
        let pairs: Vec<PreferencePair> = (0..30)
            .map(|_| {
                let a = rng.gen_range(0..k);
                let b = (a + rng.gen_range(1..k)) % k;
                PreferencePair {
                    prompt_id: format!("p{}", rng.gen_range(0..8)),
                    a_index: a,
                    b_index: b,
                    label: rng.gen_range(0..2),
                }
            })
            .collect();
        let l2 = if inst % 2 == 0 { 0.0 } else { rng.gen_range(0.0..0.1) };
        let loss = |m: &RouterModel| router::loss_and_gradient(m, &features, &pairs, l2).unwrap().0;
        let (_, grad) = router::loss_and_gradient(&model, &features, &pairs, l2).map_err(|e| e.to_string())?;

        let mut analytic = grad.weights.clone();
        analytic.extend(&grad.bias);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..model.weights.len() + k {
            let mut plus = model.clone();
            let mut minus = model.clone();
            if i < model.weights.len() {
                plus.weights[i] += h;
                minus.weights[i] -= h;
            } else {
                plus.bias[i - model.weights.len()] += h;
                minus.bias[i - model.weights.len()] -= h;
            }
            numeric.push((loss(&plus) - loss(&minus)) / (2.0 * h));
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let err = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12);
        worst = worst.max(err);
    }
    ensure(worst < 1e-4, || format!("worst relative error {worst:e}"))?;
    Ok(format!("{instances} instances, worst relative error {worst:.1e}"))
}

fn router_recovery() -> Verdict {
    let spec = heterogeneous_preset();
    ensure(
        spec.teachers.len() == 5 && spec.topics.len() == 3 && spec.n_train == 2000 && spec.n_eval == 500,
        || "world shape differs from 5 teachers / 3 topics / 2000+500 prompts".into(),
    )?;
    let world = make_world(spec.clone().with_noise(0.0), 0).map_err(|e| e.to_string())?;
    let run = end_to_end(&world, &EndToEndConfig::default()).map_err(|e| e.to_string())?;
    let hit1 = run.comparison.router_hit_at[&1];
    let hit3 = run.comparison.router_hit_at[&3];
    ensure(hit1 >= 0.90 && hit3 >= 0.98, || format!("zero noise Hit@1 {hit1:.3}, Hit@3 {hit3:.3}"))?;

    let samples = 4000;
    let (noise, oracle) = calibrate_noise(&spec, 0, 0.8, samples).map_err(|e| e.to_string())?;
    ensure((oracle.accuracy - 0.8).abs() <= 0.02, || {
        format!("calibration reached Bayes accuracy {:.3}", oracle.accuracy)
    })?;
    let world = make_world(spec.with_noise(noise), 0).map_err(|e| e.to_string())?;
    let cfg = EndToEndConfig {
        bayes_samples_per_topic: samples,
        ..EndToEndConfig::default()
    };
    let run = end_to_end(&world, &cfg).map_err(|e| e.to_string())?;
    let trained = run.comparison.router_hit_at[&1];
    let bayes = run.comparison.bayes_hit_at_1.ok_or("no Bayes Hit@1")?;
    ensure((trained - bayes).abs() <= 0.05, || {
        format!("noise {noise:.3}: router Hit@1 {trained:.3} vs Bayes {bayes:.3}")
    })?;
    Ok(format!(
        "zero noise Hit@1 {hit1:.3} Hit@3 {hit3:.3}; noise {noise:.3} (Bayes accuracy {:.3}): router Hit@1 {trained:.3} vs Bayes {bayes:.3}",
        oracle.accuracy
    ))
}

fn strategy_ordering() -> Verdict {
    let mut lines = Vec::new();
    for seed in 0..10 {
        let world = make_world(heterogeneous_preset(), seed).map_err(|e| e.to_string())?;
        let c = end_to_end(&world, &EndToEndConfig::default())
            .map_err(|e| e.to_string())?
            .comparison;
        let get = |k| c.mean_reward(k).ok_or(format!("no {k} row"));
        let (o, p, car, mix) = (
            get(StrategyKind::Oracle)?,
            get(StrategyKind::Persyn)?,
            get(StrategyKind::Car)?,
            get(StrategyKind::Mix)?,
        );
        ensure(o >= p && p >= car && car >= mix, || {
            format!("seed {seed}: oracle {o:.4} persyn {p:.4} car {car:.4} mix {mix:.4}")
        })?;
        if seed == 0 {
            lines.push(format!("seed 0: oracle {o:.3} >= persyn {p:.3} >= car {car:.3} >= mix {mix:.3}"));
        }
    }
    let mut worst_gap = 0.0f64;
    for seed in 0..3 {
        let world = make_world(separable_preset(), seed).map_err(|e| e.to_string())?;
        let c = end_to_end(&world, &EndToEndConfig::default())
            .map_err(|e| e.to_string())?
            .comparison;
        let o = c.mean_reward(StrategyKind::Oracle).ok_or("no oracle row")?;
        let p = c.mean_reward(StrategyKind::Persyn).ok_or("no persyn row")?;
        let gap = (o - p) / o.abs();
        ensure(gap <= 0.02, || format!("separable seed {seed}: persyn {p:.4} vs oracle {o:.4}"))?;
        worst_gap = worst_gap.max(gap);
    }
    lines.push("ordering holds on 10 seeds".into());
    lines.push(format!("separable worlds: persyn within {:.2}% of oracle", 100.0 * worst_gap));
    Ok(lines.join("; "))
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap()
}

fn pool_on(server: &MockServer, specs: &[(String, f64, CotStyle)]) -> TeacherPool {
    TeacherPool::new(
        specs
            .iter()
            .map(|(id, size, cot)| {
                TeacherModel::new(id.clone(), "fam", *size, *cot)
                    .with_endpoint(EndpointBinding::new(server.base_url(), id.clone()))
            })
            .collect(),
    )
    .unwrap()
}

fn efficiency() -> Verdict {
    let rt = runtime();
    let server = rt
        .block_on(MockServer::start(MockConfig {
            behavior: MockBehavior::Template,
            ..MockConfig::default()
        }))
        .map_err(|e| e.to_string())?;
    let specs: Vec<(String, f64, CotStyle)> = (0..20)
        .map(|i| (format!("m{i:02}"), 1.0 + i as f64, CotStyle::ShortCoT))
        .collect();
    let pool = pool_on(&server, &specs);
    let prompts: Vec<Prompt> = (0..100)
        .map(|i| Prompt::new(format!("k{i:03}"), format!("prompt number {i}"), Split::Synthesis))
        .collect();
    let cfg = RunConfig::default();
    let orch = Orchestrator::new(OrchestratorOptions::from_config(&cfg)).map_err(|e| e.to_string())?;

    let records = rt
        .block_on(orch.gather_parallel(&prompts, &pool, &cfg))
        .map_err(|e| e.to_string())?;
    ensure(records.iter().all(|r| r.is_complete()), || "gather left gaps".into())?;
    let select_calls = server.stats().calls_to("chat");
    server.reset_stats();

    let alloc = assign_mix(&prompts, &pool, 0).map_err(|e| e.to_string())?;
    let out = rt
        .block_on(orch.generate_routed(&alloc, &pool, &prompts, None, None, &cfg))
        .map_err(|e| e.to_string())?;
    let stats = server.stats();
    let route_calls = stats.calls_to("chat");
    ensure(out.generations.len() == 100, || format!("{} generations", out.generations.len()))?;
    for (t, &count) in alloc.counts().iter().enumerate() {
        let calls = stats.calls_to_model("chat", &pool.teachers()[t].id);
        ensure(calls == count as u64, || format!("teacher {t}: {calls} calls for {count} prompts"))?;
    }
    ensure(select_calls == 2000 && route_calls == 100, || {
        format!("generate-then-select {select_calls} calls, route-then-generate {route_calls}")
    })?;
    Ok(format!("route-then-generate {route_calls} calls vs generate-then-select {select_calls}"))
}

fn rejection_policy() -> Verdict {
    let modulus = 4;
    let rt = runtime();
    let server = rt
        .block_on(MockServer::start(MockConfig {
            behavior: MockBehavior::Math { modulus },
            ..MockConfig::default()
        }))
        .map_err(|e| e.to_string())?;
    let specs = vec![
        ("short-1.5b".to_string(), 1.5, CotStyle::ShortCoT),
        ("short-7b".to_string(), 7.0, CotStyle::ShortCoT),
        ("long-14b".to_string(), 14.0, CotStyle::LongCoT),
        ("short-72b".to_string(), 72.0, CotStyle::ShortCoT),
        ("long-671b".to_string(), 671.0, CotStyle::LongCoT),
    ];
    let expected_n = [4u32, 4, 2, 2, 2];
    let pool = pool_on(&server, &specs);
    let prompts: Vec<Prompt> = (0..1000)
        .map(|i| {
            Prompt::new(format!("m{i:04}"), format!("Compute item {i}."), Split::Synthesis)
                .with_reference((i % modulus).to_string())
        })
        .collect();
    let cfg = RunConfig::default();
    let orch = Orchestrator::new(OrchestratorOptions::from_config(&cfg)).map_err(|e| e.to_string())?;
    let alloc = assign_mix(&prompts, &pool, 11).map_err(|e| e.to_string())?;
    let policy = RejectionPolicy::default();
    let out = rt
        .block_on(orch.generate_routed(&alloc, &pool, &prompts, Some(&policy), Some(&ExactMatchChecker), &cfg))
        .map_err(|e| e.to_string())?;
    ensure(out.failures.is_empty() && out.generations.len() == 1000, || {
        format!("{} generations, {} failures", out.generations.len(), out.failures.len())
    })?;

    let by_id: BTreeMap<&str, &Prompt> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut violations = 0;
    let mut count_errors = 0;
    let mut with_correct = 0;
    let mut seen_n: BTreeMap<u32, usize> = BTreeMap::new();
    for g in &out.generations {
        let p = by_id[g.prompt_id.as_str()];
        let t = &specs[g.teacher_index];
        let want_n = expected_n[g.teacher_index];
        *seen_n.entry(g.n_samples).or_default() += 1;
        if g.n_samples != want_n || g.sample_correct.len() != want_n as usize {
            count_errors += 1;
            continue;
        }
        let reference: u64 = p.reference_answer.as_deref().unwrap().parse().unwrap();
        let truth: Vec<bool> = (0..want_n)
            .map(|s| math_answer(&t.0, &p.text, s, modulus) == reference)
            .collect();
        if truth.iter().any(|&c| c) {
            with_correct += 1;
            if !truth[g.kept_sample] || g.verified != Some(true) {
                violations += 1;
            }
        }
        let kept_answer = math_answer(&t.0, &p.text, g.kept_sample as u32, modulus);
        if !g.text.contains(&format!("\\boxed{{{kept_answer}}}")) {
            violations += 1;
        }
    }
    let chat_calls = server.stats().calls_to("chat");
    ensure(count_errors == 0 && violations == 0 && chat_calls == 1000, || {
        format!("{count_errors} sample-count errors, {violations} keep-rule violations, {chat_calls} calls")
    })?;
    ensure(seen_n.len() == 2 && alloc.counts().iter().all(|&c| c > 0), || {
        "not every teacher class was exercised".into()
    })?;
    Ok(format!(
        "1000 prompts, sample counts {seen_n:?}, 0 count errors, 0 violations over {with_correct} prompts with a correct sample"
    ))
}

fn determinism() -> Verdict {
    let mocks = Mocks::start();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inputs = dir.path().join("inputs");
    std::fs::create_dir_all(&inputs).map_err(|e| e.to_string())?;
    pipeline::write_inputs(&mocks, &inputs);
    let bin = Path::new(env!("CARGO_BIN_EXE_teachroute"));
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    pipeline::run_all(bin, &inputs, &a);
    pipeline::run_all(bin, &inputs, &b);
    let (sa, sb) = (pipeline::snapshot(&a), pipeline::snapshot(&b));
    ensure(sa.keys().eq(sb.keys()), || "runs produced different file sets".into())?;
    let differing: Vec<String> = sa
        .iter()
        .filter(|(k, v)| sb[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure(differing.is_empty(), || format!("files differ: {}", differing.join(", ")))?;
    ensure(sa.len() >= 30, || format!("only {} files", sa.len()))?;
    let bytes: usize = sa.values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) byte-identical across two runs", sa.len()))
}

fn invariant_suite() -> Verdict {
    let mut parts = Vec::new();
    for (name, check) in invariants::ALL {
        let ran = check().map_err(|e| format!("{name}: {e}"))?;
        ensure(ran >= CASES, || format!("{name}: {ran} cases"))?;
        parts.push(format!("{name} ({ran})"));
    }
    Ok(parts.join(", "))
}

#[test]
fn acceptance() {
    let s = Duration::from_secs;
    let results = [
        criterion(1, "reward exactness", s(1), rewards_exact),
        criterion(2, "pair-count arithmetic", s(10), pair_counts),
        criterion(3, "Bradley-Terry gradient check", s(5), gradient_check),
        criterion(4, "router recovery on synthetic worlds", s(60), router_recovery),
        criterion(5, "strategy ordering on synthetic worlds", s(300), strategy_ordering),
        criterion(6, "route-then-generate call count", s(30), efficiency),
        criterion(7, "rejection-sampling policy", s(30), rejection_policy),
        criterion(8, "determinism of every stage", s(120), determinism),
        criterion(9, "invariant property suite", s(300), invariant_suite),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
