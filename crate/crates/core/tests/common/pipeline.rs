//! Drives every CLI stage end to end against in-process mock servers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use teachroute::orchestrator::mock::{MockBehavior, MockConfig, MockServer};
use teachroute::orchestrator::EndpointBinding;
use teachroute::registry::{save_pool, save_prompts, CotStyle, StudentModel, TeacherModel, TeacherPool};
use teachroute::simlab::heterogeneous_preset;
use teachroute::{Prompt, Split};

pub struct Mocks {
    pub runtime: tokio::runtime::Runtime,
    pub text: MockServer,
    pub math: MockServer,
}

impl Mocks {
    pub fn start() -> Self {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .unwrap();
        let text = runtime
            .block_on(MockServer::start(MockConfig {
                behavior: MockBehavior::Template,
                ..MockConfig::default()
            }))
            .unwrap();
        let math = runtime
            .block_on(MockServer::start(MockConfig {
                behavior: MockBehavior::Math { modulus: 4 },
                ..MockConfig::default()
            }))
            .unwrap();
        Self { runtime, text, math }
    }
}

const TEACHERS: [(&str, &str, f64, CotStyle); 4] = [
    ("alpha-7b", "llama", 7.0, CotStyle::ShortCoT),
    ("beta-72b", "qwen", 72.0, CotStyle::ShortCoT),
    ("gamma-8b", "llama", 8.0, CotStyle::LongCoT),
    ("delta-3b", "qwen", 3.0, CotStyle::ShortCoT),
];

fn pool_on(base_url: &str) -> TeacherPool {
    TeacherPool::new(
        TEACHERS
            .iter()
            .map(|&(id, fam, size, cot)| {
                TeacherModel::new(id, fam, size, cot).with_endpoint(EndpointBinding::new(base_url, id))
            })
            .collect(),
    )
    .unwrap()
}

fn prompts() -> Vec<Prompt> {
    let subjects = ["algebra", "poems", "cells", "history", "code"];
    (0..40)
        .map(|i| {
            let s = subjects[i % subjects.len()];
            Prompt::new(format!("q{i:03}"), format!("Question {i} about {s}: explain {s} step {}", i * 7 % 11), Split::RouterTrain)
                .with_reference((i % 4).to_string())
        })
        .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) {
    std::fs::write(path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
}

/// Writes the shared inputs for a pipeline run into `dir`.
pub fn write_inputs(mocks: &Mocks, dir: &Path) {
    save_pool(&pool_on(&mocks.text.base_url()), &dir.join("pool.json")).unwrap();
    save_pool(&pool_on(&mocks.math.base_url()), &dir.join("pool_math.json")).unwrap();
    save_prompts(&prompts(), &dir.join("prompts.jsonl")).unwrap();
    let mut student = StudentModel::new("student-1b", "llama", 1.0).unwrap();
    student.logprob_endpoint = Some(EndpointBinding::new(mocks.text.base_url(), "student-1b"));
    write_json(&dir.join("student.json"), &student);
    write_json(&dir.join("reward.json"), &EndpointBinding::new(mocks.text.base_url(), "rm"));
    let mut world = heterogeneous_preset();
    world.n_train = 300;
    world.n_eval = 100;
    world.n_synthesis = 200;
    write_json(&dir.join("world.json"), &world);
}

fn run(bin: &Path, out: &Path, name: &str, args: &[&str]) {
    let output = Command::new(bin).args(args).current_dir(out).output().unwrap();
    assert!(
        output.status.success(),
        "stage {name} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    std::fs::write(out.join(format!("stdout_{name}.txt")), &output.stdout).unwrap();
}

/// Runs every stage with inputs from `inputs`, writing outputs into `out`.
pub fn run_all(bin: &Path, inputs: &Path, out: &Path) {
    std::fs::create_dir_all(out).unwrap();
    let i = |f: &str| inputs.join(f).to_str().unwrap().to_string();
    let (pool, pool_math, prompts, student) = (i("pool.json"), i("pool_math.json"), i("prompts.jsonl"), i("student.json"));
    let stages: Vec<(&str, Vec<String>)> = vec![
        ("gather", svec(&["gather", "--pool", &pool, "--prompts", &prompts, "--out", "responses.jsonl"])),
        ("score", svec(&["score", "--student", &student, "--responses", "responses.jsonl", "--out", "boards.jsonl", "--reward-endpoint", &i("reward.json")])),
        ("gather_math", svec(&["gather", "--pool", &pool_math, "--prompts", &prompts, "--out", "math_responses.jsonl"])),
        ("score_math", svec(&["score", "--student", &student, "--responses", "math_responses.jsonl", "--out", "math_boards.jsonl", "--exact-match"])),
        ("pairs", svec(&["pairs", "--boards", "boards.jsonl", "--pool", &pool, "--out", "pairs.jsonl", "--symmetrize", "--seed", "7", "--eval-fraction", "0.25", "--eval-out", "eval_pairs.jsonl"])),
        ("train", svec(&["train-router", "--pairs", "pairs.jsonl", "--prompts", &prompts, "--out", "router.json", "--seed", "7", "--dim", "64", "--epochs", "5", "--eval-boards", "boards.jsonl", "--eval-pairs", "eval_pairs.jsonl"])),
        ("route", svec(&["route", "--router", "router.json", "--pool", &pool, "--prompts", &prompts])),
        ("eval_router", svec(&["eval-router", "--router", "router.json", "--boards", "boards.jsonl", "--prompts", &prompts, "--k", "1,2,3"])),
        ("assign_strong", svec(&["assign", "--strategy", "strong", "--teacher", "beta-72b", "--prompts", &prompts, "--pool", &pool, "--out", "alloc_strong.jsonl"])),
        ("assign_mix", svec(&["assign", "--strategy", "mix", "--seed", "7", "--prompts", &prompts, "--pool", &pool, "--out", "alloc_mix.jsonl"])),
        ("assign_family", svec(&["assign", "--strategy", "family-strong", "--student", &student, "--prompts", &prompts, "--pool", &pool, "--out", "alloc_family.jsonl"])),
        ("assign_car", svec(&["assign", "--strategy", "car", "--boards", "boards.jsonl", "--prompts", &prompts, "--pool", &pool, "--out", "alloc_car.jsonl"])),
        ("assign_persyn", svec(&["assign", "--strategy", "persyn", "--router", "router.json", "--prompts", &prompts, "--pool", &pool, "--out", "alloc_persyn.jsonl"])),
        ("assign_oracle", svec(&["assign", "--strategy", "oracle", "--boards", "boards.jsonl", "--prompts", &prompts, "--pool", &pool, "--out", "alloc_oracle.jsonl"])),
        ("generate", svec(&["generate", "--allocation", "alloc_persyn.jsonl", "--pool", &pool, "--prompts", &prompts, "--out", "generations.jsonl"])),
        ("generate_math", svec(&["generate", "--allocation", "alloc_mix.jsonl", "--pool", &pool_math, "--prompts", &prompts, "--rejection", "--exact-match", "--out", "math_generations.jsonl"])),
        ("assemble", svec(&["assemble", "--generations", "generations.jsonl", "--allocation", "alloc_persyn.jsonl", "--pool", &pool, "--prompts", &prompts, "--boards", "boards.jsonl", "--run-id", "r1", "--seed", "7", "--out", "sft.jsonl"])),
        ("assemble_math", svec(&["assemble", "--generations", "math_generations.jsonl", "--allocation", "alloc_mix.jsonl", "--pool", &pool, "--prompts", &prompts, "--run-id", "r1", "--seed", "7", "--out", "math_sft.jsonl"])),
        ("report", svec(&["report", "--allocation", "alloc_persyn.jsonl", "--pool", &pool, "--json", "report.json"])),
        ("swap", svec(&["swap", "--allocation", "alloc_mix.jsonl", "--pool", &pool, "--filter", "long-cot", "--to", "alpha-7b", "--out", "alloc_swapped.jsonl"])),
        ("simlab", svec(&["simlab", "run", "--spec", &i("world.json"), "--seed", "3", "--bayes-samples", "200", "--out", "simlab"])),
    ];
    for (name, args) in &stages {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        run(bin, out, name, &args);
    }
}

fn svec(args: &[&str]) -> Vec<String> {
    args.iter().map(|s| s.to_string()).collect()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
