use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use teachroute::dataset::{self, Provenance, TeacherFilter};
use teachroute::error::{Error, Result};
use teachroute::orchestrator::mock::{MockConfig, MockServer};
use teachroute::orchestrator::{self, EndpointBinding, Orchestrator, OrchestratorOptions, QualitySource, RejectionPolicy};
use teachroute::registry::{self, RunConfig};
use teachroute::reward::{self, AnswerChecker, CommandChecker, ExactMatchChecker};
use teachroute::router::{self, EvalData, FeaturizerConfig, TrainConfig};
use teachroute::simlab;
use teachroute::strategies::{self, StrategyKind, StrategySpec};
use teachroute::{io, pairs};

#[derive(Parser)]
#[command(name = "teachroute", version, about = "Per-prompt teacher routing for synthetic SFT data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => registry::load_config(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct VerifierArgs {
    /// Built-in exact-match answer checker.
    #[arg(long, conflicts_with = "verifier_cmd")]
    exact_match: bool,
    /// External checker program followed by its arguments.
    #[arg(long, num_args = 1.., value_name = "PROGRAM")]
    verifier_cmd: Option<Vec<String>>,
}

impl VerifierArgs {
    fn checker(&self) -> Option<Box<dyn AnswerChecker>> {
        if let Some(cmd) = &self.verifier_cmd {
            let (program, args) = cmd.split_first()?;
            return Some(Box::new(CommandChecker::new(program.clone(), args.to_vec())));
        }
        self.exact_match.then(|| Box::new(ExactMatchChecker) as Box<dyn AnswerChecker>)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ask every teacher to answer every prompt.
    Gather {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Score gathered responses into per-prompt scoreboards.
    Score {
        /// Student model (JSON) with a logprob endpoint.
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reward endpoint binding (JSON). Without it, a verifier is required.
        #[arg(long)]
        reward_endpoint: Option<PathBuf>,
        #[command(flatten)]
        verifier: VerifierArgs,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Build pairwise preference data from scoreboards.
    Pairs {
        #[arg(long)]
        boards: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        symmetrize: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hold out this fraction of prompts into `--eval-out`.
        #[arg(long, requires = "eval_out")]
        eval_fraction: Option<f64>,
        #[arg(long)]
        eval_out: Option<PathBuf>,
    },
    /// Train the router on a pair dataset.
    TrainRouter {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        /// Held-out scoreboards for the Hit@k report.
        #[arg(long)]
        eval_boards: Option<PathBuf>,
        /// Held-out pairs for the accuracy report.
        #[arg(long)]
        eval_pairs: Option<PathBuf>,
    },
    /// Route prompts with a trained router and print one line per prompt.
    Route {
        #[arg(long)]
        router: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
    },
    /// Hit@k of a router against scoreboards.
    EvalRouter {
        #[arg(long)]
        router: PathBuf,
        #[arg(long)]
        boards: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3")]
        k: Vec<usize>,
    },
    /// Assign prompts to teachers with a strategy.
    Assign {
        #[arg(long)]
        strategy: StrategyKind,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Teacher id for `strong`.
        #[arg(long)]
        teacher: Option<String>,
        /// Seed for `mix`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Student (JSON) for `family-strong`.
        #[arg(long)]
        student: Option<PathBuf>,
        /// Scoreboards: calibration for `car`, ground truth for `oracle`.
        #[arg(long)]
        boards: Option<PathBuf>,
        /// Router checkpoint for `persyn`.
        #[arg(long)]
        router: Option<PathBuf>,
    },
    /// Generate responses for routed prompts.
    Generate {
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        /// Rejection sampling against a verifier (math mode).
        #[arg(long)]
        rejection: bool,
        #[command(flatten)]
        verifier: VerifierArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Join generations into the SFT dataset.
    Assemble {
        #[arg(long)]
        generations: PathBuf,
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        boards: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        run_id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Allocation ratios by teacher, family and CoT style.
    Report {
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Reassign prompts of matching teachers to one target teacher.
    Swap {
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        /// long-cot | short-cot | family:NAME | ids:A,B | size-at-least:N | size-below:N
        #[arg(long)]
        filter: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic-world experiments.
    Simlab {
        #[command(subcommand)]
        command: SimlabCommand,
    },
    /// Run the deterministic mock model server.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: SocketAddr,
        /// Mock configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SimlabCommand {
    /// Build a world, train a router, compare every strategy.
    Run {
        /// World spec (JSON).
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// Built-in world: heterogeneous | separable.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Monte Carlo samples per topic for the Bayes-oracle row.
        #[arg(long, default_value_t = 0)]
        bayes_samples: usize,
    },
}

fn parse_filter(s: &str) -> Result<TeacherFilter> {
    let (kind, value) = s.split_once(':').unwrap_or((s, ""));
    let number = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("filter `{s}` needs a number")))
    };
    match kind {
        "long-cot" => Ok(TeacherFilter::LongCot),
        "short-cot" => Ok(TeacherFilter::ShortCot),
        "family" => Ok(TeacherFilter::Family(value.to_string())),
        "ids" => Ok(TeacherFilter::Ids(value.split(',').map(str::to_string).collect())),
        "size-at-least" => Ok(TeacherFilter::SizeAtLeast(number(value)?)),
        "size-below" => Ok(TeacherFilter::SizeBelow(number(value)?)),
        _ => Err(Error::InvalidConfig(format!("unknown filter `{s}`"))),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))
}

fn orchestrator(cfg: &RunConfig) -> Result<Orchestrator> {
    Orchestrator::new(OrchestratorOptions::from_config(cfg))
}

fn require<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidConfig(format!("{what} is required")))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::parse("stdout", e))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gather {
            pool,
            prompts,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let pool = registry::load_pool(&pool)?;
            let prompts = registry::load_prompts(&prompts)?;
            let orch = orchestrator(&cfg)?;
            let records = runtime()?.block_on(orch.gather_parallel(&prompts, &pool, &cfg))?;
            orchestrator::save_parallel(&records, &out)?;
            let gaps: usize = records.iter().map(|r| r.gaps().count()).sum();
            eprintln!(
                "gathered {} prompts x {} teachers, {gaps} gap(s), {} request(s)",
                records.len(),
                pool.len(),
                orch.requests_sent()
            );
        }
        Command::Score {
            student,
            responses,
            out,
            reward_endpoint,
            verifier,
            config,
        } => {
            let cfg = config.load()?;
            let student = registry::load_student(&student)?;
            let records = orchestrator::load_parallel(&responses)?;
            let binding: Option<EndpointBinding> = reward_endpoint.as_deref().map(io::read_json).transpose()?;
            let checker = verifier.checker();
            let source = match (&binding, &checker) {
                (Some(ep), _) => QualitySource::RewardModel(ep),
                (None, Some(c)) => QualitySource::Verifier(c.as_ref()),
                (None, None) => {
                    return Err(Error::InvalidConfig(
                        "give --reward-endpoint or a verifier (--exact-match / --verifier-cmd)".into(),
                    ))
                }
            };
            let orch = orchestrator(&cfg)?;
            let outcome = runtime()?.block_on(orch.score_records(&records, &student, source, &cfg))?;
            reward::save_boards(&outcome.boards, &out)?;
            eprintln!("scored {} prompt(s), skipped {}", outcome.boards.len(), outcome.skipped.len());
            for s in &outcome.skipped {
                eprintln!("  skipped {}: {}", s.prompt_id, s.reason);
            }
        }
        Command::Pairs {
            boards,
            pool,
            out,
            symmetrize,
            seed,
            eval_fraction,
            eval_out,
        } => {
            let pool = registry::load_pool(&pool)?;
            let boards = reward::load_boards(&boards)?;
            let ds = pairs::build_pair_dataset(&boards, &pool.fingerprint(), symmetrize, seed)?;
            match (eval_fraction, eval_out) {
                (Some(f), Some(eval_out)) => {
                    let (train, eval) = pairs::split_pairs(&ds, f, seed)?;
                    pairs::save_pairs(&train, &out)?;
                    pairs::save_pairs(&eval, &eval_out)?;
                    eprintln!("{} train pair(s), {} eval pair(s)", train.len(), eval.len());
                }
                _ => {
                    pairs::save_pairs(&ds, &out)?;
                    eprintln!("{} pair(s)", ds.len());
                }
            }
        }
        Command::TrainRouter {
            pairs: pairs_path,
            prompts,
            out,
            seed,
            epochs,
            learning_rate,
            dim,
            eval_boards,
            eval_pairs,
        } => {
            let ds = pairs::load_pairs(&pairs_path)?;
            let texts = router::prompt_texts(&registry::load_prompts(&prompts)?);
            let mut cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.learning_rate = lr;
            }
            let mut featurizer = FeaturizerConfig::default();
            if let Some(d) = dim {
                featurizer.dim = d;
            }
            let boards = eval_boards.as_deref().map(reward::load_boards).transpose()?;
            let held_pairs = eval_pairs.as_deref().map(pairs::load_pairs).transpose()?;
            let eval = match (&boards, &held_pairs) {
                (None, None) => None,
                (b, p) => Some(EvalData {
                    pairs: p.as_ref(),
                    boards: b.as_deref().unwrap_or_default(),
                }),
            };
            let (model, report) = router::train(&ds, &texts, &featurizer, &cfg, eval)?;
            router::save_router(&model, &out)?;
            print_json(&report)?;
        }
        Command::Route { router, pool, prompts } => {
            let model = router::load_router(&router)?;
            let pool = registry::load_pool(&pool)?;
            model.check_fingerprint(&pool.fingerprint())?;
            for p in registry::load_prompts(&prompts)? {
                let t = router::route(&model, &p)?;
                println!("{}\t{}", p.id, pool.teachers()[t].id);
            }
        }
        Command::EvalRouter {
            router,
            boards,
            prompts,
            k,
        } => {
            let model = router::load_router(&router)?;
            let boards = reward::load_boards(&boards)?;
            let texts = router::prompt_texts(&registry::load_prompts(&prompts)?);
            for k in k {
                println!("hit@{k}\t{:.6}", router::hit_at_k(&model, &boards, &texts, k)?);
            }
        }
        Command::Assign {
            strategy,
            prompts,
            pool,
            out,
            teacher,
            seed,
            student,
            boards,
            router,
        } => {
            let pool = registry::load_pool(&pool)?;
            let prompts = registry::load_prompts(&prompts)?;
            let student = student.as_deref().map(registry::load_student).transpose()?;
            let boards = boards.as_deref().map(reward::load_boards).transpose()?;
            let router = router.as_deref().map(router::load_router).transpose()?;
            let spec = match strategy {
                StrategyKind::Strong => StrategySpec::Strong {
                    teacher_id: require(teacher.as_deref(), "--teacher")?,
                },
                StrategyKind::Mix => StrategySpec::Mix { seed },
                StrategyKind::FamilyStrong => StrategySpec::FamilyStrong {
                    student: require(student.as_ref(), "--student")?,
                },
                StrategyKind::Car => StrategySpec::Car {
                    calibration: require(boards.as_deref(), "--boards")?,
                },
                StrategyKind::Persyn => StrategySpec::Persyn {
                    router: require(router.as_ref(), "--router")?,
                },
                StrategyKind::Oracle => StrategySpec::Oracle {
                    boards: require(boards.as_deref(), "--boards")?,
                },
            };
            let alloc = strategies::assign(&spec, &prompts, &pool)?;
            strategies::save_allocation(&alloc, &pool, &out)?;
            print!("{}", dataset::report_table(&dataset::report(&alloc, &pool)?));
        }
        Command::Generate {
            allocation,
            pool,
            prompts,
            rejection,
            verifier,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let pool = registry::load_pool(&pool)?;
            let alloc = strategies::load_allocation(&allocation, &pool)?;
            let prompts = registry::load_prompts(&prompts)?;
            let policy = rejection.then(RejectionPolicy::default);
            let checker = verifier.checker();
            let orch = orchestrator(&cfg)?;
            let outcome = runtime()?.block_on(orch.generate_routed(
                &alloc,
                &pool,
                &prompts,
                policy.as_ref(),
                checker.as_deref(),
                &cfg,
            ))?;
            orchestrator::save_generations(&outcome.generations, &out)?;
            eprintln!(
                "{} generation(s), {} failure(s), {} request(s)",
                outcome.generations.len(),
                outcome.failures.len(),
                orch.requests_sent()
            );
            for f in &outcome.failures {
                eprintln!("  failed {} (teacher {}): {}", f.prompt_id, f.teacher_index, f.error);
            }
        }
        Command::Assemble {
            generations,
            allocation,
            pool,
            prompts,
            out,
            boards,
            run_id,
            seed,
        } => {
            let pool = registry::load_pool(&pool)?;
            let alloc = strategies::load_allocation(&allocation, &pool)?;
            let prompts = registry::load_prompts(&prompts)?;
            let gens = orchestrator::load_generations(&generations)?;
            let boards = boards.as_deref().map(reward::load_boards).transpose()?;
            let records = dataset::assemble(
                &gens,
                &alloc,
                &pool,
                &prompts,
                boards.as_deref(),
                &Provenance { run_id, seed },
            )?;
            dataset::save_sft(&records, &out)?;
            eprintln!("{} record(s)", records.len());
        }
        Command::Report { allocation, pool, json } => {
            let pool = registry::load_pool(&pool)?;
            let alloc = strategies::load_allocation(&allocation, &pool)?;
            let report = dataset::report(&alloc, &pool)?;
            print!("{}", dataset::report_table(&report));
            if let Some(path) = json {
                io::write_json(&path, &report)?;
            }
        }
        Command::Swap {
            allocation,
            pool,
            filter,
            to,
            out,
        } => {
            let pool = registry::load_pool(&pool)?;
            let alloc = strategies::load_allocation(&allocation, &pool)?;
            let swapped = dataset::swap_experiment(&alloc, &pool, &parse_filter(&filter)?, &to)?;
            strategies::save_allocation(&swapped, &pool, &out)?;
            print!("{}", dataset::report_table(&dataset::report(&swapped, &pool)?));
        }
        Command::Simlab { command } => match command {
            SimlabCommand::Run {
                spec,
                preset,
                seed,
                out,
                bayes_samples,
            } => {
                let spec = match (spec, preset) {
                    (Some(p), _) => simlab::load_world_spec(&p)?,
                    (None, Some(name)) => simlab::preset(&name)?,
                    (None, None) => simlab::heterogeneous_preset(),
                };
                let world = simlab::make_world(spec, seed)?;
                let cfg = simlab::EndToEndConfig {
                    bayes_samples_per_topic: bayes_samples,
                    ..Default::default()
                };
                let run = simlab::end_to_end(&world, &cfg)?;
                simlab::write_run(&world, &run, &out)?;
                print!("{}", run.comparison.table());
            }
        },
        Command::ServeMock { addr, config } => {
            let cfg: MockConfig = match config {
                Some(p) => io::read_json(&p)?,
                None => MockConfig::default(),
            };
            runtime()?.block_on(async {
                let mut server = MockServer::bind(addr, cfg).await?;
                println!("mock server listening on {}", server.base_url());
                let _ = tokio::signal::ctrl_c().await;
                server.shutdown();
                server.join().await;
                Ok::<_, Error>(())
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.code()).unwrap_or(1))
        }
    }
}
