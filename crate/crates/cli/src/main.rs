use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mqa_core::dataset::Difficulty;
use mqa_core::harness::{self, parse_difficulty_filter, AccuracyReport, Arm, RunConfig};
use mqa_core::par::Exec;
use mqa_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "mqa",
    version,
    about = "Manipulation question answering experiments"
)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single-worker mode.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scenes, questions and the manifest.
    GenDataset,
    /// Train DQN policies.
    Train {
        /// rg, rl, rgrl or all.
        #[arg(long)]
        arm: Option<String>,
    },
    /// Train the learned answerer on a frozen policy's rollouts.
    TrainQa {
        /// random, rg, rl, rgrl or all.
        #[arg(long)]
        arm: Option<String>,
    },
    /// Evaluate policies on the test split.
    Eval {
        /// random, rg, rl, rgrl or all (all writes the comparison table).
        #[arg(long)]
        arm: Option<String>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Evaluate the random policy.
    Baseline {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Render a stored episode trace as SVG frames and an action log.
    Replay {
        /// A trace file, or a JSONL file of traces such as eval's traces.jsonl.
        #[arg(long)]
        trace: PathBuf,
        /// Line of a JSONL file to render.
        #[arg(long)]
        index: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// oracle or learned.
    #[arg(long)]
    qa: Option<String>,
    /// easy, medium, hard or all.
    #[arg(long)]
    difficulty: Option<String>,
}

enum Arms {
    One(Arm),
    All,
}

fn parse_arms(s: Option<&str>, default: Arm) -> Result<Arms, Error> {
    match s {
        None => Ok(Arms::One(default)),
        Some("all") => Ok(Arms::All),
        Some(s) => s.parse().map(Arms::One).map_err(Error::Usage),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn apply_eval_args(cfg: &mut RunConfig, args: &EvalArgs) -> Result<(), Error> {
    if let Some(qa) = &args.qa {
        cfg.qa = qa.parse().map_err(Error::Usage)?;
    }
    if let Some(d) = &args.difficulty {
        cfg.difficulty = parse_difficulty_filter(d).map_err(Error::Usage)?;
    }
    Ok(())
}

fn print_report(label: &str, r: &AccuracyReport) {
    let acc = |d| {
        r.accuracy(d)
            .map_or("-".to_string(), |a: f64| format!("{a:.4}"))
    };
    println!(
        "{label}: easy {} medium {} hard {} | questions {} | mean pushes {:.2} | mean reward {:.4}",
        acc(Difficulty::Easy),
        acc(Difficulty::Medium),
        acc(Difficulty::Hard),
        r.questions(),
        r.mean_episode_length,
        r.mean_total_reward
    );
}

fn run(cli: Cli) -> Result<(), Error> {
    let exec = if cli.serial {
        Exec::Serial
    } else {
        Exec::Parallel
    };
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenDataset => {
            let ds = harness::cmd_gen_dataset(&cfg, exec)?;
            println!(
                "wrote {} scenes to {}",
                ds.scenes.len(),
                cfg.dataset_dir().display()
            );
        }
        Command::Train { arm } => {
            let arms = match parse_arms(arm.as_deref(), cfg.arm)? {
                Arms::One(a) => vec![a],
                Arms::All => Arm::DQN.to_vec(),
            };
            for arm in arms {
                cfg.arm = arm;
                let out = harness::cmd_train(&cfg, arm, exec)?;
                let trend = harness::reward_trend(&out.log, 0.1);
                println!(
                    "{}: {} episodes, {} updates{} -> {}",
                    arm.label(),
                    out.log.len(),
                    out.updates,
                    trend.map_or(String::new(), |(a, b)| format!(
                        ", mean step reward {a:.4} (first 10%) / {b:.4} (last 10%)"
                    )),
                    cfg.train_dir(arm).display()
                );
            }
        }
        Command::TrainQa { arm } => {
            let arms = match parse_arms(arm.as_deref(), cfg.arm)? {
                Arms::One(a) => vec![a],
                Arms::All => Arm::ALL.to_vec(),
            };
            for arm in arms {
                cfg.arm = arm;
                let (_, log) = harness::cmd_train_qa(&cfg, arm, exec)?;
                if let Some(last) = log.last() {
                    println!(
                        "QA on {} rollouts: loss {:.4}, train accuracy {:.4} -> {}",
                        arm.label(),
                        last.mean_loss,
                        last.accuracy,
                        cfg.qa_dir(arm).display()
                    );
                }
            }
        }
        Command::Eval { arm, eval } => {
            apply_eval_args(&mut cfg, eval)?;
            match parse_arms(arm.as_deref(), cfg.arm)? {
                Arms::One(arm) => {
                    cfg.arm = arm;
                    let report = harness::cmd_eval(&cfg, arm, cfg.qa, exec)?;
                    print_report(arm.label(), &report);
                }
                Arms::All => {
                    let table = harness::cmd_parity(&cfg, cfg.qa, exec)?;
                    print!("{}", table.to_markdown());
                    for v in &table.ordering_violations {
                        eprintln!("warning: {v}");
                    }
                }
            }
        }
        Command::Baseline { eval } => {
            apply_eval_args(&mut cfg, eval)?;
            cfg.arm = Arm::Random;
            let report = harness::cmd_eval(&cfg, Arm::Random, cfg.qa, exec)?;
            print_report(Arm::Random.label(), &report);
        }
        Command::Replay { trace, index } => {
            let dir = cfg.out.join("replay");
            let frames = harness::cmd_replay(trace, *index, &dir)?;
            println!("wrote {frames} frames to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
