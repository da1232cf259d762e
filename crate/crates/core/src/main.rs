use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use openteam::harness::analysis::{analyze, write_analysis};
use openteam::harness::suites::{gradcheck_suite, oracle_suite, Check};
use openteam::harness::{evaluate, load_checkpoint, run_training, RunConfig};

#[derive(Parser)]
#[command(name = "openteam", version, about = "Open ad hoc teamwork learner: training, evaluation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learner and write config, metrics and checkpoints to a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and print one metric record.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        episodes: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        team_limit: u64,
        #[arg(long)]
        seed: u64,
    },
    /// Pairwise utility metrics on greedy trajectories of a GPL checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Central-difference gradient checks of every block and loss.
    Gradcheck {
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        instances: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Closed-form marginal action values against brute-force enumeration.
    Oracle {
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        instances: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn report(checks: &[Check]) -> bool {
    for c in checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!(
            "{verdict:4} {:28} instances {:5}  worst {:.3e}  tolerance {:.0e}",
            c.name, c.instances, c.worst, c.tolerance
        );
    }
    checks.iter().all(Check::passed)
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.seed = seed;
            let dir = run_training(&cfg, &out)?;
            println!("run written to {}", dir.display());
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            config,
            episodes,
            team_limit,
            seed,
        } => {
            let cfg = RunConfig::load(&config)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let record = evaluate(&ckpt, &cfg, episodes as usize, team_limit as usize, seed)?;
            println!("{}", serde_json::to_string(&record)?);
            Ok(true)
        }
        Command::Analyze { checkpoint, config, out } => {
            let cfg = RunConfig::load(&config)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let a = analyze(&ckpt, &cfg, cfg.seed)?;
            write_analysis(&a, &out)?;
            println!(
                "{} episodes, pearson(qbar, return) {:?}, pearson(c, return) {:?}",
                a.returns.len(),
                a.pearson_qbar,
                a.pearson_c
            );
            Ok(true)
        }
        Command::Gradcheck { instances, seed } => {
            let start = Instant::now();
            let checks = gradcheck_suite(seed, instances as usize)?;
            let ok = report(&checks);
            println!("{:.1}s", start.elapsed().as_secs_f64());
            Ok(ok)
        }
        Command::Oracle { instances, seed } => {
            let start = Instant::now();
            let check = oracle_suite(seed, instances as usize)?;
            let ok = report(std::slice::from_ref(&check));
            println!("{:.1}s", start.elapsed().as_secs_f64());
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
