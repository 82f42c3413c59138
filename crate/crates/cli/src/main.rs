use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dcn::config::RunConfig;
use dcn::run::{run_ensemble, run_eval, run_train, EvalOptions, Overrides, RunError};

#[derive(Parser)]
#[command(name = "dcn", version, about = "Decoder choice networks for few-shot meta-learning")]
struct Cli {
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-task gradients (results do not depend on it).
    #[arg(long, global = true, default_value_t = default_threads())]
    threads: usize,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the number of outer iterations.
    #[arg(long, global = true)]
    iterations: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a model.
    Train {
        config: PathBuf,
        /// Resume from a checkpoint manifest.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on held-out episodes.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        inner_steps: Option<usize>,
        /// Support examples per class (overrides the config).
        #[arg(long)]
        shot: Option<usize>,
    },
    /// Greedily select a snapshot ensemble from a directory of checkpoints.
    Ensemble {
        config: PathBuf,
        #[arg(long)]
        dir: PathBuf,
    },
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load(path: &PathBuf, cli: &Cli) -> Result<RunConfig, RunError> {
    let mut cfg = RunConfig::load(path)?;
    Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        iterations: cli.iterations,
    }
    .apply(&mut cfg)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let threads = cli.threads.max(1);
    match &cli.command {
        Command::Train { config, resume } => {
            let cfg = load(config, cli)?;
            let out = run_train(&cfg, threads, resume.as_deref())?;
            if let Some(m) = out.last {
                println!(
                    "iteration {} train_loss {:.6} test_loss {:.6}",
                    m.iteration, m.train_loss, m.test_loss
                );
            }
            println!("checkpoint {}", out.final_checkpoint.display());
        }
        Command::Eval {
            config,
            checkpoint,
            episodes,
            inner_steps,
            shot,
        } => {
            let cfg = load(config, cli)?;
            let opts = EvalOptions {
                episodes: *episodes,
                inner_steps: *inner_steps,
                shot: *shot,
            };
            let report = run_eval(&cfg, checkpoint, &opts, threads)?;
            let label = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            println!("{}", report.table_row(&label));
        }
        Command::Ensemble { config, dir } => {
            let cfg = load(config, cli)?;
            let r = run_ensemble(&cfg, dir, threads)?;
            println!("members {}", r.members.join(","));
            println!(
                "best single {} loss {:.6} ± {:.6}",
                r.best_single, r.best_single_loss.mean, r.best_single_loss.ci95
            );
            println!("ensemble loss {:.6} ± {:.6}", r.ensemble_loss.mean, r.ensemble_loss.ci95);
            if let (Some(b), Some(e)) = (r.best_single_accuracy, r.ensemble_accuracy) {
                println!("accuracy single {:.4} ensemble {:.4}", b.mean, e.mean);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
