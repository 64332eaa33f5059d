use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lever_cli::commands::{cmd_eval, cmd_explain, cmd_finetune, cmd_train, rank_table, ExplainRequest};
use lever_cli::config::{load_config, RunConfig};
use lever_cli::CliError;
use lever_core::env::Fidelity;
use lever_core::shap::Estimator;

#[derive(Parser)]
#[command(name = "lever", version, about = "Train, evaluate and explain lever-manipulation policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Coarse,
    Fine,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    DeepRescale,
    Permutation,
    Exact,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from scratch on the coarse simulator.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune a checkpoint on the fine simulator.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run greedy test episodes and write error trajectories and episode logs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        env: EnvArg,
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: <log_dir>/eval_<env>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Explain one of five logged episodes using the other four as background.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1..)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        explained: usize,
        #[arg(long, value_enum, default_value = "deep-rescale")]
        estimator: EstimatorArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep at most this many background rows (0 keeps all).
        #[arg(long)]
        background_max: Option<usize>,
        #[arg(long)]
        permutations: Option<usize>,
    },
}

fn optional_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed } => {
            let mut config = load_config(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let out = cmd_train(&config)?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("report: {}", out.report_csv.display());
        }
        Command::Finetune { config, checkpoint } => {
            let config = load_config(&config)?;
            let out = cmd_finetune(&config, &checkpoint)?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("report: {}", out.report_csv.display());
        }
        Command::Eval { checkpoint, env, scenarios, episodes, config, out } => {
            let config = optional_config(config.as_ref())?;
            let (fidelity, name) = match env {
                EnvArg::Coarse => (Fidelity::Coarse, "coarse"),
                EnvArg::Fine => (Fidelity::Fine, "fine"),
            };
            let out_dir = out.unwrap_or_else(|| config.paths.log_dir.join(format!("eval_{name}")));
            let result = cmd_eval(&config, &checkpoint, fidelity, scenarios.as_deref(), episodes, &out_dir)?;
            println!(
                "success rate: {:.3} over {} episodes",
                result.summary.success_rate,
                result.summary.runs.len()
            );
            println!("errors: {}", result.errors_csv.display());
            for log in &result.episode_logs {
                println!("log: {}", log.display());
            }
        }
        Command::Explain { checkpoint, logs, explained, estimator, config, out, background_max, permutations } => {
            let config = optional_config(config.as_ref())?;
            let out_dir = out.unwrap_or_else(|| config.paths.log_dir.join("explain"));
            let estimator = match estimator {
                EstimatorArg::DeepRescale => Estimator::DeepRescale,
                EstimatorArg::Permutation => Estimator::Permutation,
                EstimatorArg::Exact => Estimator::Exact,
            };
            let result = cmd_explain(&ExplainRequest {
                checkpoint: &checkpoint,
                logs: &logs,
                explained,
                estimator,
                out_dir: &out_dir,
                background_max: background_max.unwrap_or(config.explain.background_max),
                n_permutations: permutations.unwrap_or(config.explain.n_permutations),
                seed: config.seed,
            })?;
            print!("{}", rank_table(&result.ranks, 5));
            for f in &result.files {
                println!("wrote: {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
