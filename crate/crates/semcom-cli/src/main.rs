use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semcom_cli::commands::{self, Ctx};
use semcom_cli::config::{self, Overrides};

/// Multi-user semantic communication experiments: VQ-VAE transceivers,
/// split-learning recovery with layer freezing, and recovery-time costs.
#[derive(Parser)]
#[command(name = "semcom", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train and checkpoint every configured transceiver.
    Pretrain(RunArgs),
    /// Evaluate all transmitter/receiver pairings and dump montages.
    EvalCross(RunArgs),
    /// Run one split-learning recovery session.
    Slf(RunArgs),
    /// Compute the recovery-time cost table.
    Cost(RunArgs),
    /// Grid of recovery sessions over (epsilon, lambda, ell, seed).
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Cap every dataset at N samples (overrides the config).
    #[arg(long, value_name = "N")]
    max_samples: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&RunArgs, fn(&Ctx) -> semcom_cli::Result<()>) = match &cli.cmd {
        Cmd::Pretrain(a) => (a, commands::pretrain::run),
        Cmd::EvalCross(a) => (a, commands::eval_cross::run),
        Cmd::Slf(a) => (a, commands::slf::run),
        Cmd::Cost(a) => (a, commands::cost::run),
        Cmd::Sweep(a) => (a, commands::sweep::run),
    };
    let overrides = Overrides {
        out: args.out.clone(),
        seed: args.seed,
        max_samples: args.max_samples,
    };
    let result = config::load(&args.config, &overrides)
        .and_then(Ctx::new)
        .and_then(|ctx| run(&ctx));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
