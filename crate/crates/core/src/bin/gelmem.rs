use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gelmem::config::{Command, Overrides};
use gelmem::run::main_with;

#[derive(Parser)]
#[command(name = "gelmem", version, about = "Generalized empirical likelihood estimation and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all available cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate θ from a CSV sample.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        kernel: Option<String>,
    },
    /// Monte Carlo study of the estimators on a known process.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rate experiment for approximate moment functions.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap's own usage-error status (2) would collide with the infeasibility code
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, common, flags) = match cli.command {
        Cmd::Estimate { common, data, kernel } => (
            Command::Estimate,
            common,
            Overrides { data, kernel, ..Default::default() },
        ),
        Cmd::Simulate { common, seed } => (Command::Simulate, common, Overrides { seed, ..Default::default() }),
        Cmd::Robustness { common, seed } => (Command::Robustness, common, Overrides { seed, ..Default::default() }),
    };
    let flags = Overrides {
        output: common.out,
        workers: common.workers,
        ..flags
    };
    let code = main_with(command, &common.config, &flags, std::io::stderr());
    ExitCode::from(code as u8)
}
