use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use mcem_cli::config::{Config, Overrides};
use mcem_cli::run::{execute, workers_from_env, Command};
use mcem_cli::CliError;

#[derive(Parser)]
#[command(name = "mcem", version, about = "Run seeded EM / MCEM / SAEM / MCML experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the config's `method` for each seed.
    Run(Args),
    /// Run every entry of `methods` for each seed and write a comparison table.
    Compare(Args),
}

#[derive(clap::Args)]
struct Args {
    config: PathBuf,
    /// First seed; replicates use consecutive seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<CliError>().map_or(1, CliError::exit_code))
        }
    }
}

fn real_main(cli: Cli) -> anyhow::Result<()> {
    let (command, args) = match cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Compare(a) => (Command::Compare, a),
    };
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::config("<file>", format!("{}: {e}", args.config.display())))?;
    let mut cfg = Config::parse(&text)?;
    cfg.apply(&Overrides { seed: args.seed, replicates: args.replicates, out: args.out });
    let report = execute(command, &cfg, workers_from_env()?)?;
    for s in &report.summaries {
        let theta = s.final_theta.as_ref().map(|t| format!("{t:.6?}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<14} seed {:>4}  theta {theta}  draws {:>9}  iterations {:>4}  {}",
            s.method, s.seed, s.total_draws, s.iterations, s.terminated
        );
    }
    println!("wrote {} files to {}", report.files.len(), cfg.output.dir.display());
    if let Some((o, e)) = report.first_error() {
        return Err(CliError::Engine { run: format!("{} seed {}", o.method, o.seed), source: e.clone() })
            .context("run failed; partial trajectory written");
    }
    Ok(())
}
