use clap::{Args, Parser, Subcommand};
use multislam_cli::{cmd_dpgo_bench, cmd_generate, cmd_pcm_bench, cmd_report, cmd_run, CliError, ExperimentConfig, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "multislam", version, about = "Multi-robot back-end experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a Manhattan graph (g2o) or a scenario bundle.
    Generate(Flags),
    /// Incremental against batch clique search as loop closures arrive.
    PcmBench(Flags),
    /// Local PGO, distributed descent (full and early-stopped) and the centralized solve.
    DpgoBench(Flags),
    /// Full pipeline on a scenario.
    Run(Flags),
    /// Validate and summarize the CSVs in the output directory.
    Report(Flags),
    /// Print the effective configuration.
    PrintConfig(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    robots: Option<usize>,
    /// Loop closures to inject as outliers.
    #[arg(long)]
    outliers: Option<usize>,
    /// Relaxation rank.
    #[arg(long)]
    rank: Option<usize>,
    /// Cap on block updates for the early-stopped or distributed solve.
    #[arg(long)]
    early_stop: Option<usize>,
}

impl Flags {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            robots: self.robots,
            outliers: self.outliers,
            rank: self.rank,
            early_stop: self.early_stop,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (flags, f): (&Flags, fn(&ExperimentConfig) -> Result<(), CliError>) = match &cli.command {
        Cmd::Generate(a) => (a, |c| cmd_generate(c).map(drop)),
        Cmd::PcmBench(a) => (a, |c| cmd_pcm_bench(c).map(drop)),
        Cmd::DpgoBench(a) => (a, |c| cmd_dpgo_bench(c).map(drop)),
        Cmd::Run(a) => (a, |c| cmd_run(c).map(drop)),
        Cmd::Report(a) => (a, |c| cmd_report(c).map(|t| print!("{t}"))),
        Cmd::PrintConfig(a) => (a, |c| {
            print!("{}", c.to_toml());
            Ok(())
        }),
    };
    let cfg = flags.config()?;
    log::info!("seed {}, output {}", cfg.seed, cfg.out.display());
    f(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
