//! `pollsim` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pollsim::runner::{
    cmd_all, cmd_compare, cmd_parse, cmd_plan, cmd_run, BackendKind, CliOverrides, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "pollsim",
    about = "Simulate issue polling with a language model and compare against human survey data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the balanced sampling plan and preview its cost.
    Plan(CommonArgs),
    /// Elicit completions for every planned task (resumes from cache).
    Run(RunArgs),
    /// Re-parse cached completions and print the parse report.
    Parse(CommonArgs),
    /// Compare synthetic and human data; emit tables, manifest, and charts.
    Compare(CommonArgs),
    /// Re-emit report files from cached responses.
    Report(CommonArgs),
    /// plan + run + compare.
    All(RunArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the run config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured backend.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Override replicates per cell.
    #[arg(long)]
    n: Option<u32>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (parent of run directories).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Render all prompts and print a cost preview without sending anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Live,
    Mock,
}

impl From<BackendArg> for BackendKind {
    fn from(value: BackendArg) -> Self {
        match value {
            BackendArg::Live => BackendKind::Live,
            BackendArg::Mock => BackendKind::Mock,
        }
    }
}

impl CommonArgs {
    fn load_config(&self) -> anyhow::Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply_overrides(&CliOverrides {
            backend: self.backend.map(Into::into),
            replicates: self.n,
            seed: self.seed,
            out_dir: self.out.clone(),
        });
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Plan(args) => {
            let config = args.load_config()?;
            let outcome = cmd_plan(&config)?;
            println!("{}", outcome.summary_line());
            println!("estimated cost: ${:.2}", outcome.preview_cost_usd);
            println!("plan written to {}", outcome.plan_path.display());
        }
        Command::Run(args) => {
            let config = args.common.load_config()?;
            let outcome = cmd_run(&config, args.dry_run)?;
            println!("{}", outcome.summary_line());
            if !outcome.dry_run {
                println!("raw responses in {}", outcome.run_dir.display());
            }
        }
        Command::Parse(args) => {
            let config = args.load_config()?;
            let outcome = cmd_parse(&config)?;
            let report = &outcome.report;
            println!(
                "{} responses: {} parsed, {} out of range, {} missing, {} ambiguous",
                report.total,
                report.parsed,
                report.out_of_range,
                report.missing_score,
                report.ambiguous
            );
            println!("failure rate: {:.2}%", report.failure_rate() * 100.0);
        }
        Command::Compare(args) | Command::Report(args) => {
            let config = args.load_config()?;
            let outcome = cmd_compare(&config)?;
            print!("{}", outcome.summary_table());
            println!(
                "parse failure rate: {:.2}%",
                outcome.parse_report.failure_rate() * 100.0
            );
            println!("report files in {}", outcome.run_dir.display());
        }
        Command::All(args) => {
            let config = args.common.load_config()?;
            let (plan, run, compare) = cmd_all(&config, args.dry_run)?;
            println!("{}", plan.summary_line());
            println!("{}", run.summary_line());
            if let Some(compare) = compare {
                print!("{}", compare.summary_table());
                println!("report files in {}", compare.run_dir.display());
            }
        }
    }
    Ok(())
}
