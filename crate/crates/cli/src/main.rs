use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pano_nav::commands::{self, Context};
use pano_nav::{CliError, RunConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "pano-nav", version, about = "Panoramic goal-direction navigation experiments")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes, tasks and expert trajectories for every split.
    Gen,
    /// Build localizer training data from the generated episodes.
    BuildData,
    /// Train the localizer.
    Train,
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
    /// Evaluate the policy roster on the validation splits.
    Eval,
    /// Merge report.json files into one comparison table.
    Report {
        /// report.json files to merge.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).unwrap_or_default());
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let ctx = Context::new(cfg);
    pool.install(|| match &cli.command {
        Command::Gen => commands::cmd_gen(&ctx).map(|s| print(&s)),
        Command::BuildData => commands::cmd_build_data(&ctx).map(|s| print(&s)),
        Command::Train => commands::cmd_train(&ctx).map(|s| print(&s)),
        Command::Gradcheck => commands::cmd_gradcheck(&ctx).map(|s| {
            println!("{{\"maxRelativeError\":{},\"passed\":{}}}", s.max_relative_error, s.passed)
        }),
        Command::Eval => commands::cmd_eval(&ctx).map(|r| {
            for row in &r.rows {
                print(row);
            }
        }),
        Command::Report { reports } => {
            commands::cmd_report(&ctx.cfg.output_dir, reports).map(|c| println!("{} rows", c.rows.len()))
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
