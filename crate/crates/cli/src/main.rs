//! Command-line surface for the early-warning pipeline.
//!
//! One configuration file drives every stage; each subcommand runs one
//! stage and writes its artifacts. Exit codes distinguish error families:
//! 2 for configuration problems, 3 for missing prerequisite artifacts,
//! 4 for data errors, 5 for numerical failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowrisk::config::{load_config, RunConfig};
use flowrisk::panel::MonthIndex;
use flowrisk::pipeline;
use flowrisk::Error;

#[derive(Parser)]
#[command(name = "flowrisk", version, about = "Early-warning risk indices for forced-displacement flows")]
struct Cli {
    /// Run-configuration file (JSON); omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-thread bound; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic panel with known truth classes.
    Synth,
    /// Label the panel at every configured threshold.
    Label,
    /// Train one model cell per (threshold, horizon) and write the bundle.
    Train,
    /// Score the panel with the trained bundle and write risk indices.
    Predict {
        /// Restrict output to target months: `2021-07` or `2021-07..2021-12`.
        #[arg(long)]
        months: Option<String>,
    },
    /// Score the reserved holdout window and write metric reports.
    Evaluate,
}

fn parse_month(text: &str) -> flowrisk::Result<MonthIndex> {
    let invalid = || Error::ConfigInvalid(format!("expected a month like 2021-07, got {text:?}"));
    let (y, m) = text.split_once('-').ok_or_else(invalid)?;
    let year: i32 = y.parse().map_err(|_| invalid())?;
    let month: u32 = m.parse().map_err(|_| invalid())?;
    MonthIndex::new(year, month).map_err(|_| invalid())
}

fn parse_month_range(text: &str) -> flowrisk::Result<(MonthIndex, MonthIndex)> {
    match text.split_once("..") {
        Some((first, last)) => Ok((parse_month(first)?, parse_month(last)?)),
        None => {
            let m = parse_month(text)?;
            Ok((m, m))
        }
    }
}

fn run(cli: Cli) -> flowrisk::Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| Error::ConfigInvalid(format!("cannot size the thread pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    match cli.command {
        Command::Synth => {
            let summary = pipeline::run_synth(&config)?;
            println!(
                "wrote {} ({} countries x {} months; truth classes {}/{}/{})",
                config.paths.panel.display(),
                summary.n_countries,
                summary.n_months,
                summary.truth_counts[0],
                summary.truth_counts[1],
                summary.truth_counts[2],
            );
        }
        Command::Label => {
            let summary = pipeline::run_label(&config)?;
            for t in &summary.thresholds {
                println!(
                    "threshold {}: classes {}/{}/{}",
                    t.threshold_yearly, t.counts[0], t.counts[1], t.counts[2]
                );
            }
            println!("wrote {}", config.paths.labels.display());
        }
        Command::Train => {
            let bundle = pipeline::run_train(&config)?;
            for cell in &bundle.cells {
                println!(
                    "threshold {} horizon {}: {} training rows, pair AUCPR {:.3}/{:.3}/{:.3}",
                    cell.threshold_yearly,
                    cell.horizon,
                    cell.n_train_rows,
                    cell.pairs[0].mean_aucpr,
                    cell.pairs[1].mean_aucpr,
                    cell.pairs[2].mean_aucpr,
                );
            }
            println!("wrote {}", config.paths.bundle.display());
        }
        Command::Predict { months } => {
            let range = months.as_deref().map(parse_month_range).transpose()?;
            let n_rows = pipeline::run_predict(&config, range)?;
            println!("wrote {} ({n_rows} rows)", config.paths.risk.display());
        }
        Command::Evaluate => {
            let metrics = pipeline::run_evaluate(&config)?;
            for m in &metrics {
                println!(
                    "threshold {} horizon {}: log loss {:.4} (baseline {:.4}), c-statistic {:.4}",
                    m.threshold_yearly, m.horizon, m.log_loss, m.baseline_log_loss, m.c_statistic
                );
            }
            println!("wrote {}", config.paths.reports.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.family().exit_code() as u8)
        }
    }
}
