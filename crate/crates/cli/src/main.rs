use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afbs_core::{ExperimentConfig, RunReport, Scenario, StrategyName};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Virtual-time federated learning simulator.
#[derive(Debug, Parser)]
#[command(name = "afbs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write report.json, timeline.csv and timing.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the strategy in the config file.
        #[arg(long)]
        strategy: Option<StrategyName>,
    },
    /// Run several strategies on one shared dataset and write a summary.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated strategy names.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<StrategyName>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the fully resolved default config.
    Defaults,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AFBS_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let config_error = err.chain().any(|cause| {
                cause.downcast_ref::<afbs_core::Error>().is_some_and(afbs_core::Error::is_config)
            });
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, seed, strategy } => {
            let mut cfg = load(&config, seed)?;
            if let Some(name) = strategy {
                cfg.strategy.name = name;
            }
            let scenario = Scenario::build(&cfg)?;
            let report = scenario.run()?;
            report.emit(&out)?;
            println!("{}", summary_line(&report));
            Ok(())
        }
        Command::Sweep { config, strategies, out, seed } => {
            let cfg = load(&config, seed)?;
            let scenario = Scenario::build(&cfg)?;
            let mut reports = Vec::with_capacity(strategies.len());
            for name in strategies {
                let report = scenario.run_strategy(name)?;
                report.emit(&out.join(name.as_str()))?;
                println!("{}", summary_line(&report));
                reports.push(report);
            }
            write_summary(&out.join("summary.csv"), &reports)
        }
        Command::Defaults => {
            let cfg = ExperimentConfig::default().resolved()?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn summary_line(report: &RunReport) -> String {
    format!(
        "{}: best accuracy {:.4}, final {:.4}, {} aggregations, {} summations",
        report.strategy,
        report.best_accuracy,
        report.final_accuracy,
        report.totals.aggregations,
        report.totals.summations
    )
}

/// One row per strategy; unreached targets are left empty.
fn write_summary(path: &Path, reports: &[RunReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["strategy".to_string(), "best_accuracy".into(), "final_accuracy".into()];
    if let Some(first) = reports.first() {
        header.extend(first.time_to_target.iter().map(|t| format!("time_to_{}", t.target)));
    }
    header.extend(["aggregations".into(), "summations".into(), "dropped".into(), "dataset_checksum".into()]);
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.strategy.to_string(), r.best_accuracy.to_string(), r.final_accuracy.to_string()];
        row.extend(r.time_to_target.iter().map(|t| t.virtual_time.map(|v| v.to_string()).unwrap_or_default()));
        row.extend([
            r.totals.aggregations.to_string(),
            r.totals.summations.to_string(),
            r.totals.dropped.to_string(),
            r.dataset_checksum.clone(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
