use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trrank::commands::{self, exit_code};
use trrank::config::load_config;
use trrank_core::Result;

#[derive(Parser)]
#[command(name = "trrank", version, about = "Tensor-ring rank search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic regression dataset to a binary file
    SyntheticData {
        #[arg(long, default_value_t = 233)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        true_rank: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every rank combination of the candidate set
    Enumerate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the progressive evolutionary search
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Search a layer stack with weight inheritance through this store
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Interest regions and co-occurrence counts of the best records
    Analyze {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = 100)]
        top: usize,
        /// Rank range for the sensitivity threshold, e.g. `3,8`
        #[arg(long, value_parser = parse_range)]
        range: Option<(usize, usize)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the progressive search with plain NSGA-II on an enumeration
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "enum")]
        enum_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let lo = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi = b.trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err("MIN exceeds MAX".into());
    }
    Ok((lo, hi))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SyntheticData { seed, true_rank, out } => {
            commands::cmd_synthetic_data(seed, true_rank, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Enumerate { config, out } => {
            let cfg = load_config(&config)?;
            let outcome = commands::cmd_enumerate(&cfg, &out)?;
            let mean = outcome.training_seconds.iter().sum::<f64>() / outcome.training_seconds.len().max(1) as f64;
            println!(
                "{} trainings in {:.1}s (mean {:.3}s per training)",
                outcome.records.len(),
                outcome.wall_clock_s,
                mean
            );
        }
        Command::Search { config, out, checkpoints } => {
            let cfg = load_config(&config)?;
            let (_, summary) = commands::cmd_search(&cfg, &out, checkpoints.as_deref())?;
            print_json(&summary);
        }
        Command::Analyze { results, top, range, out } => {
            let report = commands::cmd_analyze(&results, top, range, out.as_deref())?;
            print_json(&serde_json::json!({
                "top": report.top,
                "per_element": report.per_element,
                "pooled": report.pooled,
            }));
        }
        Command::Ablation { config, enum_dir, out } => {
            let cfg = load_config(&config)?;
            for row in commands::cmd_ablation(&cfg, &enum_dir, out.as_deref())? {
                println!(
                    "seed {:>6} {:<6} checkpoint {} gen {:>3} evals {:>4} rank {:>5} {}",
                    row.seed,
                    format!("{:?}", row.method).to_lowercase(),
                    row.checkpoint,
                    row.generation,
                    row.evaluations,
                    row.rank_of,
                    row.best_genome
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
