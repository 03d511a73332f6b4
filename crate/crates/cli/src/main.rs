use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use stgp_cli::bench::write_bench_csv;
use stgp_cli::experiment::{read_log, write_json, REPLAY_FILE};
use stgp_cli::{replay, run_all, run_bench, run_race, write_race, Error, ExperimentConfig, Result, Variant};

#[derive(Debug, Parser)]
#[command(name = "stgp", version, about = "Spatio-temporal GP-MPC experiments")]
struct Cli {
    /// Experiment config (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed for process noise and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Controller variant, overriding the config.
    #[arg(long, global = true, value_enum)]
    variant: Option<Variant>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the numerical self-checks.
    Validate,
    /// Time updates and horizon evaluations against the data count.
    Bench {
        /// Number of updates, overriding the config.
        #[arg(long)]
        updates: Option<usize>,
        /// Let windowed variants keep every point.
        #[arg(long)]
        uncapped: bool,
    },
    /// Run the closed loop and write the log and summary.
    Race {
        /// Simulated seconds, overriding the config.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Re-score a logged run with a fresh model.
    Replay {
        log: PathBuf,
        /// Score only steps at or after this time (s).
        #[arg(long, default_value_t = 0.0)]
        from: f64,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(variant) = cli.variant {
        config.variant = variant;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load(&cli)?;
    match cli.command {
        Command::Validate => {
            config.validate()?;
            let checks = run_all(&config)?;
            for c in &checks {
                println!("{c}");
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            if !failed.is_empty() {
                return Err(Error::Validation(format!("failing checks: {}", failed.join(", "))));
            }
        }
        Command::Bench { updates, uncapped } => {
            if let Some(n) = updates {
                config.bench.updates = n;
            }
            config.validate()?;
            let budget = uncapped.then_some(config.bench.updates);
            let report = run_bench(&config, config.variant, budget)?;
            let dir = &config.out_dir;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let stem = format!("bench_{}{}", config.variant, if uncapped { "_uncapped" } else { "" });
            let csv = dir.join(format!("{stem}.csv"));
            let file = std::fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?;
            write_bench_csv(&report.rows, std::io::BufWriter::new(file))?;
            write_json(&dir.join(format!("{stem}.json")), &report.summary)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
        }
        Command::Race { duration } => {
            if let Some(d) = duration {
                config.race.duration = d;
            }
            config.validate()?;
            let (log, summary) = run_race(&config)?;
            write_race(&config.out_dir, &log, &summary)?;
            info!("wrote {}", config.out_dir.display());
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Replay { log, from } => {
            config.validate()?;
            let records = read_log(&log)?;
            let report = replay(&records, &config, config.variant, from, log)?;
            std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
            write_json(&config.out_dir.join(REPLAY_FILE), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("STGP_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
