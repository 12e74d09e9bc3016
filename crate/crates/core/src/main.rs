use std::error::Error as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dynspec::harness::{emit_results, results_table, run_experiment, ExperimentConfig};
use dynspec::models::{read_trace, validate_records};
use dynspec::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dynspec",
    version,
    about = "Simulate adaptive draft-length control for speculative decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its result files.
    Run {
        config: PathBuf,
        /// Replace the config's seeds (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Replace the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// Check a JSONL trace file.
    TraceCheck {
        trace: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
    },
}

fn load(path: &Path, seeds: Vec<u64>, out_dir: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if !seeds.is_empty() {
        config.seeds = seeds;
    }
    if let Some(dir) = out_dir {
        config.output_dir = dir;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seeds, out_dir } => {
            let config = load(&config, seeds, out_dir)?;
            let result = run_experiment(&config)?;
            let files = emit_results(&result, &config, &config.output_dir)?;
            print!("{}", results_table(&result.rows(), config.format));
            for f in files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Validate { config } => {
            let c = load(&config, Vec::new(), None)?;
            println!(
                "ok: {} controllers, {} suites, {} seeds",
                c.controllers.len(),
                c.suites.len(),
                c.seeds.len()
            );
        }
        Command::TraceCheck { trace, vocab_size } => {
            let file = File::open(&trace).map_err(|e| Error::Io {
                path: trace.clone(),
                source: e,
            })?;
            let records = read_trace(BufReader::new(file))?;
            let prompts = validate_records(&records, vocab_size)?;
            println!("ok: {} records, {} prompts", records.len(), prompts);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprint!(": {s}");
                source = s.source();
            }
            eprintln!();
            ExitCode::FAILURE
        }
    }
}
