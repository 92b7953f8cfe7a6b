mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Experiment, Overrides};

/// Monte Carlo experiments on rank-one perturbed unitary spectra.
#[derive(Parser)]
#[command(name = "gaf-spectra", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a key=value config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
        /// Override the root seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = library default).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the artifact files and CSV schemas an experiment produces.
    Schema {
        /// Experiment name, e.g. "moments" or "gaf-compare".
        experiment: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 2 for usage errors itself; route through the
            // same code for both help text and bad invocations.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            workers,
        } => run_command(&config, Overrides { seed, out, workers }),
        Command::Schema { experiment } => schema_command(&experiment),
    }
}

fn usage_error(message: &str) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(2)
}

fn run_command(config_path: &PathBuf, overrides: Overrides) -> ExitCode {
    let text = match std::fs::read_to_string(config_path) {
        Ok(text) => text,
        Err(e) => {
            return usage_error(&format!(
                "cannot read config {}: {e}",
                config_path.display()
            ))
        }
    };
    let map = match config::parse_file(&text) {
        Ok(map) => map,
        Err(msg) => return usage_error(&msg),
    };
    let cfg = match config::resolve(map, overrides) {
        Ok(cfg) => cfg,
        Err(msg) => return usage_error(&msg),
    };
    if let Err(msg) = config::validate_model_gate(&cfg) {
        return usage_error(&msg);
    }
    if cfg.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
        {
            return usage_error(&format!("cannot configure {} workers: {e}", cfg.workers));
        }
    }

    match run::run(&cfg) {
        Ok(out) => {
            for row in &out.rows {
                let value = if row.value.im == 0.0 {
                    format!("{}", row.value.re)
                } else {
                    format!("{}{:+}i", row.value.re, row.value.im)
                };
                println!(
                    "[{}] {} = {} (reference {}, stderr {}) {}",
                    cfg.experiment.name(),
                    row.quantity,
                    value,
                    row.reference,
                    row.stderr,
                    if row.pass { "PASS" } else { "FAIL" }
                );
            }
            println!(
                "{}: wrote {} to {}",
                if out.pass { "ok" } else { "CHECK FAILED" },
                out.artifacts.join(", "),
                out.out_dir.display()
            );
            if out.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic_json());
            ExitCode::from(3)
        }
    }
}

fn schema_command(name: &str) -> ExitCode {
    let Some(experiment) = Experiment::parse(name) else {
        return usage_error(&format!(
            "unknown experiment `{name}`; expected one of {}",
            Experiment::ALL
                .iter()
                .map(|e| e.name())
                .collect::<Vec<_>>()
                .join(", ")
        ));
    };
    for (file, schema) in experiment.artifacts() {
        println!("{file}: {schema}");
    }
    ExitCode::SUCCESS
}
