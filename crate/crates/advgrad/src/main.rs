use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// White-box adversarial robustness evaluation for small CNN classifiers.
#[derive(Parser)]
#[command(name = "advgrad", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference CNN from a run config and save the model file.
    Train {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --set train.epochs=20.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Attack a saved model with the configured presets and write reports.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Merge evaluate reports from several models into a comparison table.
    Report {
        /// report.json files produced by `evaluate`, one per model.
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "reports")]
        output_dir: PathBuf,
    },
    /// Print the topology and provenance of a model file.
    InspectModel { model: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // The only environment knob: worker-thread count. Results are
    // bit-identical regardless of its value.
    if let Ok(workers) = std::env::var("ADVGRAD_WORKERS") {
        match workers.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: ADVGRAD_WORKERS must be a positive integer");
                return ExitCode::FAILURE;
            }
        }
    }

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, set } => advgrad::config::load_config(&config, &set)
            .and_then(|cfg| advgrad::cli::cmd_train(&cfg)),
        Command::Evaluate { config, set } => advgrad::config::load_config(&config, &set)
            .and_then(|cfg| advgrad::cli::cmd_evaluate(&cfg)),
        Command::Report { inputs, output_dir } => advgrad::cli::cmd_report(&inputs, &output_dir),
        Command::InspectModel { model } => advgrad::cli::cmd_inspect_model(&model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
