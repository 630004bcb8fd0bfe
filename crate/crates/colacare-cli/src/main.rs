//! `colacare` — pipeline driver: synthetic cohorts, expert training,
//! Shapley attribution, retrieval indexing, multi-agent consultation,
//! fusion training, and bootstrap evaluation, all working through one run
//! directory described by a JSON config.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "colacare", version, about = "Collaborative EHR risk prediction pipeline")]
struct Cli {
    /// Run configuration JSON file.
    #[arg(long, global = true, default_value = "colacare.json")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort and its reference corpus.
    Synth,
    /// Split, fit feature statistics, and train the expert models.
    TrainExperts,
    /// Compute per-patient Shapley attributions for every expert.
    Explain,
    /// Chunk and embed the reference corpus into the retrieval index.
    BuildIndex,
    /// Run the multi-agent consultation over the whole cohort.
    Consult {
        /// Patient-level worker threads (0 = default thread pool).
        #[arg(long, default_value_t = 0)]
        parallel: usize,
    },
    /// Train the fusion network on expert states and report embeddings.
    TrainFusion,
    /// Score the three methods on the test split and bootstrap the metrics.
    Evaluate,
    /// Recompute and print consultation statistics from the transcripts.
    Stats,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems exit 1; --help/--version print and exit 0.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let config = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let outcome = match cli.command {
        Command::Synth => commands::synth(&config),
        Command::TrainExperts => commands::train_experts(&config),
        Command::Explain => commands::explain(&config),
        Command::BuildIndex => commands::build_index(&config),
        Command::Consult { parallel } => {
            commands::consult(&config, (parallel > 0).then_some(parallel))
        }
        Command::TrainFusion => commands::train_fusion_cmd(&config),
        Command::Evaluate => commands::evaluate(&config),
        Command::Stats => commands::stats(&config),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_subcommand_documents_its_flags() {
        let cmd = Cli::command();
        for sub in cmd.get_subcommands() {
            let help = sub.clone().render_long_help().to_string();
            assert!(help.contains("--config"), "{} lacks --config in help", sub.get_name());
            for arg in sub.get_arguments() {
                if let Some(long) = arg.get_long() {
                    assert!(
                        help.contains(&format!("--{long}")),
                        "{} help is missing --{long}",
                        sub.get_name()
                    );
                }
            }
        }
    }
}
