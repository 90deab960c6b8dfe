mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{BackendKind, ConfigError};
use rms_core::domain::codec::CodecError;
use rms_core::evolution::EvolutionError;
use rms_core::synth::SynthError;
use rms_core::world::WorldError;

#[derive(Debug, Parser)]
#[command(name = "rms", version, about = "Two-tier reward models for GUI agents: data, evaluation and reflux")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory of an exported world.
    #[arg(long, global = true)]
    pub world: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true, env = "RMS_BACKEND_URL")]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Tier weights as tier=weight; tiers not listed get weight 0.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub tier_weights: Vec<String>,
    #[arg(long, global = true)]
    pub rounds: Option<u32>,
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Reject unknown fields when reading worlds and datasets.
    #[arg(long, global = true)]
    pub strict_schema: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world and export it.
    Genworld {
        #[arg(long)]
        apps: Option<u32>,
        #[arg(long)]
        tasks_per_app: Option<u32>,
        /// Fraction of apps held out as out-of-distribution.
        #[arg(long)]
        ood: Option<f64>,
    },
    /// Build a labeled reward dataset.
    Synth {
        #[arg(long)]
        total: Option<usize>,
    },
    /// Re-verify every sample of a dataset against the rules.
    Verify {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a DS reward model on a dataset.
    EvalRm {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run one round of agent episodes through both reward tiers.
    Reflux,
    /// Run several rounds of reflux and learner updates.
    Evolve,
    /// Re-aggregate and print the reports found in a directory.
    Report {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Serve the oracle reward models over HTTP.
    ServeMockRm {
        #[arg(long)]
        addr: Option<String>,
    },
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<ConfigError>()
            || matches!(e.downcast_ref::<WorldError>(), Some(WorldError::Config(_)))
            || matches!(e.downcast_ref::<SynthError>(), Some(SynthError::Config(_)))
            || matches!(e.downcast_ref::<EvolutionError>(), Some(EvolutionError::Config(_)))
            || matches!(e.downcast_ref::<CodecError>(), Some(CodecError::Parse { .. } | CodecError::Invalid { .. }))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = commands::load(&cli.common).and_then(|cfg| match cli.command {
        Command::Genworld { apps, tasks_per_app, ood } => commands::genworld(cfg, apps, tasks_per_app, ood),
        Command::Synth { total } => commands::synth(cfg, total),
        Command::Verify { dataset } => commands::verify(cfg, &dataset),
        Command::EvalRm { dataset } => commands::eval_rm(cfg, &dataset),
        Command::Reflux => commands::reflux(cfg),
        Command::Evolve => commands::evolve(cfg),
        Command::Report { dir } => commands::report(cfg, dir),
        Command::ServeMockRm { addr } => commands::serve_mock_rm(cfg, addr),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
