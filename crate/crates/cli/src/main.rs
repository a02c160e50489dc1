//! fas-ucm: per-user face anti-spoofing pipeline driver.
//!
//! Exit codes: 0 success, 2 config validation error, 3 missing/stale
//! prerequisite stage, 4 runtime failure.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use stages::{CliError, CliResult, Runner, Stage};

#[derive(Parser)]
#[command(name = "fas-ucm", version, about = "Per-user face anti-spoofing pipeline")]
struct Cli {
    /// Pipeline config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-subject stages.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline stage, or `all` for the full chain.
    Run {
        /// ingest | split | style-train | spoof-gen | train | eval | report | all
        stage: String,
    },
    /// Parse the config, apply defaults, and print the resolved result.
    ValidateConfig,
    /// Render the synthetic dataset into paths.data_root.
    Fixture(FixtureArgs),
    /// Write seeded-random perceptual-backbone weights into paths.weights.
    Weights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the liveness net's layer table and parameter totals.
    Audit,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 4)]
    subjects: usize,
    #[arg(long, default_value_t = 10)]
    live_videos: usize,
    #[arg(long, default_value_t = 10)]
    frames_per_video: usize,
    #[arg(long, default_value_t = 10)]
    styles: usize,
    #[arg(long, default_value_t = 2)]
    spoof_videos_per_style: usize,
    #[arg(long, default_value_t = 5)]
    spoof_frames_per_video: usize,
    #[arg(long, default_value_t = 64)]
    frame_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(path: Option<&PathBuf>) -> CliResult<PipelineConfig> {
    match path {
        Some(p) => config::validate_config(p).map_err(CliError::Validation),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli.config.as_ref())?;
    match &cli.command {
        Command::Run { stage } => {
            let mut runner = Runner::new(cfg, cli.jobs);
            if stage == "all" {
                runner.run_all()
            } else {
                let stage = Stage::parse(stage).ok_or_else(|| {
                    CliError::Validation(vec![format!(
                        "unknown stage '{stage}'; expected one of ingest, split, style-train, \
                         spoof-gen, train, eval, report, all"
                    )])
                })?;
                runner.run_stage(stage)
            }
        }
        Command::ValidateConfig => {
            print!("{}", cfg.describe());
            println!("{}", cfg.canonical().trim_end());
            Ok(())
        }
        Command::Fixture(args) => {
            let spec = fas_core::fixture::FixtureSpec {
                subjects: args.subjects,
                live_videos: args.live_videos,
                frames_per_video: args.frames_per_video,
                spoof_styles: args.styles,
                spoof_videos_per_style: args.spoof_videos_per_style,
                spoof_frames_per_video: args.spoof_frames_per_video,
                frame_size: args.frame_size,
                seed: args.seed,
            };
            let summary = fas_core::fixture::generate_fixture(&cfg.paths.data_root, &spec)
                .map_err(CliError::from)?;
            println!(
                "fixture at {}: {} subjects, {} live + {} spoof frames, styles [{}]",
                cfg.paths.data_root.display(),
                summary.subjects.len(),
                summary.live_frames,
                summary.spoof_frames,
                summary.style_ids.join(", ")
            );
            Ok(())
        }
        Command::Weights { seed } => {
            let manifest = fas_core::backbone::write_random_backbone(&cfg.paths.weights, *seed)
                .map_err(CliError::from)?;
            println!("weights manifest at {}", manifest.display());
            Ok(())
        }
        Command::Audit => {
            let net = fas_core::classifier::SpoofModNet::new(0, 0.25, 0.5);
            println!("{:<14} {:>10}  size-out", "layer", "params");
            for row in net.audit() {
                let (h, w, c) = row.size_out;
                println!("{:<14} {:>10}  {}x{}x{}", row.name, row.params, h, w, c);
            }
            let total = net.audited_param_count();
            // Norm running statistics are buffers, not trained weights.
            println!("total params:     {total}");
            println!("trainable params: {}", total - 320);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
