use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod manifest;

/// Radar/camera voxel-image fusion pipeline.
#[derive(Debug, Parser)]
#[command(name = "radarfuse", version)]
struct Cli {
    /// JSON config file, or `vod` / `tj4d` for a built-in preset.
    #[arg(long, global = true, default_value = "vod")]
    config: PathBuf,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a dataset root and summarize every frame.
    Ingest,
    /// Run the network and write BEV maps, head scores and a manifest.
    Forward,
    /// Blur-ratio curves and the per-class foreground ratio table.
    AnalyzeBlur,
    /// Per-class AP over the whole annotated area and the driving corridor.
    Eval,
    /// Write a synthetic dataset and a config that points at it.
    Synth,
    /// Write the model parameters to a weights file.
    DumpWeights,
}

fn exit_code(e: &radarfuse::Error) -> u8 {
    match e {
        radarfuse::Error::Config(_) => 2,
        radarfuse::Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let run = || -> radarfuse::Result<()> {
        let mut cfg = radarfuse::config::Config::load(&cli.config)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        std::fs::create_dir_all(&cli.out_dir).map_err(|e| radarfuse::Error::io(&cli.out_dir, e))?;
        radarfuse::par::with_threads(cli.threads, || match cli.command {
            Command::Ingest => commands::ingest(&cfg, &cli.out_dir),
            Command::Forward => commands::forward(&cfg, &cli.out_dir),
            Command::AnalyzeBlur => commands::analyze_blur(&cfg, &cli.out_dir),
            Command::Eval => commands::eval(&cfg, &cli.out_dir),
            Command::Synth => commands::synth(&cfg, &cli.out_dir),
            Command::DumpWeights => commands::dump_weights(&cfg, &cli.out_dir),
        })
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
