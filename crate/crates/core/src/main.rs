use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use flexpose::cli::{run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "flexpose", version, about = "Few-shot pose distribution adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON run config; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample source, guidance and holdout pose files.
    GenData,
    /// Fit the generator to the source poses.
    TrainSource,
    /// Calibrate the transfer matrix on the guidance shots.
    Adapt,
    /// Adapt each candidate layer alone and tabulate final losses.
    SweepLayers,
    /// Draw poses from the adapted generator.
    Sample,
    /// Compare two pose files.
    Eval {
        #[arg(long)]
        a: Option<PathBuf>,
        #[arg(long)]
        b: Option<PathBuf>,
    },
    /// Write a PNG and an SVG per pose.
    Render {
        #[arg(long)]
        poses: Option<PathBuf>,
    },
    /// Distances and a 2D embedding of source, target and adapted poses.
    Report,
    /// Print the fully resolved config.
    ShowConfig,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<flexpose::Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(
            flexpose::Error::Config(_)
            | flexpose::Error::InvalidArgument(_)
            | flexpose::Error::Parse { .. }
            | flexpose::Error::Topology(_)
            | flexpose::Error::MissingArtifact(_),
        ) => 2,
        _ => 1,
    }
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.resolve(cli.seed, cli.out);
    let cmd = match cli.command {
        Cmd::GenData => Command::GenData,
        Cmd::TrainSource => Command::TrainSource,
        Cmd::Adapt => Command::Adapt,
        Cmd::SweepLayers => Command::SweepLayers,
        Cmd::Sample => Command::Sample,
        Cmd::Eval { a, b } => {
            cfg.metrics.a = a.or(cfg.metrics.a);
            cfg.metrics.b = b.or(cfg.metrics.b);
            Command::Eval
        }
        Cmd::Render { poses } => {
            cfg.render.poses = poses.or(cfg.render.poses);
            Command::Render
        }
        Cmd::Report => Command::Report,
        Cmd::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            return Ok(());
        }
    };
    run(cmd, &cfg).with_context(|| format!("{} failed", cmd.name()))?;
    eprintln!("{}: done, manifest in {}", cmd.name(), cfg.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
