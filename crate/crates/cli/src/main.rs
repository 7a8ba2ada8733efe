mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use duosplat::experts::Protocol;

#[derive(Parser)]
#[command(name = "duosplat", version, about = "Pose-free Gaussian splatting: fit, render, align, evaluate, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Plain-text key=value configuration; relative paths resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Directory for all outputs; created if missing.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Posed,
    #[value(name = "pose_free")]
    PoseFree,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Posed => Protocol::Posed,
            ProtocolArg::PoseFree => Protocol::PoseFree,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        matches!(v, OnOff::On)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate cameras and fit Gaussians to the context views.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
    },
    /// Render a Gaussian dump from every camera in a pose file.
    Render {
        #[command(flatten)]
        common: Common,
    },
    /// Refine cameras against target images with the scene frozen.
    Epa {
        #[command(flatten)]
        common: Common,
    },
    /// PSNR, SSIM and pose AUC from image and pose files.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Align target cameras before rendering; the report label gets a `+epa` suffix.
        #[arg(long, value_enum)]
        epa: Option<OnOff>,
    },
    /// Full pipeline sweep over noise levels and view counts on synthetic scenes.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        #[arg(long, value_enum)]
        epa: Option<OnOff>,
    },
    /// Write a synthetic scene: images, oracle depths, poses and the Gaussian dump.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> duosplat::Result<()> {
    match cli.command {
        Command::Fit { common, seed, protocol } => {
            commands::fit(&common.config, seed, protocol.map(Into::into), &common.out_dir)
        }
        Command::Render { common } => commands::render_views(&common.config, &common.out_dir),
        Command::Epa { common } => commands::epa(&common.config, &common.out_dir),
        Command::Eval { common, epa } => commands::eval(&common.config, epa.map(Into::into), &common.out_dir),
        Command::Bench { common, seed, protocol, epa } => {
            commands::bench(&common.config, seed, protocol.map(Into::into), epa.map(Into::into), &common.out_dir)
        }
        Command::Synth { common, seed } => commands::synth(&common.config, seed, &common.out_dir),
    }
}

fn main() -> ExitCode {
    // clap reports usage errors with exit code 2, matching validation failures.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}
