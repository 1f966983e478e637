mod commands;
mod manifest;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Output(String),
    #[error("{0}")]
    Undefined(String),
    #[error("{0}")]
    StageFailure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Output(_) => 1,
            CliError::Undefined(_) => 2,
            CliError::StageFailure(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "bmploop",
    version,
    about = "Detect / pose / segment loop engine, COCO evaluation and crowd dataset tools"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed mixed into every seeded component; recorded in the run manifest.
    #[arg(long, global = true, env = "BMPLOOP_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: logical CPUs). Never changes results.
    #[arg(long, global = true, env = "BMPLOOP_THREADS")]
    pub threads: Option<usize>,
    /// Root under which run directories are created.
    #[arg(long, global = true, env = "BMPLOOP_OUT_DIR", default_value = "runs")]
    pub out_dir: PathBuf,
    /// Config override by dotted path, e.g. `--set loop.prompt_k=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub set: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Bbox,
    Segm,
    Keypoints,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum IouGeometry {
    Bbox,
    PreferMask,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Detector,
    Pose,
    Refiner,
    Lifter,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// COCO-style evaluation of a results file against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "keypoints")]
        task: Task,
        #[arg(long)]
        max_dets: Option<usize>,
    },
    /// Image / instance counts and the IoUMax distribution of an annotation file.
    Stats {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "bbox")]
        iou_mode: IouGeometry,
    },
    /// Applies the legacy rule: keep instances with IoUMax = 0 or > 0.5.
    Filter {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "bbox")]
        iou_mode: IouGeometry,
        /// Extra copy of the filtered set.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adds keypoint annotations to a base set, dropping duplicates by OKS.
    Merge {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        additions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the seeded synthetic-world experiments and prints the AP table.
    Simulate {
        /// JSON document with world, stages, loop, experiments and endpoints.
        #[arg(long, env = "BMPLOOP_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        n_scenes: Option<usize>,
    },
    /// Writes the IoUMax histogram as CSV.
    ExportHistogram {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "bbox")]
        iou_mode: IouGeometry,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Handshakes with an external stage endpoint.
    ServeCheck {
        /// `tcp://host:port` or `cmd:program args`.
        #[arg(long)]
        endpoint: String,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
    /// Serves one oracle stage over the wire protocol for the scenes of a simulation config.
    Serve {
        #[arg(long, value_enum)]
        kind: Kind,
        /// `host:port` to listen on; prints the bound address to stderr.
        #[arg(long, conflicts_with = "stdio")]
        listen: Option<String>,
        /// Serve a single connection on stdin/stdout.
        #[arg(long)]
        stdio: bool,
        #[arg(long, env = "BMPLOOP_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        n_scenes: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BMPLOOP_LOG", "warn")).init();
    let mut cli = Cli::parse();
    if let Ok(extra) = std::env::var("BMPLOOP_SET") {
        let mut all = overrides::split_env_list(&extra);
        all.append(&mut cli.global.set);
        cli.global.set = all;
    }
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
