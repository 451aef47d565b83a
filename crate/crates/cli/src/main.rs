//! `gacgp`: saliency, features, deep GP training and evaluation from the shell.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use config::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "gacgp", version, about = "Geometry-aware GP saliency and deep GP classification")]
struct Cli {
    /// JSON config file with one object per command name; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "GGP_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select salient points on meshes or point clouds.
    Saliency(SaliencyArgs),
    /// Accumulated-curvature curves for GAC-GP, baselines and the greedy bound.
    AcEval(AcEvalArgs),
    /// Per-shape feature rows at the salient points.
    Features(FeaturesArgs),
    /// Train a deep GP classifier on a feature file.
    Train(TrainArgs),
    /// Class probabilities from a checkpoint.
    Predict(PredictArgs),
    /// Compare the diffusion quadrature with its closed form.
    KernelVerify(KernelVerifyArgs),
    /// Time salient point selection per iteration.
    Bench(BenchArgs),
    /// Seeded train/val/test split of a manifest.
    Split(SplitArgs),
}

/// Graph and kernel settings shared by every command that selects points.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionArgs {
    /// Number of salient points.
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Neighbors per vertex in the geodesic graph.
    #[arg(long)]
    pub k: Option<usize>,
    /// `graph_dijkstra` or `euclidean_knn`.
    #[arg(long)]
    pub method: Option<String>,
    /// Number of GAC frequency terms.
    #[arg(long)]
    pub n_fre: Option<usize>,
    /// Multiplier on the default frequencies.
    #[arg(long)]
    pub frequency_scale: Option<f64>,
    /// Relative jitter on kernel diagonals.
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Skip centering and scaling of input coordinates.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_normalize: Option<bool>,
    /// Full kernel specification; config file only.
    #[arg(skip)]
    pub kernel: Option<gacgp::kernels::KernelSpec>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyArgs {
    /// Mesh or point-cloud file, or a dataset manifest (`.json`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub selection: SelectionArgs,
    /// Iterations whose normalized variance map is exported as colored PLY.
    #[arg(long, value_delimiter = ',')]
    pub maps: Option<Vec<usize>>,
    /// Store per-iteration seconds in the output (breaks byte-identity).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub record_timings: Option<bool>,
    /// Recorded in the output; selection itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AcEvalArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub selection: SelectionArgs,
    /// Frequency scales tried for GAC; the best mean curve at κ wins.
    #[arg(long, value_delimiter = ',')]
    pub scale_grid: Option<Vec<f64>>,
    /// Any of `random`, `rbf`, `matern32`.
    #[arg(long, value_delimiter = ',')]
    pub baselines: Option<Vec<String>>,
    /// Length-scale for the `rbf` and `matern32` baselines.
    #[arg(long)]
    pub baseline_lengthscale: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub record_timings: Option<bool>,
    /// Seeds the random baseline.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output CSV; a `.json` layout sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reuse `<id>.saliency.json` files from this directory instead of selecting.
    #[arg(long)]
    pub saliency_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub selection: SelectionArgs,
    /// `wks`, `curvature` or `wks_curvature`.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub eigen_count: Option<usize>,
    #[arg(long)]
    pub energy_count: Option<usize>,
    #[arg(long)]
    pub scale_invariant: Option<bool>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    /// Feature CSV from `features`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Only train on the shapes listed in this manifest.
    #[arg(long)]
    pub subset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    pub class_count: Option<usize>,
    #[arg(long)]
    pub inducing: Option<usize>,
    #[arg(long)]
    pub n_fre: Option<usize>,
    #[arg(long)]
    pub frequency_scale: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub decay_step: Option<usize>,
    #[arg(long)]
    pub decayed_learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub record_timings: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub subset: Option<PathBuf>,
    /// Output CSV of class probabilities.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Defaults to the value stored in the checkpoint.
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelVerifyArgs {
    #[arg(long, value_delimiter = ',')]
    pub r: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub omega: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    /// Absolute quadrature tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub selection: SelectionArgs,
    /// Any of `gac`, `rbf`, `matern32`.
    #[arg(long, value_delimiter = ',')]
    pub kernels: Option<Vec<String>>,
    #[arg(long)]
    pub baseline_lengthscale: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub val: Option<f64>,
    #[arg(long)]
    pub test: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// What a command produced.
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub results: Value,
}

fn run(cli: &Cli) -> anyhow::Result<(String, Value, Outcome)> {
    let file = cli.config.as_deref().map(config::load_file).transpose()?;
    let file = file.as_ref();
    macro_rules! dispatch {
        ($args:expr, $name:literal, $f:path) => {{
            let resolved = config::resolve($args, file, $name)?;
            let out = $f(&resolved)?;
            ($name.to_string(), serde_json::to_value(&resolved)?, out)
        }};
    }
    Ok(match &cli.command {
        Command::Saliency(a) => dispatch!(a, "saliency", commands::saliency),
        Command::AcEval(a) => dispatch!(a, "ac-eval", commands::ac_eval),
        Command::Features(a) => dispatch!(a, "features", commands::features),
        Command::Train(a) => dispatch!(a, "train", commands::train),
        Command::Predict(a) => dispatch!(a, "predict", commands::predict),
        Command::KernelVerify(a) => dispatch!(a, "kernel-verify", commands::kernel_verify),
        Command::Bench(a) => dispatch!(a, "bench", commands::bench),
        Command::Split(a) => dispatch!(a, "split", commands::split),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({"error": {"kind": "runtime", "message": e.to_string()}}));
            return ExitCode::from(1);
        }
    }
    let start = Instant::now();
    match run(&cli) {
        Ok((command, config, outcome)) => {
            let summary = json!({
                "command": command,
                "config": config,
                "threads": rayon::current_num_threads(),
                "artifacts": outcome.artifacts,
                "results": outcome.results,
                "elapsed_seconds": start.elapsed().as_secs_f64(),
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let Some(c) = e.downcast_ref::<ConfigError>() {
                eprintln!("{}", json!({"error": {"kind": "config", "problems": c.problems}}));
                ExitCode::from(2)
            } else {
                let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
                eprintln!("{}", json!({"error": {"kind": "runtime", "message": chain.join(": ")}}));
                ExitCode::from(1)
            }
        }
    }
}
