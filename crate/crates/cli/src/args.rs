use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "rfsplat", version, about = "Differentiable RF Gaussian splatting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multipath dataset.
    GenData(GenDataArgs),
    /// Train a Gaussian cloud on a dataset index.
    Train(TrainArgs),
    /// Render a checkpoint for one transmitter position.
    Render(RenderArgs),
    /// Per-sample and aggregate SSIM/PSNR/MSE.
    Eval(EvalArgs),
    /// Time forward rendering.
    Bench(BenchArgs),
    /// Predict RSSI over a list of transmitter positions.
    Rssi(RssiArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Nothing is written outside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for rendering (default: all cores).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Bit-reproducible gradient accumulation and no wall-clock fields.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training samples.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    /// Held-out samples.
    #[arg(long)]
    pub n_test: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub height: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SupervisionArg {
    Magnitude,
    Complex,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SamplingArg {
    Uniform,
    EpochShuffle,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training index CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Total iterations, counting resumed ones.
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub gaussians: Option<u64>,
    /// Continue from a checkpoint (and its `.adam` sidecar when present).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub supervision: Option<SupervisionArg>,
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Stop after this many seconds (ignored with --deterministic).
    #[arg(long)]
    pub max_wall_seconds: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Transmitter position `x,y,z` in meters.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub tx: [f64; 3],
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub height: Option<u64>,
    /// 1 writes the magnitude, 2 the complex signal.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub channels: u8,
    /// Ground-truth RFSI to compare against; prints SSIM/PSNR/MSE.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value = "render")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ground-truth index CSV.
    #[arg(long, required_unless_present = "results")]
    pub data: Option<PathBuf>,
    /// Checkpoint to render predictions from.
    #[arg(long, conflicts_with_all = ["pred", "results"])]
    pub checkpoint: Option<PathBuf>,
    /// Index CSV of predicted spectra, matched to --data by id.
    #[arg(long, conflicts_with = "results")]
    pub pred: Option<PathBuf>,
    /// Existing per-sample result CSV (`id,ssim,psnr,mse`) to summarize.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Cloud to time; a uniform random cloud is used when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<u64>,
    /// Comma-separated Gaussian counts for the sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<u64>>,
    #[arg(long)]
    pub sweep_reps: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub height: Option<u64>,
}

#[derive(Args, Debug)]
pub struct RssiArgs {
    #[command(flatten)]
    pub common: Common,
    /// Index CSV of transmitter positions with ground-truth spectra.
    #[arg(long)]
    pub data: PathBuf,
    /// Cloud used for prediction; the ground truth itself is scored when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Fraction of directions sampled.
    #[arg(long)]
    pub fraction: Option<f64>,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got '{s}'"));
    }
    let mut v = [0.0f64; 3];
    for (slot, p) in v.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|e| format!("'{p}': {e}"))?;
        if !slot.is_finite() {
            return Err(format!("'{p}' is not finite"));
        }
    }
    Ok(v)
}
