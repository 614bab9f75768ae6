//! `ppnet`: dataset building, training, enhancement and evaluation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "ppnet",
    version,
    about = "Post-processing CNN for decoded video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Training-set operations.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Trains a model from a dataset file.
    Train(TrainArgs),
    /// Runs a model over every frame of a YUV file.
    Enhance(EnhanceArgs),
    /// Per-frame PSNR and SSIM between two YUV files, as CSV on stdout.
    Quality(QualityArgs),
    /// Bjøntegaard delta rate between rate-quality curves.
    Bdrate(BdrateArgs),
    /// Merges curve files into plot data.
    Curves(CurvesArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Cuts random co-located blocks from decoded/original sequence pairs.
    Build(DatasetBuildArgs),
}

/// Frame geometry of raw 4:2:0 files.
#[derive(Args, Debug, Clone, Copy)]
struct GeometryArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = 10)]
    bit_depth: u8,
    /// Recorded for reference; no computation depends on it.
    #[arg(long)]
    fps: Option<f64>,
}

#[derive(Args, Debug)]
struct DatasetBuildArgs {
    /// A decoded file and its original, sharing the geometry flags.
    #[arg(long = "pair", num_args = 2, value_names = ["DECODED", "ORIGINAL"])]
    pairs: Vec<PathBuf>,
    /// CSV with `decoded,original,width,height,bit_depth` per sequence.
    #[arg(long)]
    pair_list: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, default_value_t = 10)]
    bit_depth: u8,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    codec: String,
    #[arg(long)]
    qp_group: String,
    /// Frames drawn from each sequence; all frames when omitted.
    #[arg(long)]
    frames_per_sequence: Option<usize>,
    #[arg(long, default_value_t = 16)]
    blocks_per_frame: usize,
    #[arg(long, default_value_t = 96)]
    block_size: usize,
    #[arg(long, default_value_t = 16)]
    sample_bits: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    L1,
    Perceptual,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::L1)]
    method: MethodArg,
    /// Model bundle to write.
    #[arg(long, short)]
    output: PathBuf,
    /// Per-step loss log (CSV); appended to when resuming.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Checkpoint written after every epoch.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint written with the same settings.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many epochs in total (the run can be resumed).
    #[arg(long)]
    stop_after: Option<usize>,
    /// Residual blocks in the generator.
    #[arg(long, default_value_t = 16)]
    residual_blocks: usize,
    /// Generator feature channels.
    #[arg(long, default_value_t = 64)]
    features: usize,
    /// Divides every discriminator width.
    #[arg(long, default_value_t = 1)]
    disc_reduce: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    stage1_epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    lr_decay: f64,
    #[arg(long, default_value_t = 100)]
    lr_decay_every: usize,
    #[arg(long, default_value_t = 0.025)]
    alpha: f64,
    #[arg(long, default_value_t = 5e-3)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    /// Registry manifest listing `codec qp_group method path` per model.
    #[arg(long, conflicts_with = "model")]
    models: Option<PathBuf>,
    /// A single bundle, bypassing QP dispatch.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    codec: String,
    /// Quantisation parameter used for the encode.
    #[arg(long)]
    qp: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Perceptual)]
    method: MethodArg,
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Process only the first N frames.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args, Debug)]
struct QualityArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Report the mean of per-channel RGB PSNR instead of luma PSNR.
    #[arg(long)]
    rgb: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum QpRangeArg {
    Low,
    High,
}

#[derive(Args, Debug)]
struct BdrateArgs {
    #[arg(long, required_unless_present = "table", conflicts_with = "table")]
    anchor: Option<PathBuf>,
    #[arg(long, required_unless_present = "table")]
    test: Option<PathBuf>,
    /// Manifest `class,sequence,anchor_csv,test_csv` for a full report.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Restrict VVC curves to QPs 22-37 (low) or 27-42 (high).
    #[arg(long, value_enum)]
    qp_range: Option<QpRangeArg>,
    #[arg(long, default_value = "VVC")]
    codec: String,
    /// Report CSV written alongside the text table.
    #[arg(long, requires = "table")]
    csv_out: Option<PathBuf>,
    /// Column heading of the report.
    #[arg(long, default_value = "BD-rate")]
    label: String,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Long-format CSV `curve,bitrate_kbps,quality[,qp]`.
    #[arg(long)]
    csv: PathBuf,
    /// Gnuplot data file, one indexed block per curve.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
