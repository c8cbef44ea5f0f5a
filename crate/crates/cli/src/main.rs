//! `densefield`: generate benchmark scenes, train density fields, render and
//! evaluate them. Every command writes a `manifest.json` next to its outputs.
//!
//! Exit codes: 0 success, 2 bad usage, 3 input error, 4 numerical failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "densefield", version, about = "Single-image density fields on synthetic street scenes")]
struct Cli {
    /// Worker threads [count]; recorded in the manifest. Defaults to the
    /// machine's parallelism. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a deterministic benchmark scene as JSON.
    GenScene(GenSceneArgs),
    /// Train a density field on one or more scenes.
    Train(TrainArgs),
    /// Render depth, a synthesized view and a top-down density slice.
    Render(RenderArgs),
    /// Depth metrics of the rendered depth against the analytic depth.
    EvalDepth(EvalDepthArgs),
    /// Occupancy metrics (O_acc, IE_acc, IE_rec) on the evaluation cuboid.
    EvalOcc(EvalOccArgs),
    /// Novel-view synthesis quality (PSNR, SSIM) of the rig views.
    EvalNvs(EvalNvsArgs),
}

#[derive(Args, Debug)]
pub struct GenSceneArgs {
    /// Scene profile: plane, two_object_occlusion, street or random.
    #[arg(long)]
    pub profile: String,
    /// Scene seed [integer].
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the rig resolution [pixels, WIDTHxHEIGHT].
    #[arg(long, value_name = "WxH")]
    pub resolution: Option<String>,
    /// Output scene file [JSON].
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Conv,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Input,
    Stereo,
    Previous,
    Lateral,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training configuration [JSON, all fields optional]; defaults to the desk profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene file(s) [JSON]; repeat for a scene pool.
    #[arg(long = "scene", required = true)]
    pub scenes: Vec<PathBuf>,
    /// Run directory for checkpoint, metrics log, config and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Total optimization steps [steps], overrides the config.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Model and sampling seed [integer], overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial learning rate [per step], overrides the config.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Final learning rate [per step], overrides the config.
    #[arg(long)]
    pub lr_final: Option<f64>,
    /// Scene items per step [count], overrides the config.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Feature extractor, overrides the config.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Camera roles used as extra training frames besides the input.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [RoleArg::Stereo, RoleArg::Previous, RoleArg::Lateral])]
    pub views: Vec<RoleArg>,
    /// Metrics log interval [steps]; the last step is always logged.
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
    /// Checkpoint interval [steps]; 0 saves only at the end.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Stop once this many total steps are done, keeping the schedule of
    /// --steps; a later --resume finishes the run [steps].
    #[arg(long)]
    pub until: Option<usize>,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Trained checkpoint [binary, from `train`].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Scene file [JSON]; its input view conditions the model.
    #[arg(long)]
    pub scene: PathBuf,
    /// Samples per ray [count]; defaults to the training value.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sampling seed [integer].
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RenderOutput {
    Depth,
    View,
    Slice,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Target camera [JSON]; overrides --role.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Rig camera to render from when --camera is absent.
    #[arg(long, value_enum, default_value_t = RoleArg::Input)]
    pub role: RoleArg,
    /// Which outputs to write.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [RenderOutput::Depth, RenderOutput::View, RenderOutput::Slice])]
    pub outputs: Vec<RenderOutput>,
    /// Slice cell size [m].
    #[arg(long, default_value_t = 0.25)]
    pub slice_cell: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalDepthArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Depth cap [m]; pixels with larger ground truth are ignored.
    #[arg(long, default_value_t = densefield::eval::MAX_EVAL_DEPTH)]
    pub max_depth: f64,
    /// Report file [JSON].
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Predictor {
    /// The trained density field.
    Model,
    /// Everything behind the rendered depth is occupied.
    DepthCarve,
    /// As depth-carve, up to 4 m behind the rendered depth.
    DepthCarve4m,
    /// Ground-truth geometry (upper bound).
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LabelSource {
    /// Carved from simulated range scans along the trajectory.
    Carved,
    /// Exact scene occupancy, scan-0 visibility.
    Oracle,
}

#[derive(Args, Debug)]
pub struct EvalOccArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// What predicts the occupancy.
    #[arg(long, value_enum, default_value_t = Predictor::Model)]
    pub predictor: Predictor,
    /// Where the occupancy labels come from.
    #[arg(long, value_enum, default_value_t = LabelSource::Carved)]
    pub labels: LabelSource,
    /// Rays per simulated scan [count].
    #[arg(long, default_value_t = densefield::eval::DEFAULT_SCAN_RAYS)]
    pub scan_rays: usize,
    /// Azimuth bins per scan [count].
    #[arg(long, default_value_t = densefield::eval::DEFAULT_BINS)]
    pub bins: usize,
    /// Report file [JSON].
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalNvsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Rig views to synthesize besides the input view itself.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [RoleArg::Stereo, RoleArg::Previous, RoleArg::Lateral])]
    pub views: Vec<RoleArg>,
    /// Report file [JSON].
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure classes, one per nonzero exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Input(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<densefield::Error> for Failure {
    fn from(e: densefield::Error) -> Self {
        use densefield::Error as E;
        match e {
            E::NonFiniteLoss(_) | E::NoValidPixels => Failure::Numerical(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::GenScene(a) => commands::gen_scene(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Render(a) => commands::render(a, threads),
        Command::EvalDepth(a) => commands::eval_depth(a, threads),
        Command::EvalOcc(a) => commands::eval_occ(a, threads),
        Command::EvalNvs(a) => commands::eval_nvs(a, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
