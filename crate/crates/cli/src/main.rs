//! `robustsplat` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Gaussian splatting with per-image motion blur, defocus, pose and color models.
#[derive(Debug, Parser)]
#[command(name = "robustsplat", version)]
struct Cli {
    /// Worker threads; 0 uses all cores. Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene and a corrupted multi-view dataset.
    Synth(SynthArgs),
    /// Fit a scene and per-image parameters to a dataset.
    Fit(FitArgs),
    /// Render a scene for every camera (closed form or Monte-Carlo oracle).
    Render(RenderArgs),
    /// Test-time adaptation of pose and color for individual views.
    Adapt(AdaptArgs),
    /// Per-view metrics and blurriness-based test-view selection.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Check(CheckArgs),
    /// Fold a color transform into SH features and write a viewer-ready PLY.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML or JSON config file; missing fields take their defaults. [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Seed for the scene and the corruption draws; overrides synth.seed and corruption.seed. [default: synth.seed = 7, corruption.seed = 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of primitives; overrides synth.primitives. [default: 50]
    #[arg(long)]
    pub primitives: Option<usize>,
    /// Number of orbit views; overrides synth.views. [default: 40]
    #[arg(long)]
    pub views: Option<usize>,
    /// Image width and height in pixels; overrides synth.width/height. [default: 64]
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset directory (as written by `synth`).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for scene.ply, params.json and loss.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Initial scene PLY. [default: <data>/init.ply]
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Optimization steps; overrides fit.iterations. [default: 2000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Shuffle seed; overrides fit.seed. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Enabled mechanisms: `all`, `none`, or a comma list of pose, blur, defocus, color; overrides fit.mechanisms. [default: all]
    #[arg(long, value_parser = commands::parse_mechanisms)]
    pub mechanisms: Option<robustsplat::Mechanisms>,
    /// Leave out every k-th view (indices 0, k, 2k, ...) from training; 0 trains on all views.
    #[arg(long, default_value_t = 0)]
    pub holdout_every: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Scene PLY.
    #[arg(long)]
    pub scene: PathBuf,
    /// Camera file (cameras.json of a dataset).
    #[arg(long)]
    pub cameras: PathBuf,
    /// Output directory; one `<id>.png` per view.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Per-image params sidecar; views without an entry use identity params. [default: none]
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Render only this view id. [default: all views]
    #[arg(long)]
    pub view: Option<String>,
    /// Use the Monte-Carlo blur oracle with this many samples instead of the closed form. [default: off]
    #[arg(long)]
    pub mc_oracle: Option<usize>,
    /// Seed of the Monte-Carlo oracle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write unclamped float images as `<id>.npy`.
    #[arg(long, default_value_t = false)]
    pub npy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Reference {
    /// The observed (possibly corrupted) dataset images.
    Images,
    /// The sharp ground-truth renders of a synthetic dataset.
    Sharp,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// Frozen scene PLY.
    #[arg(long)]
    pub scene: PathBuf,
    /// Dataset directory supplying cameras and target images.
    #[arg(long)]
    pub data: PathBuf,
    /// Output params sidecar with one entry per adapted view.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Comma-separated view ids. [default: all views]
    #[arg(long, value_delimiter = ',')]
    pub views: Vec<String>,
    /// Training params sidecar; adaptation starts from its mean color transform. [default: identity color]
    #[arg(long)]
    pub train_params: Option<PathBuf>,
    /// Optimization steps; overrides adapt.steps. [default: 1000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Which images to adapt to.
    #[arg(long, value_enum, default_value_t = Reference::Images)]
    pub target: Reference,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scene PLY.
    #[arg(long)]
    pub scene: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Per-image params sidecar (e.g. from `adapt`); views without an entry use identity params. [default: none]
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// CSV output path. [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Images the renders are compared against.
    #[arg(long, value_enum, default_value_t = Reference::Images)]
    pub reference: Reference,
    /// Number of test views to select; overrides selection.k. [default: 10]
    #[arg(long)]
    pub k: Option<usize>,
    /// Minimum camera distance between selected views; overrides selection.min_dist. [default: 0.5]
    #[arg(long)]
    pub min_dist: Option<f64>,
    /// Minimum angle (degrees) between selected optical axes; overrides selection.min_angle. [default: 60]
    #[arg(long)]
    pub min_angle: Option<f64>,
    /// How the distance and angle constraints combine; overrides selection.mode. [default: conjunctive]
    #[arg(long, value_enum)]
    pub conflict_mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Conjunctive,
    Disjunctive,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Scene PLY to check instead of the generated fixture. [default: generated]
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Primitives in the generated fixture scene.
    #[arg(long, default_value_t = 5)]
    pub primitives: usize,
    /// Image width and height of the check camera.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Seed of the generated fixture scene.
    #[arg(long, default_value_t = 21)]
    pub seed: u64,
    /// Seed of the random loss adjoint.
    #[arg(long, default_value_t = 3)]
    pub adjoint_seed: u64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Fitted scene PLY.
    #[arg(long)]
    pub scene: PathBuf,
    /// Per-image params sidecar from `fit`.
    #[arg(long)]
    pub params: PathBuf,
    /// Output PLY.
    #[arg(long)]
    pub out: PathBuf,
    /// Absorb this view's color transform instead of the mean over all views. [default: mean]
    #[arg(long)]
    pub view: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Fit(a) => commands::fit(a),
        Command::Render(a) => commands::render(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Eval(a) => commands::eval(a),
        Command::Check(a) => commands::check(a),
        Command::Export(a) => commands::export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(f.error()));
            ExitCode::from(f.code())
        }
    }
}

/// The error chain joined with `: `, dropping causes whose text the previous
/// message already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}
