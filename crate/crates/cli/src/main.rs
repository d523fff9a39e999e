//! `raptor` command-line driver.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use raptor::experiments::{BuiltinTask, EvalTask};
use raptor::heads::{DEFAULT_GRID, DEFAULT_RATIOS, DEFAULT_SIZES};
use raptor::reduction::{AxisSet, ScaleMode};
use raptor::simlab::SimTask;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "raptor",
    version,
    about = "Random-projection embeddings of 3D volumes from 2D slice tokens"
)]
struct Cli {
    /// Master seed for encoders, projections, data and splits.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "RAPTOR_THREADS")]
    threads: Option<usize>,
    /// Directory receiving run_config.json and every table.
    #[arg(
        long = "output-dir",
        visible_alias = "output_dir",
        global = true,
        default_value = "raptor_out"
    )]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Embed a directory of volumes or token files into a REMB file.
    Embed(EmbedArgs),
    /// Fit heads on an embedding file and report test metrics.
    Eval(EvalArgs),
    /// AUROC across projection sizes and seeds.
    Kstudy(KStudyArgs),
    /// AUROC for every nonempty subset of views.
    Viewstudy(ViewStudyArgs),
    /// Digit-insertion simulation across resolutions.
    Simulate(SimulateArgs),
    /// Test AUROC against the number of training samples.
    Scarcity(ScarcityArgs),
    /// Numerical checks of the projection guarantees.
    Verify(VerifyArgs),
    /// Stage timings of the embedding pipeline.
    Bench(BenchArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Embed(_) => "embed",
            Command::Eval(_) => "eval",
            Command::Kstudy(_) => "kstudy",
            Command::Viewstudy(_) => "viewstudy",
            Command::Simulate(_) => "simulate",
            Command::Scarcity(_) => "scarcity",
            Command::Verify(_) => "verify",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EncoderArg {
    /// Seeded random-feature encoder applied to volumes.
    Synthetic,
    /// Precomputed `<id>.<axis>.rtok` token files.
    Tokens,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScaleArg {
    Unit,
    Invsqrtk,
}

impl From<ScaleArg> for ScaleMode {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Unit => ScaleMode::Unit,
            ScaleArg::Invsqrtk => ScaleMode::InvSqrtK,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SimTaskArg {
    Location,
    Size,
}

impl From<SimTaskArg> for SimTask {
    fn from(t: SimTaskArg) -> Self {
        match t {
            SimTaskArg::Location => SimTask::Location,
            SimTaskArg::Size => SimTask::Size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SuiteArg {
    Jl,
    Alpha,
    Bounds,
    Overlap,
    All,
}

fn axis_set(s: &str) -> Result<AxisSet, String> {
    s.parse()
}

fn serialize_axes<S: serde::Serializer>(axes: &AxisSet, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(axes)
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(['x', ','])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[usize; 3]>::try_from(parts).map_err(|_| "expected three dimensions such as 64x64x64".to_string())
}

#[derive(Debug, Args, Serialize)]
struct EmbedArgs {
    /// Directory of `.rvol` / `.idx3` volumes, or of token files.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = EncoderArg::Synthetic)]
    encoder: EncoderArg,
    /// Projection rows.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Views to keep, any combination of a, c, s.
    #[arg(long, default_value = "acs", value_parser = axis_set)]
    #[serde(serialize_with = "serialize_axes")]
    axes: AxisSet,
    #[arg(long, value_enum, default_value_t = ScaleArg::Invsqrtk)]
    scale: ScaleArg,
    /// Synthetic encoder patch side.
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
    /// Synthetic encoder channels; defaults to patch_size².
    #[arg(long)]
    token_dim: Option<usize>,
    /// Resample volumes to this cube side before encoding.
    #[arg(long)]
    side: Option<usize>,
    /// Also read headerless `.raw` u8 volumes with these dims (e.g. 64x64x64).
    #[arg(long, value_parser = parse_dims)]
    raw_dims: Option<[usize; 3]>,
    /// Output file; defaults to `<output-dir>/embeddings.remb`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// CSV with an `id` column; every other column except `path` is a target.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "cls")]
    task: EvalTask,
    /// L2 penalties tried on the validation split.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    grid: Vec<f64>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATIOS)]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Hidden width of the regression MLP.
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
}

#[derive(Debug, Args, Serialize)]
struct KStudyArgs {
    #[arg(long, default_value = "blob")]
    task: BuiltinTask,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10, 100, 150])]
    k_list: Vec<usize>,
    /// Projection seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    #[arg(long, value_enum, default_value_t = ScaleArg::Invsqrtk)]
    scale: ScaleArg,
}

#[derive(Debug, Args, Serialize)]
struct ViewStudyArgs {
    #[arg(long, default_value = "rod")]
    task: BuiltinTask,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = SimTaskArg::Size)]
    task: SimTaskArg,
    /// Digit sizes (size task) or separations (location task) in pixels.
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 32, 16, 8])]
    res: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
    #[arg(long, default_value_t = 32)]
    token_dim: usize,
    #[arg(long, default_value_t = 64)]
    embed_side: usize,
    /// Fixed digit; a random digit per sample when absent.
    #[arg(long)]
    digit: Option<u8>,
    /// IDX image file for digits instead of the built-in glyphs.
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
    /// Directory of host volumes replacing the procedural phantom.
    #[arg(long)]
    host_dir: Option<PathBuf>,
    /// Per-subject deformation of the shared phantom layout.
    #[arg(long, default_value_t = 0.005)]
    jitter: f64,
    /// Write every generated volume with labels.csv and records.jsonl.
    #[arg(long)]
    save_volumes: bool,
}

#[derive(Debug, Args, Serialize)]
struct ScarcityArgs {
    #[arg(long, default_value = "blob")]
    task: BuiltinTask,
    #[arg(long, default_value_t = 800)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Debug, Args, Serialize)]
struct VerifyArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [SuiteArg::All])]
    suite: Vec<SuiteArg>,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// Volume sides.
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
    d_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 200])]
    k_list: Vec<usize>,
    /// Volumes per configuration.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    patches_per_side: usize,
    #[arg(long, default_value_t = 64)]
    token_dim: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Also time random projection against PCA.
    #[arg(long)]
    pca: bool,
    #[arg(long, default_value_t = 1024)]
    pca_dim: usize,
    #[arg(long, default_value_t = 200)]
    pca_n: usize,
}

pub struct Globals {
    pub seed: u64,
    pub threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    raptor::par::init_global_threads(threads);
    let config = serde_json::json!({
        "command": cli.command.name(),
        "seed": cli.seed,
        "threads": threads,
        "output_dir": cli.output_dir,
        "args": serde_json::to_value(&cli.command).ok().and_then(|v| v.get(cli.command.name()).cloned()),
    });
    let globals = Globals {
        seed: cli.seed,
        threads,
    };
    let result = output::Output::create(&cli.output_dir, config).and_then(|out| match &cli.command {
        Command::Embed(a) => commands::embed(a, &globals, &out),
        Command::Eval(a) => commands::eval(a, &globals, &out),
        Command::Kstudy(a) => commands::kstudy(a, &globals, &out),
        Command::Viewstudy(a) => commands::viewstudy(a, &globals, &out),
        Command::Simulate(a) => commands::simulate(a, &globals, &out),
        Command::Scarcity(a) => commands::scarcity(a, &globals, &out),
        Command::Verify(a) => commands::verify(a, &globals, &out),
        Command::Bench(a) => commands::bench(a, &globals, &out),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
