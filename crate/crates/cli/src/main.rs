mod commands;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "gaussblend", version, about = "Gaussian blendshape head avatars")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GAUSSBLEND_THREADS")]
    threads: Option<usize>,
    /// Single-threaded execution for bit-reproducible outputs.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic toy-head dataset.
    Synth(SynthArgs),
    /// Initialize an avatar from a mesh blendshape model.
    Init(InitArgs),
    /// Train an avatar on a dataset.
    Train(TrainArgs),
    /// Render a frame stream to PNG files.
    Render(RenderArgs),
    /// Time blend, pose and render stages on random parameter streams.
    Bench(BenchArgs),
    /// Self-reenactment metrics on the last frames of a dataset.
    Eval(EvalArgs),
    /// Serve the live-viewer websocket protocol.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scenario JSON (defaults apply to missing fields).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override the frame count.
    #[arg(long)]
    frames: Option<usize>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct InitArgs {
    /// Mesh blendshape model (`.gbm`).
    #[arg(long)]
    model: PathBuf,
    /// Initialization config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Training config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output avatar; its `.state` sidecar holds the optimizer state.
    #[arg(long)]
    out: PathBuf,
    /// Starting avatar (default: initialize from the dataset's model).
    #[arg(long, conflicts_with = "resume")]
    init: Option<PathBuf>,
    /// Initialization config used when no starting avatar is given
    /// (default: the dataset's `scenario.json`, else built-in defaults).
    #[arg(long, conflicts_with_all = ["init", "resume"])]
    init_config: Option<PathBuf>,
    /// Resume from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Metrics CSV (default: `<out>.metrics.csv`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Override `optimizer.iterations`.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Renderer {
    Tiled,
    Reference,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    avatar: PathBuf,
    /// Frame parameters (`frames.jsonl`).
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Renderer::Tiled)]
    renderer: Renderer,
    #[arg(long, default_value_t = 16)]
    tile_size: u32,
    /// Also write linear RGB as `.npy` next to each PNG.
    #[arg(long)]
    npy: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Avatar to replay; without it a random avatar of `--gaussians` and
    /// `--blendshapes` is used.
    #[arg(long)]
    avatar: Option<PathBuf>,
    #[arg(long, default_value_t = 70_000)]
    gaussians: usize,
    #[arg(long, default_value_t = 50)]
    blendshapes: usize,
    #[arg(long, default_value_t = 3)]
    sh_degree: usize,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// blend, pose, update (blend then pose), render or all.
    #[arg(long, default_value = "all")]
    stage: String,
    #[arg(long, default_value_t = 512)]
    width: u32,
    #[arg(long, default_value_t = 512)]
    height: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Number of final frames to evaluate.
    #[arg(long)]
    holdout: usize,
    /// Output prefix: writes `<out>.json` and `<out>.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    tile_size: u32,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    avatar: PathBuf,
    /// Port to listen on (0 picks a free one; the address is printed).
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
}

/// Flag combinations rejected before any work starts.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else if err.chain().any(|e| e.downcast_ref::<gaussblend::Error>().is_some()) {
        EXIT_DATA
    } else {
        EXIT_RUNTIME
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Init(a) => commands::init(a),
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Bench(a) => commands::bench(a),
        Command::Eval(a) => commands::eval(a),
        Command::Serve(a) => serve::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
