mod commands;
mod data;
mod outputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;
use unitsel_core::{OccurrencePolicy, SamplingMode};

#[derive(Debug, Parser)]
#[command(
    name = "unitsel",
    version,
    about = "Speech-unit tokenization and unit-based frame selection"
)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log filter, e.g. `info` or `unitsel_core=debug`. Logs go to stderr.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a k-means codebook over every frame in a manifest.
    TrainCodebook(TrainArgs),
    /// Write a unit file per utterance plus a manifest pointing at them.
    Tokenize(TokenizeArgs),
    /// Build and cache one speaker's reference pool.
    BuildPool(BuildPoolArgs),
    /// Select frames for a predicted unit sequence from a speaker's pool.
    Select(SelectArgs),
    /// Leave-one-out selections for every utterance, as vocoder inputs.
    PrepareVocoderPairs(PairsArgs),
    /// Reference-duration sweep of reconstruction metrics.
    Eval(EvalArgs),
    /// Write a seeded synthetic corpus (features, manifest, codebook).
    SynthCorpus(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Avg,
    Rand,
}

impl From<ModeArg> for SamplingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Avg => SamplingMode::Average,
            ModeArg::Rand => SamplingMode::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OccurrenceArg {
    Earliest,
    Random,
}

impl From<OccurrenceArg> for OccurrencePolicy {
    fn from(o: OccurrenceArg) -> Self {
        match o {
            OccurrenceArg::Earliest => OccurrencePolicy::Earliest,
            OccurrenceArg::Random => OccurrencePolicy::SeededRandom,
        }
    }
}

#[derive(Debug, Args)]
struct SelectionArgs {
    #[arg(long, value_enum, default_value = "avg")]
    mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long, value_enum, default_value = "earliest")]
    occurrence: OccurrenceArg,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 2000)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct BuildPoolArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    speaker: Option<String>,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    predicted_units: PathBuf,
    /// Reference manifest; the pool is built from one speaker's entries.
    #[arg(long, required_unless_present = "pool", conflicts_with = "pool")]
    ref_manifest: Option<PathBuf>,
    #[arg(long)]
    speaker: Option<String>,
    /// Pool cache written by `build-pool`, instead of --ref-manifest.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    codebook: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long)]
    out_features: PathBuf,
    #[arg(long)]
    out_trace: PathBuf,
}

#[derive(Debug, Args)]
struct PairsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    speaker: Option<String>,
    /// Comma-separated reference budgets such as 30s,1min,3min.
    #[arg(long, default_value = "30s,1min,3min")]
    durations: String,
    /// The speaker's last N utterances are targets; the rest are references.
    #[arg(long, default_value_t = 5)]
    n_targets: usize,
    #[arg(long, default_value_t = 20)]
    frame_hop_ms: u32,
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    speakers: usize,
    #[arg(long, default_value_t = 2000)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Reference material per speaker, in seconds.
    #[arg(long, default_value_t = 300.0)]
    ref_seconds: f64,
    #[arg(long, default_value_t = 5)]
    targets: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let filter = match EnvFilter::try_new(&cli.log_level) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: invalid --log-level `{}`: {e}", cli.log_level);
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }

    let seed = cli.seed;
    let result = match cli.command {
        Command::TrainCodebook(a) => commands::train_codebook(a, seed),
        Command::Tokenize(a) => commands::tokenize(a),
        Command::BuildPool(a) => commands::build_pool(a),
        Command::Select(a) => commands::select(a, seed),
        Command::PrepareVocoderPairs(a) => commands::prepare_vocoder_pairs(a, seed),
        Command::Eval(a) => commands::eval(a, seed),
        Command::SynthCorpus(a) => commands::synth_corpus(a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
