//! `lithoscan` — pipeline driver for kidney stone patch classification.
//!
//! Stages compose through files: `synth` writes a corpus, `extract` cuts
//! the patch grids, `balance` equalizes class counts, `featurize` writes
//! descriptor files, `train`/`evaluate`/`ablate`/`embed` consume them.
//! Every artifact gets a `.meta.json` sidecar carrying the full
//! configuration, the seed and the SHA-256 digests of its inputs, so any
//! stage can be reproduced exactly.

mod meta;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable overriding the default output root.
const OUT_ROOT_ENV: &str = "LITHOSCAN_OUT";

#[derive(Parser)]
#[command(
    name = "lithoscan",
    version,
    about = "Kidney stone patch classification pipeline"
)]
struct Cli {
    /// Worker threads (0 = automatic). Results are identical for any
    /// worker count.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic four-class corpus (images, masks, manifest).
    Synth(SynthArgs),
    /// Extract the masked patch grid from every manifest entry.
    Extract(ExtractArgs),
    /// Equalize per-class patch counts by over- or under-sampling.
    Balance(BalanceArgs),
    /// Compute feature vectors from a patch directory.
    Featurize(FeaturizeArgs),
    /// Train one tree-ensemble model on a feature file.
    Train(TrainArgs),
    /// Stratified k-fold cross-validation on a feature file.
    Evaluate(EvaluateArgs),
    /// Sweep feature combos, patch sizes and view modes.
    Ablate(AblateArgs),
    /// Export a 3-D PCA embedding of a feature file.
    Embed(EmbedArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (default: <root>/corpus).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Images per class per view.
    #[arg(long, default_value_t = 25)]
    images: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 768)]
    image_size: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Stamp a blue instrument bar on every fifth image.
    #[arg(long, default_value_t = false)]
    with_instrument: bool,
}

#[derive(Args)]
struct ExtractArgs {
    /// Corpus manifest file.
    #[arg(long)]
    manifest: PathBuf,
    /// Output patch directory (default: <root>/patches).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    patch_side: u32,
    #[arg(long, default_value_t = 20)]
    max_overlap: u32,
    /// Rejection threshold on the non-stone (and instrument) fraction.
    #[arg(long, default_value_t = 0.10)]
    max_nonstone: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BalanceArgs {
    /// Patch directory written by `extract`.
    #[arg(long)]
    patches: PathBuf,
    /// Corpus manifest; required for over-sampling (source images are
    /// re-drawn from it).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `over` or `under`.
    #[arg(long)]
    mode: String,
    /// Output patch directory (default: <root>/balanced).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    patch_side: u32,
    #[arg(long, default_value_t = 20)]
    max_overlap: u32,
    #[arg(long, default_value_t = 0.10)]
    max_nonstone: f64,
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Patch directory.
    #[arg(long)]
    patches: PathBuf,
    /// Output feature file (default: <root>/features-<view>.tsv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `surface`, `section` or `mixed`.
    #[arg(long, default_value = "surface")]
    view: String,
    /// LBP window side (5, 7 or 9).
    #[arg(long, default_value_t = 5)]
    lbp_window: u32,
    /// Descriptor blocks, e.g. `lbp+ehsv`, `eh`, `lbp+eh`.
    #[arg(long, default_value = "lbp+ehsv")]
    combo: String,
    /// Seed for the mixed-view pairing.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct LearnerArgs {
    /// `rf`, `bagging`, `adaboost` or `gbt`.
    #[arg(long, default_value = "rf")]
    kind: String,
    /// `paper` (reference hyperparameters) or `desk` (scaled down).
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Override the preset's estimator count.
    #[arg(long)]
    n_estimators: Option<usize>,
    /// Override the preset's maximum tree depth.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Override the preset's learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature file written by `featurize`.
    #[arg(long)]
    features: PathBuf,
    /// Output model file (default: <root>/model.json).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    learner: LearnerArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Feature file written by `featurize`.
    #[arg(long)]
    features: PathBuf,
    /// Output report directory (default: <root>/report).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// `per-patch` (reference behavior) or `per-stone` (leak-free).
    #[arg(long, default_value = "per-patch")]
    grouping: String,
    #[command(flatten)]
    learner: LearnerArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// Corpus manifest file.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory (default: <root>/ablation).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated descriptor combos.
    #[arg(long, default_value = "eh,es,ev,ehsv,lbp,lbp+eh,lbp+ehsv")]
    combos: String,
    /// Comma-separated patch sides.
    #[arg(long, default_value = "256")]
    patch_sides: String,
    /// Comma-separated views (`surface`, `section`, `mixed`).
    #[arg(long, default_value = "surface,section,mixed")]
    views: String,
    #[arg(long, default_value_t = 20)]
    max_overlap: u32,
    #[arg(long, default_value_t = 0.10)]
    max_nonstone: f64,
    #[arg(long, default_value_t = 5)]
    lbp_window: u32,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "per-patch")]
    grouping: String,
    #[command(flatten)]
    learner: LearnerArgs,
}

#[derive(Args)]
struct EmbedArgs {
    /// Feature file written by `featurize`.
    #[arg(long)]
    features: PathBuf,
    /// Output TSV file (default: <root>/embedding.tsv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of principal components.
    #[arg(long, default_value_t = 3)]
    dim: usize,
}

/// Default output root: `$LITHOSCAN_OUT` or `./lithoscan-out`.
fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("lithoscan-out"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
        {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Synth(args) => stages::synth(args),
        Command::Extract(args) => stages::extract(args),
        Command::Balance(args) => stages::balance(args),
        Command::Featurize(args) => stages::featurize(args),
        Command::Train(args) => stages::train(args),
        Command::Evaluate(args) => stages::evaluate(args),
        Command::Ablate(args) => stages::ablate(args),
        Command::Embed(args) => stages::embed(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Single machine-parseable line on stderr.
            let msg = format!("{e:#}").replace('\n', "; ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
