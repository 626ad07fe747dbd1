//! `precursor`: extraction, synthesis, training, tuning, evaluation,
//! stacking and importance reporting for attribute-based outcome models.
//!
//! Exit codes: 0 success, 1 finished with warnings, 2 configuration or
//! validation failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "precursor",
    version,
    about = "Predict construction safety outcomes from incident attributes"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PRECURSOR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill the attributes of each case from its narrative.
    Extract(ExtractArgs),
    /// Score extraction against hand-coded attributes.
    Agreement(AgreementArgs),
    /// Generate a synthetic corpus with a planted signal.
    Synth(SynthArgs),
    /// Split cases into train / validation / test files.
    Split(SplitArgs),
    /// Train one model and write a model file.
    Train(TrainArgs),
    /// Grid-search hyperparameters on the validation set.
    Tune(TuneArgs),
    /// Score models on a test file and write metrics tables.
    Evaluate(EvaluateArgs),
    /// Train a forest + boosted-trees stack.
    Stack(StackArgs),
    /// Attribute importance or per-category SVM contributions.
    Importance(ImportanceArgs),
    /// Describe a model file.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Forest,
    Gbm,
    Svm,
}

#[derive(Args)]
pub struct OutcomeArgs {
    /// Outcome to predict (one of the standard outcomes unless --schema is given).
    #[arg(long)]
    outcome: String,
    /// JSON outcome schema `{name, categories}` for non-standard outcomes.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    input: PathBuf,
    /// Lexicon JSON; the bundled starter lexicon when omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
pub struct AgreementArgs {
    /// Cases whose narratives are extracted.
    #[arg(long)]
    input: PathBuf,
    /// Hand-coded `{id, attributes}` lines.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Per-attribute agreement CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Generator spec JSON; the built-in desk-scale spec when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n_cases: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: PathBuf,
    /// Bayes-oracle scores on the generated corpus, as JSON.
    #[arg(long)]
    oracle_out: Option<PathBuf>,
    /// Write the effective spec.
    #[arg(long)]
    spec_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    /// Share of the non-test cases held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Stratify on the first label of this outcome.
    #[arg(long)]
    stratify: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[command(flatten)]
    outcome: OutcomeArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// Family hyperparameters as a JSON object; missing keys take defaults.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: PathBuf,
    /// Train on train and validation combined.
    #[arg(long)]
    r#final: bool,
    /// Boosting rounds for runs without early stopping.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    no_class_weights: bool,
    /// Boosting loss curve CSV (default: <model-out>.curve.csv).
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TuneArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[command(flatten)]
    outcome: OutcomeArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// `default` for the standard grid, or a JSON array of parameter objects.
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Best configuration as a params JSON usable with `train --params`.
    #[arg(long)]
    best_out: Option<PathBuf>,
    #[arg(long)]
    no_class_weights: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    report_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    baseline_trials: usize,
    /// Seed of the random baseline.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
pub struct StackArgs {
    #[command(flatten)]
    outcome: OutcomeArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    forest_params: Option<PathBuf>,
    #[arg(long)]
    gbm_params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    no_class_weights: bool,
    /// Add the SVM's one-hot prediction to the meta inputs (known to hurt).
    #[arg(long)]
    experimental_svm_one_hot: bool,
    #[arg(long)]
    svm_params: Option<PathBuf>,
}

#[derive(Args)]
pub struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    /// The forest's training file, needed for out-of-bag permutation.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    top: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Write the whole container as JSON.
    #[arg(long)]
    dump_json: Option<PathBuf>,
}

/// How a command finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Warnings,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Agreement(a) => commands::agreement(a),
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Tune(a) => commands::tune(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Stack(a) => commands::stack(a),
        Command::Importance(a) => commands::importance(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Warnings) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
