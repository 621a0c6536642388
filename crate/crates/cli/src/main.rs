//! `lrr` — rank and re-rank instance-recognition predictions from
//! precomputed embeddings, and score them with GAP.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal
//! error.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{EnsembleModeArg, FileConfig, TransformModeArg};
use landmark_rerank::metrics::gap;
use landmark_rerank::pipeline::{run_pipeline, PipelineConfig};
use landmark_rerank::rerank::read_predictions;
use landmark_rerank::store::{load_embeddings, load_labels, save_embeddings, FileFormat, Role};
use landmark_rerank::synth::{generate, write_dataset, SynthConfig};
use landmark_rerank::{Error, RerankParams};

#[derive(Parser)]
#[command(
    name = "lrr",
    version,
    about = "Embedding-based recognition ranking with out-of-domain penalization"
)]
struct Cli {
    /// Cap the worker thread count (default: one per CPU).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic benchmark (five files) into a directory.
    Synth(SynthArgs),
    /// Validate an embedding file and convert it to the binary format.
    Ingest(IngestArgs),
    /// Baseline ranking without non-landmark penalties.
    Rank(RankArgs),
    /// Full re-ranking with non-landmark penalties.
    Rerank(RankArgs),
    /// Score a predictions CSV against ground truth.
    Eval(EvalArgs),
    /// All-in-one driver; accepts either flags or a TOML config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the five benchmark files.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    n_classes: usize,
    #[arg(long, default_value_t = 20)]
    train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    n_test_landmark: usize,
    #[arg(long, default_value_t = 900)]
    n_test_distractor: usize,
    #[arg(long, default_value_t = 500)]
    n_nonlandmark_pool: usize,
    #[arg(long, default_value_t = 0.3)]
    class_spread: f32,
    #[arg(long, default_value_t = 0.5)]
    distractor_overlap: f32,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Input encoding.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Destination binary file.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum FormatArg {
    Binary,
    Csv,
}

#[derive(Args, Clone)]
struct RankArgs {
    /// Model directory with test.emb/train.emb/nonlandmark.emb
    /// (repeatable for ensembles).
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Train label CSV; defaults to train_labels.csv in the first model
    /// directory.
    #[arg(long)]
    train_labels: Option<PathBuf>,
    /// Ground-truth CSV; enables train-class filtering and GAP scoring.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Predictions CSV destination.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    k_neighbors: usize,
    #[arg(long, default_value_t = 5)]
    k_train_penalty: usize,
    #[arg(long, default_value_t = 10)]
    k_test_penalty: usize,
    /// Skip the per-test confidence penalty C.
    #[arg(long)]
    no_c_penalty: bool,
    #[arg(long, default_value_t = 1000)]
    n_quantiles: usize,
    #[arg(long, value_enum, default_value_t = TransformModeArg::AllRoles)]
    transform_mode: TransformModeArg,
    #[arg(long, value_enum, default_value_t = EnsembleModeArg::Concat)]
    ensemble: EnsembleModeArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Also write the JSON report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML config file; mutually exclusive with the flag-based interface.
    #[arg(long, conflicts_with_all = ["models", "train_labels", "gt", "out"])]
    config: Option<PathBuf>,

    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k_neighbors: usize,
    #[arg(long, default_value_t = 5)]
    k_train_penalty: usize,
    #[arg(long, default_value_t = 10)]
    k_test_penalty: usize,
    #[arg(long)]
    no_c_penalty: bool,
    #[arg(long, default_value_t = 1000)]
    n_quantiles: usize,
    #[arg(long, value_enum, default_value_t = TransformModeArg::AllRoles)]
    transform_mode: TransformModeArg,
    #[arg(long, value_enum, default_value_t = EnsembleModeArg::Concat)]
    ensemble: EnsembleModeArg,
    /// Also run the unpenalized baseline and print both reports plus the
    /// GAP delta (requires --gt or a ground_truth entry in the config).
    #[arg(long)]
    compare: bool,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(1);
        }
        // ignore failure: the pool may already be initialized in tests
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(args) => run_synth(args),
        Command::Ingest(args) => run_ingest(args),
        Command::Rank(args) => run_rank(args, false),
        Command::Rerank(args) => run_rank(args, true),
        Command::Eval(args) => run_eval(args),
        Command::Pipeline(args) => run_pipeline_cmd(args),
    }
}

enum CliError {
    Core(Error),
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => e.exit_code(),
            CliError::Usage(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            // variant Display strings already include their sources
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        seed: args.seed,
        dim: args.dim,
        n_classes: args.n_classes,
        train_per_class: args.train_per_class,
        n_test_landmark: args.n_test_landmark,
        n_test_distractor: args.n_test_distractor,
        n_nonlandmark_pool: args.n_nonlandmark_pool,
        class_spread: args.class_spread,
        distractor_overlap: args.distractor_overlap,
    };
    let data = generate(&config)?;
    write_dataset(&data, &args.out_dir)?;
    println!(
        "wrote {} test, {} train, {} non-landmark rows (dim {}) to {}",
        data.test.len(),
        data.train.len(),
        data.nonlandmark.len(),
        data.test.dim(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_ingest(args: IngestArgs) -> Result<(), CliError> {
    let format = match args.format {
        FormatArg::Binary => FileFormat::Binary,
        FormatArg::Csv => FileFormat::Csv,
    };
    let set = load_embeddings(&args.input, format, Role::Test)?;
    save_embeddings(&set, &args.output)?;
    println!(
        "ingested {} rows (dim {}) -> {}",
        set.len(),
        set.dim(),
        args.output.display()
    );
    Ok(())
}

fn pipeline_config_from_rank_args(args: &RankArgs, penalize: bool) -> PipelineConfig {
    let mut config = PipelineConfig::new(args.models.clone(), args.out.clone());
    config.train_labels = args.train_labels.clone();
    config.ground_truth = args.gt.clone();
    config.params = RerankParams {
        k_neighbors: args.k_neighbors,
        k_train_penalty: args.k_train_penalty,
        k_test_penalty: args.k_test_penalty,
        apply_c: !args.no_c_penalty,
    };
    config.n_quantiles = args.n_quantiles;
    config.transform_mode = args.transform_mode.into();
    config.ensemble_mode = args.ensemble.into();
    config.penalize = penalize;
    config
}

fn run_rank(args: RankArgs, penalize: bool) -> Result<(), CliError> {
    let config = pipeline_config_from_rank_args(&args, penalize);
    let outcome = run_pipeline(&config)?;
    eprintln!(
        "wrote {} predictions to {}",
        outcome.predictions.len(),
        config.predictions_out.display()
    );
    if let Some(report) = outcome.report {
        print_json(&report, None)?;
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let predictions = read_predictions(&args.predictions)?;
    let ground_truth = load_labels(&args.gt)?;
    let report = gap(&predictions, &ground_truth)?;
    print_json(&report, args.out.as_deref())?;
    Ok(())
}

fn run_pipeline_cmd(args: PipelineArgs) -> Result<(), CliError> {
    let (config, report_path) = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let parsed: FileConfig = toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            parsed.into_pipeline_config(true)
        }
        None => {
            let out = args
                .out
                .clone()
                .ok_or_else(|| CliError::Usage("either --config or --out is required".into()))?;
            let rank_args = RankArgs {
                models: args.models.clone(),
                train_labels: args.train_labels.clone(),
                gt: args.gt.clone(),
                out,
                k_neighbors: args.k_neighbors,
                k_train_penalty: args.k_train_penalty,
                k_test_penalty: args.k_test_penalty,
                no_c_penalty: args.no_c_penalty,
                n_quantiles: args.n_quantiles,
                transform_mode: args.transform_mode,
                ensemble: args.ensemble,
            };
            if rank_args.models.is_empty() {
                return Err(CliError::Usage(
                    "at least one --model directory is required".into(),
                ));
            }
            (
                pipeline_config_from_rank_args(&rank_args, true),
                args.report.clone(),
            )
        }
    };

    if args.compare {
        if config.ground_truth.is_none() {
            return Err(CliError::Usage(
                "--compare requires ground truth (--gt or [input].ground_truth)".into(),
            ));
        }
        let mut baseline_config = config.clone();
        baseline_config.penalize = false;
        baseline_config.predictions_out = config.predictions_out.with_extension("baseline.csv");
        let baseline = run_pipeline(&baseline_config)?;
        let reranked = run_pipeline(&config)?;
        let baseline_report = baseline.report.expect("scored run");
        let reranked_report = reranked.report.expect("scored run");
        let comparison = serde_json::json!({
            "baseline": baseline_report,
            "reranked": reranked_report,
            "gap_delta": reranked_report.gap - baseline_report.gap,
        });
        print_json(&comparison, report_path.as_deref())?;
        return Ok(());
    }

    let outcome = run_pipeline(&config)?;
    eprintln!(
        "wrote {} predictions to {}",
        outcome.predictions.len(),
        config.predictions_out.display()
    );
    if let Some(report) = outcome.report {
        print_json(&report, report_path.as_deref())?;
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(
    value: &T,
    path: Option<&std::path::Path>,
) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| {
        CliError::Core(Error::Internal {
            detail: format!("JSON serialization failed: {e}"),
        })
    })?;
    println!("{text}");
    if let Some(path) = path {
        std::fs::write(path, text.as_bytes()).map_err(|e| {
            CliError::Core(Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
    }
    Ok(())
}
