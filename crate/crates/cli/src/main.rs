//! `saln`: run batch selections on feature files, train and compare
//! selection strategies, and generate synthetic feature files.
//!
//! Exit codes: 0 success, 2 invalid flags or configuration, 3 I/O or file
//! format error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use saln_core::data::{self, BlobParams, FeatureFormat, SplitSpec};
use saln_core::experiment::{self, DatasetSource, MetricsFormat, Seeds, TrainingConfig};
use saln_core::model::{self, Architecture};
use saln_core::selection::{self, SelectionConfig, Strategy};
use saln_core::{Error, ErrorKind};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "saln", version, about = "Spectral joint batch selection and strategy comparison")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select rows from a feature file, treating the whole file as one batch.
    Select(SelectArgs),
    /// Train one strategy and write per-epoch metrics.
    Train(TrainArgs),
    /// Train several strategies under identical seeds and tabulate them.
    Compare(CompareArgs),
    /// Write a synthetic Gaussian-blob feature file.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Binary,
    Csv,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Binary => FeatureFormat::Binary,
            FormatArg::Csv => FeatureFormat::Csv,
        }
    }
}

fn resolve_format(flag: Option<FormatArg>, path: &Path) -> FeatureFormat {
    flag.map_or_else(|| FeatureFormat::from_path(path), FeatureFormat::from)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchArg {
    Linear,
    Mlp,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Feature file (binary, or CSV when the name ends in .csv).
    #[arg(long)]
    input: PathBuf,
    /// Override the format implied by the file extension.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// saln or random; jest needs per-sample losses and is only available in training.
    #[arg(long, default_value = "saln", value_parser = parse_select_strategy)]
    strategy: Strategy,
    /// Fraction of the batch to discard, in [0, 1).
    #[arg(long, default_value_t = 0.8, value_parser = parse_filter_ratio)]
    filter_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the selection JSON.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Clone)]
enum DatasetArg {
    Blobs,
    File(PathBuf),
}

fn parse_dataset(s: &str) -> Result<DatasetArg, String> {
    match s {
        "blobs" => Ok(DatasetArg::Blobs),
        _ => match s.strip_prefix("file:") {
            Some(path) if !path.is_empty() => Ok(DatasetArg::File(PathBuf::from(path))),
            _ => Err("expected `blobs` or `file:<path>`".into()),
        },
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse::<Strategy>().map_err(|e| e.to_string())
}

fn parse_select_strategy(s: &str) -> Result<Strategy, String> {
    match parse_strategy(s)? {
        st @ (Strategy::Saln | Strategy::Random) => Ok(st),
        other => Err(format!("`select` supports saln and random, not {other}")),
    }
}

fn parse_filter_ratio(s: &str) -> Result<f64, String> {
    let r: f64 = s.parse().map_err(|e| format!("{e}"))?;
    selection::validate_filter_ratio(r).map_err(|e| e.to_string())?;
    Ok(r)
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive and finite"))
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

/// Flags shared by `train` and `compare`.
#[derive(Debug, Args)]
struct TrainFlags {
    /// `blobs` for synthetic data or `file:<path>` for a labelled feature file.
    #[arg(long, default_value = "blobs", value_parser = parse_dataset)]
    dataset: DatasetArg,
    /// Blob sample count.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Blob feature dimension.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    /// Blob class count.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..))]
    classes: u64,
    /// Blob mean separation.
    #[arg(long, default_value_t = 6.0, value_parser = parse_positive)]
    separation: f64,
    #[arg(long, default_value_t = 0.8, value_parser = parse_filter_ratio)]
    filter_ratio: f64,
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(2..))]
    batch_size: u64,
    /// Base seed; data, init, shuffle and selection seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = model::DEFAULT_LEARNING_RATE, value_parser = parse_positive)]
    lr: f64,
    #[arg(long, default_value_t = model::DEFAULT_MOMENTUM)]
    momentum: f64,
    #[arg(long, value_enum, default_value = "linear")]
    arch: ArchArg,
    /// Hidden width for `--arch mlp`.
    #[arg(long, default_value_t = model::DEFAULT_HIDDEN_WIDTH as u64, value_parser = clap::value_parser!(u64).range(1..))]
    hidden: u64,
    /// JEST greedy chunk count.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    chunk_count: u64,
    /// JEST multiplier for samples selected in earlier batches.
    #[arg(long, default_value_t = 0.001, value_parser = parse_fraction)]
    history_weight: f64,
    /// JEST penalty on similarity to rows already chosen.
    #[arg(long, default_value_t = 0.5)]
    redundancy_weight: f64,
    #[arg(long, default_value_t = 0.7, value_parser = parse_fraction)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.15, value_parser = parse_fraction)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0.15, value_parser = parse_fraction)]
    test_fraction: f64,
}

impl TrainFlags {
    fn config(&self, strategy: Strategy) -> saln_core::Result<TrainingConfig> {
        let seeds = Seeds::from_base(self.seed);
        let dataset = match &self.dataset {
            DatasetArg::Blobs => DatasetSource::Blobs(BlobParams {
                n: self.n,
                d: self.d as usize,
                classes: self.classes as usize,
                separation: self.separation,
            }),
            DatasetArg::File(path) => DatasetSource::File {
                path: path.clone(),
                format: FeatureFormat::from_path(path),
            },
        };
        let architecture = match self.arch {
            ArchArg::Linear => Architecture::Linear,
            ArchArg::Mlp => Architecture::Mlp {
                hidden_width: self.hidden as usize,
            },
        };
        let cfg = TrainingConfig {
            epochs: self.epochs as usize,
            batch_size: self.batch_size as usize,
            learning_rate: self.lr,
            momentum: self.momentum,
            selection: SelectionConfig {
                strategy,
                filter_ratio: self.filter_ratio,
                chunk_count: self.chunk_count as usize,
                history_suppression_weight: self.history_weight,
                redundancy_weight: self.redundancy_weight,
                seed: seeds.selection,
            },
            architecture,
            seeds,
            dataset,
            split: SplitSpec {
                train_fraction: self.train_fraction,
                val_fraction: self.val_fraction,
                test_fraction: self.test_fraction,
                shuffle_seed: seeds.data,
            },
        };
        cfg.validate()?;
        if let DatasetSource::Blobs(params) = cfg.dataset {
            if params.n < params.classes {
                return Err(Error::Config(format!("--n {} is smaller than --classes {}", params.n, params.classes)));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value = "standard", value_parser = parse_strategy)]
    strategy: Strategy,
    #[command(flatten)]
    flags: TrainFlags,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    metrics_out: PathBuf,
    /// Full run record as JSON; defaults to the metrics path with a .json extension.
    #[arg(long)]
    summary_out: Option<PathBuf>,
    /// Final-layer weight values, histogram and statistics as JSON.
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Comma-separated list, e.g. standard,saln,jest,random.
    #[arg(long, value_delimiter = ',', default_value = "standard,saln,jest,random", value_parser = parse_strategy)]
    strategies: Vec<Strategy>,
    #[command(flatten)]
    flags: TrainFlags,
    /// Comparison report JSON.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..))]
    classes: u64,
    #[arg(long, default_value_t = 6.0, value_parser = parse_positive)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    output: PathBuf,
}

fn cmd_select(args: &SelectArgs) -> saln_core::Result<()> {
    let cfg = SelectionConfig {
        seed: args.seed,
        ..SelectionConfig::new(args.strategy, args.filter_ratio)
    };
    cfg.validate()?;
    let ds = data::load_features(&args.input, resolve_format(args.format, &args.input))?;
    let batch = ds.as_batch(0)?;
    let result = selection::select(&batch, &cfg, None)?;
    fs::write(&args.output, result.to_json()?)?;
    if result.degenerate_spectrum {
        eprintln!("warning: Fiedler eigenvalue is not simple; the selection is one of several valid choices");
    }
    println!(
        "strategy={} kept={} of {}",
        result.strategy,
        result.indices.len(),
        batch.len()
    );
    Ok(())
}

fn summary_path(args: &TrainArgs) -> saln_core::Result<PathBuf> {
    let path = args
        .summary_out
        .clone()
        .unwrap_or_else(|| args.metrics_out.with_extension("json"));
    if path == args.metrics_out {
        return Err(Error::Config(
            "--metrics-out and the JSON summary path coincide; pass --summary-out".into(),
        ));
    }
    Ok(path)
}

fn cmd_train(args: &TrainArgs) -> saln_core::Result<()> {
    let cfg = args.flags.config(args.strategy)?;
    let summary_out = summary_path(args)?;
    let run = experiment::train(&cfg)?;
    experiment::export_metrics(&run.record, &args.metrics_out, MetricsFormat::Csv)?;
    experiment::export_metrics(&run.record, &summary_out, MetricsFormat::Json)?;
    if let Some(path) = &args.weights_out {
        experiment::export_weight_summary(&run.model, path)?;
    }
    let s = &run.record.summary;
    println!(
        "strategy={} test_acc={:.4} total_time_s={:.4}",
        s.strategy, s.test_accuracy, s.total_wall_time_s
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> saln_core::Result<()> {
    let cfg = args.flags.config(Strategy::Standard)?;
    let report = experiment::compare_strategies(&cfg, &args.strategies)?;
    fs::write(&args.output, report.to_json()?)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> saln_core::Result<()> {
    let params = BlobParams {
        n: args.n as usize,
        d: args.d as usize,
        classes: args.classes as usize,
        separation: args.separation,
    };
    if params.n < params.classes {
        return Err(Error::Config(format!("--n {} is smaller than --classes {}", params.n, params.classes)));
    }
    let ds = data::generate_blobs(params, args.seed)?;
    data::write_features(&ds, &args.output, resolve_format(args.format, &args.output))?;
    println!("wrote {} samples x {} features to {}", ds.len(), ds.dim(), args.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Usage errors exit 2, --help and --version exit 0.
        Err(e) => e.exit(),
    };
    let outcome = match &cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Train(a) => cmd_train(a),
        Command::Compare(a) => cmd_compare(a),
        Command::GenData(a) => cmd_gen_data(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Io => EXIT_IO,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            })
        }
    }
}
