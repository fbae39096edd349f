//! Command-line front end: matrix filtering, windowed backtests, spectral
//! diagnostics, synthetic data generation and dendrogram export.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use bahc::baselines::{apply_filter, FilterMethod};
use bahc::harness::{
    evaluate_window, run_experiment, summarize, synth_hierarchical, ExperimentData, Metric,
    SimulationSpec, SynthConfig,
};
use bahc::hierclust::{average_linkage, cophenetic_matrix, correlation_to_distance, hcal_filter};
use bahc::matrix::{
    frobenius_corr, frobenius_cov, min_eigenvalue, renormalize_correlation, sample_correlation,
    sample_covariance, CorrelationMatrix, ReturnsMatrix,
};
use bahc::portfolio::{min_variance_long_only, min_variance_long_short};
use bahc::{io, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "bahc",
    version,
    about = "Correlation/covariance filtering with bootstrapped hierarchies"
)]
struct Cli {
    /// TOML file with default values for the flags below.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for parallel sections (0 = auto).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a returns file (or a correlation matrix) and write the result.
    Filter(FilterArgs),
    /// Run a windowed simulation sweep and write records + summary.
    Backtest(BacktestArgs),
    /// Score filtering methods on one fixed in/out split of a returns file.
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic returns file with a planted nested-block truth.
    Synth(SynthArgs),
    /// Emit the average-linkage linkage table and cophenetic matrix.
    Dendro(DendroArgs),
}

#[derive(Args)]
struct FilterArgs {
    /// Input file (wide returns CSV, or square matrix CSV with --input-kind matrix).
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Kind of the input file.
    #[arg(long, default_value = "returns", value_parser = ["returns", "matrix"])]
    input_kind: String,

    /// Filtering method: sample, hcal, bahc, lw or cv.
    #[arg(long)]
    method: Option<String>,

    /// Bootstrap count for bahc.
    #[arg(long)]
    m: Option<usize>,

    /// Master seed for seeded methods.
    #[arg(long)]
    seed: Option<u64>,

    /// Fold count for cv.
    #[arg(long)]
    folds: Option<usize>,

    /// Output prefix: writes <prefix>.corr.csv and, for returns input, <prefix>.cov.csv.
    #[arg(long, value_name = "PREFIX")]
    output: PathBuf,

    /// Also write minimum-variance weights of the filtered covariance here.
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,

    /// Solve the long-only portfolio for --weights instead of long-short.
    #[arg(long)]
    long_only: bool,
}

#[derive(Args)]
struct BacktestArgs {
    /// Price CSV (wide format, empty cells = missing).
    #[arg(long, value_name = "FILE", conflicts_with = "synthetic")]
    prices: Option<PathBuf>,

    /// Use synthetic nested-block data instead of a price file.
    #[arg(long)]
    synthetic: bool,

    /// Calibration window lengths, comma separated.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    t_in: Option<Vec<usize>>,

    /// Test window length.
    #[arg(long)]
    t_out: Option<usize>,

    /// Assets per simulation.
    #[arg(long)]
    n_assets: Option<usize>,

    /// Simulations per calibration length.
    #[arg(long)]
    n_sims: Option<usize>,

    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Methods to compare, comma separated (sample,hcal,bahc,lw,cv).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    methods: Option<Vec<String>>,

    /// Metrics to record, comma separated (default: all).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    metrics: Option<Vec<String>>,

    /// Bootstrap count for bahc.
    #[arg(long)]
    m: Option<usize>,

    /// Fold count for cv.
    #[arg(long)]
    folds: Option<usize>,

    /// Synthetic hierarchy depth.
    #[arg(long)]
    depth: Option<usize>,

    /// Synthetic correlation levels, strictly decreasing, comma separated.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    rho: Option<Vec<f64>>,

    /// Earliest admissible out-of-sample start date label (price data only).
    #[arg(long, value_name = "DATE")]
    earliest_out: Option<String>,

    /// Output directory for records.ndjson and summary.csv.
    #[arg(long, value_name = "DIR")]
    outdir: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Returns CSV; the first --t-in columns calibrate, the next --t-out test.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    #[arg(long)]
    t_in: Option<usize>,

    /// Test window length (default: everything after the calibration window).
    #[arg(long)]
    t_out: Option<usize>,

    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    methods: Option<Vec<String>>,

    #[arg(long)]
    m: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    folds: Option<usize>,

    /// Output ndjson file (one record per method and metric).
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of objects.
    #[arg(long)]
    n: Option<usize>,

    /// Number of observations.
    #[arg(long)]
    t: Option<usize>,

    #[arg(long)]
    depth: Option<usize>,

    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    rho: Option<Vec<f64>>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output returns CSV.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,

    /// Optional file for the planted correlation matrix.
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct DendroArgs {
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    #[arg(long, default_value = "returns", value_parser = ["returns", "matrix"])]
    input_kind: String,

    /// Linkage table output: one merge per line, `left right height count`.
    #[arg(long, value_name = "FILE")]
    linkage_out: PathBuf,

    /// Optional cophenetic distance matrix output (CSV).
    #[arg(long, value_name = "FILE")]
    cophenetic_out: Option<PathBuf>,
}

/// Defaults loadable from a TOML config file; explicit flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    m: Option<usize>,
    seed: Option<u64>,
    folds: Option<usize>,
    t_in: Option<Vec<usize>>,
    t_out: Option<usize>,
    n_assets: Option<usize>,
    n_sims: Option<usize>,
    methods: Option<Vec<String>>,
    metrics: Option<Vec<String>>,
    threads: Option<usize>,
    depth: Option<usize>,
    rho: Option<Vec<f64>>,
    earliest_out: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidInput(_)
            | Error::ZeroVariance { .. }
            | Error::NonpositiveDiagonal { .. }
            | Error::NonpositivePrice { .. }
            | Error::InsufficientData(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => EXIT_DATA,
            Error::ConvergenceFailure { .. }
            | Error::SingularCovariance { .. }
            | Error::DegenerateBootstrap { .. }
            | Error::NonpositiveEigenvalue { .. }
            | Error::DegenerateCophenetic
            | Error::QpNonConvergence { .. } => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(cli.config.as_deref())?;
    if let Some(threads) = cli.threads.or(cfg.threads) {
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
        }
    }
    match cli.command {
        Command::Filter(args) => cmd_filter(args, &cfg),
        Command::Backtest(args) => cmd_backtest(args, &cfg),
        Command::Diagnose(args) => cmd_diagnose(args, &cfg),
        Command::Synth(args) => cmd_synth(args, &cfg),
        Command::Dendro(args) => cmd_dendro(args),
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_methods(
    tags: &[String],
    m: usize,
    seed: u64,
    folds: usize,
) -> Result<Vec<FilterMethod>, Failure> {
    let tags: Vec<&str> = tags
        .iter()
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .collect();
    if tags.is_empty() {
        return Err(Failure::config("method list is empty"));
    }
    tags.iter()
        .map(|t| {
            FilterMethod::from_tag(t, m, seed, folds).map_err(|e| Failure {
                code: EXIT_CONFIG,
                message: e.to_string(),
            })
        })
        .collect()
}

fn parse_metrics(names: Option<&Vec<String>>) -> Result<Vec<Metric>, Failure> {
    match names {
        None => Ok(Metric::ALL.to_vec()),
        Some(list) => {
            let metrics: Result<Vec<Metric>, Failure> = list
                .iter()
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    Metric::from_name(s).map_err(|e| Failure {
                        code: EXIT_CONFIG,
                        message: e.to_string(),
                    })
                })
                .collect();
            let metrics = metrics?;
            if metrics.is_empty() {
                return Err(Failure::config("metric list is empty"));
            }
            Ok(metrics)
        }
    }
}

fn cmd_filter(args: FilterArgs, cfg: &FileConfig) -> Result<(), Failure> {
    let m = args.m.or(cfg.m).unwrap_or(100);
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let folds = args.folds.or(cfg.folds).unwrap_or(10);
    let method_tag = args
        .method
        .or_else(|| cfg.methods.as_ref().and_then(|v| v.first().cloned()))
        .ok_or_else(|| Failure::config("--method is required"))?;
    let method = FilterMethod::from_tag(&method_tag, m, seed, folds).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: e.to_string(),
    })?;

    let corr_path = output_with_suffix(&args.output, "corr.csv");
    let cov_path = output_with_suffix(&args.output, "cov.csv");

    match args.input_kind.as_str() {
        "returns" => {
            let r = io::read_returns_csv(&args.input)?;
            let (cov_f, corr_f) = apply_filter(&method, &r)?;

            let sample_cov = sample_covariance(&r);
            let sample_corr = sample_correlation(&r)?;
            let corr_dist = frobenius_corr(&corr_f.as_sym().diff(sample_corr.as_sym())?);
            let cov_dist = frobenius_cov(&cov_f.as_sym().diff(sample_cov.as_sym())?);
            let min_corr = min_eigenvalue(corr_f.as_sym())?;
            let min_cov = min_eigenvalue(cov_f.as_sym())?;

            io::write_matrix_csv(&corr_path, corr_f.values(), r.labels())?;
            io::write_matrix_csv(&cov_path, cov_f.values(), r.labels())?;
            println!("method: {method}");
            println!(
                "correlation: min_eigenvalue {min_corr:.6e}, frobenius_to_sample {corr_dist:.6e}"
            );
            println!(
                "covariance: min_eigenvalue {min_cov:.6e}, frobenius_to_sample {cov_dist:.6e}"
            );
            println!("wrote {} and {}", corr_path.display(), cov_path.display());

            if let Some(weights_path) = &args.weights {
                let w = if args.long_only {
                    min_variance_long_only(&cov_f)?
                } else {
                    min_variance_long_short(&cov_f)?
                };
                io::write_weights_csv(weights_path, r.labels(), w.as_slice())?;
                println!("wrote {}", weights_path.display());
            }
        }
        "matrix" => {
            if method.tag() != "hcal" {
                return Err(Failure::config(format!(
                    "matrix input supports only the hcal method, got {method}"
                )));
            }
            if args.weights.is_some() {
                return Err(Failure::config(
                    "--weights needs a returns input (a correlation matrix has no variances)",
                ));
            }
            let (sym, labels) = io::read_matrix_csv(&args.input)?;
            let corr = renormalize_correlation(&sym)?;
            let filtered = hcal_filter(&corr);
            let dist = frobenius_corr(&filtered.as_sym().diff(corr.as_sym())?);
            let min = min_eigenvalue(filtered.as_sym())?;
            io::write_matrix_csv(&corr_path, filtered.values(), &labels)?;
            println!("method: {method}");
            println!("correlation: min_eigenvalue {min:.6e}, frobenius_to_input {dist:.6e}");
            println!("wrote {}", corr_path.display());
        }
        other => return Err(Failure::config(format!("unknown input kind '{other}'"))),
    }
    Ok(())
}

/// `prefix` + `.suffix`, preserving any existing extension in the prefix.
fn output_with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_os_string();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn cmd_backtest(args: BacktestArgs, cfg: &FileConfig) -> Result<(), Failure> {
    let m = args.m.or(cfg.m).unwrap_or(100);
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let folds = args.folds.or(cfg.folds).unwrap_or(10);
    let t_ins = args
        .t_in
        .or_else(|| cfg.t_in.clone())
        .ok_or_else(|| Failure::config("--t-in is required"))?;
    if t_ins.is_empty() {
        return Err(Failure::config("--t-in list is empty"));
    }
    let t_out = args.t_out.or(cfg.t_out).unwrap_or(42);
    let n_assets = args.n_assets.or(cfg.n_assets).unwrap_or(100);
    let n_sims = args.n_sims.or(cfg.n_sims).unwrap_or(100);
    let method_tags = args
        .methods
        .or_else(|| cfg.methods.clone())
        .ok_or_else(|| Failure::config("--methods is required"))?;
    let methods = parse_methods(&method_tags, m, seed, folds)?;
    let metrics = parse_metrics(args.metrics.as_ref().or(cfg.metrics.as_ref()))?;

    let data = if args.synthetic {
        let depth = args.depth.or(cfg.depth).unwrap_or(3);
        let rho_levels = args
            .rho
            .or_else(|| cfg.rho.clone())
            .unwrap_or_else(|| vec![0.7, 0.4, 0.1]);
        ExperimentData::Synthetic(SynthConfig { depth, rho_levels })
    } else {
        let path = args
            .prices
            .ok_or_else(|| Failure::config("either --synthetic or --prices is required"))?;
        ExperimentData::Prices(io::read_prices_csv(&path)?)
    };

    std::fs::create_dir_all(&args.outdir).map_err(Error::from)?;

    let mut all_records = Vec::new();
    for &t_in in &t_ins {
        let spec = SimulationSpec {
            t_in,
            t_out,
            n_assets,
            n_sims,
            seed,
            methods: methods.clone(),
            metrics: metrics.clone(),
            earliest_out_start: args
                .earliest_out
                .clone()
                .or_else(|| cfg.earliest_out.clone()),
        };
        spec.validate().map_err(|e| Failure {
            code: EXIT_CONFIG,
            message: e.to_string(),
        })?;
        all_records.extend(run_experiment(&spec, &data)?);
    }

    let records_path = args.outdir.join("records.ndjson");
    let summary_path = args.outdir.join("summary.csv");
    io::write_records_ndjson(&records_path, &all_records)?;
    io::write_summary_csv(&summary_path, &summarize(&all_records))?;
    println!(
        "{} records ({} NA) -> {} and {}",
        all_records.len(),
        all_records.iter().filter(|r| r.value.is_none()).count(),
        records_path.display(),
        summary_path.display()
    );
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs, cfg: &FileConfig) -> Result<(), Failure> {
    let m = args.m.or(cfg.m).unwrap_or(100);
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let folds = args.folds.or(cfg.folds).unwrap_or(10);
    let t_in = args
        .t_in
        .or_else(|| cfg.t_in.as_ref().and_then(|v| v.first().copied()))
        .ok_or_else(|| Failure::config("--t-in is required"))?;
    let method_tags = args
        .methods
        .or_else(|| cfg.methods.clone())
        .unwrap_or_else(|| vec!["sample".into(), "hcal".into(), "bahc".into()]);
    let methods = parse_methods(&method_tags, m, seed, folds)?;

    let r = io::read_returns_csv(&args.input)?;
    let total = r.n_features();
    if t_in < 2 || t_in + 2 > total {
        return Err(Failure::from(Error::InsufficientData(format!(
            "t_in {t_in} leaves no out-of-sample window in {total} observations"
        ))));
    }
    let t_out = args.t_out.unwrap_or(total - t_in).min(total - t_in);
    if t_out < 2 {
        return Err(Failure::config(
            "out-of-sample window must have >= 2 observations",
        ));
    }

    let split = |first: usize, len: usize| {
        ReturnsMatrix::with_labels(
            r.data().columns(first, len).into_owned(),
            r.labels().to_vec(),
        )
        .map_err(Failure::from)
    };
    let r_in = split(0, t_in)?;
    let r_out = split(t_in, t_out)?;

    let metrics = vec![
        Metric::FrobCorr,
        Metric::FrobCov,
        Metric::OracleStabilityCorr,
        Metric::OracleStabilityCov,
        Metric::EpsHi,
        Metric::EpsLow,
    ];
    let records = evaluate_window(&r_in, &r_out, &methods, &metrics);
    io::write_records_ndjson(&args.output, &records)?;
    println!(
        "{} diagnostic records -> {}",
        records.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs, cfg: &FileConfig) -> Result<(), Failure> {
    let n = args.n.or(cfg.n_assets).unwrap_or(100);
    let t = args
        .t
        .or_else(|| cfg.t_in.as_ref().and_then(|v| v.first().copied()))
        .unwrap_or(250);
    let depth = args.depth.or(cfg.depth).unwrap_or(3);
    let rho = args
        .rho
        .or_else(|| cfg.rho.clone())
        .unwrap_or_else(|| vec![0.7, 0.4, 0.1]);
    let seed = args.seed.or(cfg.seed).unwrap_or(0);

    let (r, c_true) = synth_hierarchical(n, t, depth, &rho, seed)?;
    io::write_returns_csv(&args.output, &r)?;
    println!(
        "wrote {} ({n} objects x {t} observations)",
        args.output.display()
    );
    if let Some(truth) = &args.truth {
        io::write_matrix_csv(truth, c_true.values(), r.labels())?;
        println!("wrote {}", truth.display());
    }
    Ok(())
}

fn cmd_dendro(args: DendroArgs) -> Result<(), Failure> {
    let (corr, labels): (CorrelationMatrix, Vec<String>) = match args.input_kind.as_str() {
        "returns" => {
            let r = io::read_returns_csv(&args.input)?;
            (sample_correlation(&r)?, r.labels().to_vec())
        }
        "matrix" => {
            let (sym, labels) = io::read_matrix_csv(&args.input)?;
            (renormalize_correlation(&sym)?, labels)
        }
        other => return Err(Failure::config(format!("unknown input kind '{other}'"))),
    };

    let dend = average_linkage(&correlation_to_distance(&corr));
    std::fs::write(&args.linkage_out, dend.to_linkage_table()).map_err(Error::from)?;
    println!("wrote {}", args.linkage_out.display());

    if let Some(coph_path) = &args.cophenetic_out {
        let coph = cophenetic_matrix(&dend);
        io::write_matrix_csv(coph_path, coph.values(), &labels)?;
        println!("wrote {}", coph_path.display());
    }
    Ok(())
}
