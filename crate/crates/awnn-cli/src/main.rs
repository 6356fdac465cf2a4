//! Command-line interface: synthesize benchmark instances, impute matrices,
//! run MSE-decay sweeps, and fit log-log slopes.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 estimator failure.

use std::path::PathBuf;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use awnn::estimator::{audit_distance_bounds, fit, oracle_fit, EstimatorConfig};
use awnn::experiments::{
    fit_slope, load_records_csv, run_bench, save_aggregate_json, save_records_csv, BenchSpec,
    ExperimentRecord, Method,
};
use awnn::matrix::{MaskedMatrix, MISSING_TOKEN};
use awnn::synthetic::{generate, SyntheticSpec};
use awnn::{rownn_impute, rownn_tune, usvt_impute, RowNnConfig, UsvtConfig};

const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_ESTIMATOR: i32 = 3;

#[derive(Parser)]
#[command(name = "awnn", version, about = "Adaptively weighted nearest-neighbor matrix completion")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance (theta.csv, data.csv, meta.json).
    Synth(SynthArgs),
    /// Impute a partially observed matrix from CSV.
    Impute(ImputeArgs),
    /// Run a benchmark sweep from a JSON config.
    Bench(BenchArgs),
    /// Fit log-log MSE decay slopes from a results CSV.
    Slope(SlopeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of rows.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Number of columns (defaults to --n).
    #[arg(long)]
    m: Option<usize>,
    /// Latent dimension.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Smoothness exponent in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Signal-to-noise ratio.
    #[arg(long, default_value_t = 1.0)]
    snr: f64,
    /// Observation probability in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImputeArgs {
    /// Input CSV; empty cells or "NaN" mark missing entries.
    #[arg(long)]
    input: PathBuf,
    /// One of: awnn, o-awnn, rownn, usvt.
    #[arg(long)]
    method: String,
    /// Weight-bound failure probability.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Noise variance; required for o-awnn, optional for rownn.
    #[arg(long)]
    sigma2: Option<f64>,
    /// RowNN radius, or "auto" to tune it (rownn only).
    #[arg(long, default_value = "auto")]
    eta2: String,
    /// Exclude each row from its own neighborhoods.
    #[arg(long)]
    no_self: bool,
    /// Output CSV for the imputed matrix.
    #[arg(long)]
    out: PathBuf,
    /// Optional audit JSON (variance trace, bound report, neighborhood sizes).
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Bench spec JSON.
    #[arg(long)]
    config: PathBuf,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional aggregate JSON.
    #[arg(long)]
    aggregate: Option<PathBuf>,
}

#[derive(Args)]
struct SlopeArgs {
    /// Results CSV produced by `bench`.
    #[arg(long)]
    results: PathBuf,
    /// Comma-separated grouping keys among: method, lambda, snr, p.
    #[arg(long, default_value = "method,lambda,snr,p")]
    group_by: String,
}

struct CmdError {
    code: i32,
    message: String,
}

impl CmdError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }

    fn estimator(message: impl Into<String>) -> Self {
        Self { code: EXIT_ESTIMATOR, message: message.into() }
    }
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return EXIT_USAGE;
        }
    };
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
            eprintln!("warning: thread pool already initialized; --threads ignored");
        }
    }
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Impute(args) => cmd_impute(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Slope(args) => cmd_slope(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CmdError> {
    let spec = SyntheticSpec {
        n: args.n,
        m: args.m.unwrap_or(args.n),
        d: args.d,
        lambda: args.lambda,
        snr: args.snr,
        p: args.p,
        seed: args.seed,
    };
    let instance = generate(&spec).map_err(|e| CmdError::usage(e.to_string()))?;
    instance.save_to_dir(&args.out).map_err(|e| CmdError::data(e.to_string()))?;
    eprintln!(
        "wrote {}, {} and {}",
        args.out.join("theta.csv").display(),
        args.out.join("data.csv").display(),
        args.out.join("meta.json").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AuditJson {
    method: String,
    sigma2_hat: Option<f64>,
    sigma2_trace: Option<Vec<f64>>,
    converged: Option<bool>,
    eta2: Option<f64>,
    non_imputable: usize,
    max_neighborhood: Option<u32>,
    mean_neighborhood: Option<f64>,
    bound_violations: Option<usize>,
    bound_checked_cells: Option<usize>,
}

fn cmd_impute(args: ImputeArgs) -> Result<(), CmdError> {
    let method = Method::from_str(&args.method).map_err(CmdError::usage)?;
    let matrix = MaskedMatrix::load_csv(&args.input, MISSING_TOKEN)
        .map_err(|e| CmdError::data(format!("{}: {e}", args.input.display())))?;
    let config = EstimatorConfig {
        delta: args.delta,
        allow_self: !args.no_self,
        ..Default::default()
    };

    let (theta_hat, audit) = match method {
        Method::Awnn => {
            let result =
                fit(&matrix, &config).map_err(|e| CmdError::estimator(e.to_string()))?;
            let report = audit_distance_bounds(&result, &matrix, &config, 1e-9);
            let audit = AuditJson {
                method: method.to_string(),
                sigma2_hat: Some(result.sigma2_hat),
                sigma2_trace: Some(result.sigma2_trace.clone()),
                converged: Some(result.converged),
                eta2: None,
                non_imputable: result.audit.non_imputable_count(),
                max_neighborhood: Some(result.audit.max_k()),
                mean_neighborhood: Some(result.audit.mean_k()),
                bound_violations: Some(report.violations.len()),
                bound_checked_cells: Some(report.checked_cells),
            };
            (result.theta_hat, audit)
        }
        Method::OAwnn => {
            let sigma2 = args
                .sigma2
                .ok_or_else(|| CmdError::usage("--sigma2 is required with --method o-awnn"))?;
            let result = oracle_fit(&matrix, sigma2, &config)
                .map_err(|e| CmdError::estimator(e.to_string()))?;
            let report = audit_distance_bounds(&result, &matrix, &config, 1e-9);
            let audit = AuditJson {
                method: method.to_string(),
                sigma2_hat: Some(result.sigma2_hat),
                sigma2_trace: Some(result.sigma2_trace.clone()),
                converged: Some(result.converged),
                eta2: None,
                non_imputable: result.audit.non_imputable_count(),
                max_neighborhood: Some(result.audit.max_k()),
                mean_neighborhood: Some(result.audit.mean_k()),
                bound_violations: Some(report.violations.len()),
                bound_checked_cells: Some(report.checked_cells),
            };
            (result.theta_hat, audit)
        }
        Method::Rownn => {
            // the radius search needs a variance for debiasing; fall back to
            // a preliminary adaptive fit when none is given
            let sigma2 = match args.sigma2 {
                Some(s) => s,
                None => fit(&matrix, &config)
                    .map_err(|e| CmdError::estimator(e.to_string()))?
                    .sigma2_hat,
            };
            let rconfig = RowNnConfig { allow_self: !args.no_self, ..Default::default() };
            let eta2 = if args.eta2 == "auto" {
                rownn_tune(&matrix, sigma2, &rconfig)
                    .map_err(|e| CmdError::estimator(e.to_string()))?
            } else {
                args.eta2
                    .parse::<f64>()
                    .map_err(|e| CmdError::usage(format!("--eta2: {e}")))?
            };
            let theta_hat = rownn_impute(&matrix, sigma2, eta2, &rconfig)
                .map_err(|e| CmdError::estimator(e.to_string()))?;
            let non_imputable = theta_hat.values().iter().filter(|v| !v.is_finite()).count();
            let audit = AuditJson {
                method: method.to_string(),
                sigma2_hat: Some(sigma2),
                sigma2_trace: None,
                converged: None,
                eta2: Some(eta2),
                non_imputable,
                max_neighborhood: None,
                mean_neighborhood: None,
                bound_violations: None,
                bound_checked_cells: None,
            };
            (theta_hat, audit)
        }
        Method::Usvt => {
            let theta_hat = usvt_impute(&matrix, &UsvtConfig::default())
                .map_err(|e| CmdError::estimator(e.to_string()))?;
            let non_imputable = theta_hat.values().iter().filter(|v| !v.is_finite()).count();
            let audit = AuditJson {
                method: method.to_string(),
                sigma2_hat: None,
                sigma2_trace: None,
                converged: None,
                eta2: None,
                non_imputable,
                max_neighborhood: None,
                mean_neighborhood: None,
                bound_violations: None,
                bound_checked_cells: None,
            };
            (theta_hat, audit)
        }
    };

    theta_hat
        .save_csv(&args.out)
        .map_err(|e| CmdError::data(format!("{}: {e}", args.out.display())))?;
    if let Some(path) = args.audit {
        let json = serde_json::to_string_pretty(&audit)
            .map_err(|e| CmdError::data(e.to_string()))?;
        std::fs::write(&path, json + "\n")
            .map_err(|e| CmdError::data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CmdError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CmdError::data(format!("{}: {e}", args.config.display())))?;
    let mut deserializer = serde_json::Deserializer::from_str(&text);
    let spec: BenchSpec = serde_path_to_error::deserialize(&mut deserializer)
        .map_err(|e| CmdError::usage(format!("{}: {e}", args.config.display())))?;
    let result = run_bench(&spec).map_err(|e| match e {
        awnn::ExperimentError::InvalidSpec(_) => CmdError::usage(e.to_string()),
        other => CmdError::estimator(other.to_string()),
    })?;
    save_records_csv(&args.out, &result.records)
        .map_err(|e| CmdError::data(e.to_string()))?;
    if let Some(path) = args.aggregate {
        save_aggregate_json(&path, &result).map_err(|e| CmdError::data(e.to_string()))?;
    }
    eprintln!("wrote {} records to {}", result.records.len(), args.out.display());
    Ok(())
}

fn cmd_slope(args: SlopeArgs) -> Result<(), CmdError> {
    let keys: Vec<&str> = args.group_by.split(',').map(str::trim).collect();
    for key in &keys {
        if !matches!(*key, "method" | "lambda" | "snr" | "p") {
            return Err(CmdError::usage(format!(
                "unknown group-by key '{key}' (expected method, lambda, snr, p)"
            )));
        }
    }
    let records =
        load_records_csv(&args.results).map_err(|e| CmdError::data(e.to_string()))?;

    let group_key = |r: &ExperimentRecord| -> Vec<String> {
        keys.iter()
            .map(|&k| match k {
                "method" => r.method.to_string(),
                "lambda" => r.lambda.to_string(),
                "snr" => r.snr.to_string(),
                "p" => r.p.to_string(),
                _ => unreachable!("keys validated above"),
            })
            .collect()
    };

    // group -> n -> finite mse values
    let mut groups: Vec<(Vec<String>, std::collections::BTreeMap<usize, Vec<f64>>)> = Vec::new();
    for r in &records {
        let key = group_key(r);
        let entry = match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, map)) => map,
            None => {
                groups.push((key, Default::default()));
                &mut groups.last_mut().expect("just pushed").1
            }
        };
        if r.mse.is_finite() {
            entry.entry(r.n).or_default().push(r.mse);
        }
    }
    groups.sort_by(|(a, _), (b, _)| a.cmp(b));

    println!("{}\tslope\tpoints", keys.join("\t"));
    for (key, by_n) in &groups {
        let points: Vec<(f64, f64)> = by_n
            .iter()
            .map(|(&n, mses)| (n as f64, mses.iter().sum::<f64>() / mses.len() as f64))
            .collect();
        match fit_slope(&points) {
            Ok(slope) => println!("{}\t{:.3}\t{}", key.join("\t"), slope, points.len()),
            Err(_) => println!("{}\tNaN\t{}", key.join("\t"), points.len()),
        }
    }
    Ok(())
}
