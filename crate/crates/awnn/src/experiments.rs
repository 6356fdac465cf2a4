//! Benchmark orchestration: sweep matrix sizes, run the estimators over
//! replicates with paired seeds, compute MSE against the ground truth, fit
//! log-log decay slopes, and persist results as CSV plus an aggregate JSON.

use std::fmt;
use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{rownn_impute, rownn_tune, usvt_impute, RowNnConfig, UsvtConfig};
use crate::estimator::{fit, oracle_fit, EstimatorConfig, ImputationResult};
use crate::matrix::DenseMatrix;
use crate::seeding::derive_seed;
use crate::synthetic::{generate, SyntheticSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str =
    "method,n,lambda,snr,p,replicate,mse,sigma2_hat,converged,non_imputable,wall_ms";

const SEED_INSTANCE: u64 = 0x10;
const SEED_ROWNN_TUNING: u64 = 0x11;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid bench spec: {0}")]
    InvalidSpec(String),
    #[error("all cells excluded from the error computation")]
    AllCellsExcluded,
    #[error("matrix shapes do not match")]
    ShapeMismatch,
    #[error("slope fit needs positive mse values, got {value}")]
    NonPositiveMse { value: f64 },
    #[error("slope fit needs at least 2 distinct sizes")]
    TooFewPoints,
    #[error(transparent)]
    Synthetic(#[from] crate::synthetic::SyntheticError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("results line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Awnn,
    OAwnn,
    Rownn,
    Usvt,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Awnn, Method::OAwnn, Method::Rownn, Method::Usvt];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Awnn => "awnn",
            Method::OAwnn => "o-awnn",
            Method::Rownn => "rownn",
            Method::Usvt => "usvt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "awnn" => Ok(Method::Awnn),
            "o-awnn" => Ok(Method::OAwnn),
            "rownn" => Ok(Method::Rownn),
            "usvt" => Ok(Method::Usvt),
            other => Err(format!("unknown method '{other}' (expected awnn, o-awnn, rownn, usvt)")),
        }
    }
}

fn default_lambdas() -> Vec<f64> {
    vec![0.5, 0.75, 1.0]
}

fn default_snrs() -> Vec<f64> {
    vec![1.0, 2.0, 10.0]
}

fn default_p_values() -> Vec<f64> {
    vec![1.0, 0.65]
}

fn default_replicates() -> usize {
    10
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_d() -> usize {
    2
}

fn default_true() -> bool {
    true
}

/// One benchmark sweep: the grid, the methods, and the base seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    /// Square matrix sizes, strictly ascending.
    pub n_values: Vec<usize>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_snrs")]
    pub snrs: Vec<f64>,
    #[serde(default = "default_p_values")]
    pub p_values: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub base_seed: u64,
    /// Latent dimension of the synthetic instances.
    #[serde(default = "default_d")]
    pub d: usize,
    /// When false the wall_ms column is written as 0, making reruns
    /// byte-identical.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            n_values: vec![64, 128, 256],
            lambdas: default_lambdas(),
            snrs: default_snrs(),
            p_values: default_p_values(),
            replicates: default_replicates(),
            methods: default_methods(),
            base_seed: 0,
            d: default_d(),
            record_wall_time: true,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n_values.is_empty() {
            return Err(ExperimentError::InvalidSpec("n_values must be non-empty".into()));
        }
        if !self.n_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(ExperimentError::InvalidSpec("n_values must be strictly ascending".into()));
        }
        if self.lambdas.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
            return Err(ExperimentError::InvalidSpec("lambdas must be in (0,1]".into()));
        }
        if self.snrs.iter().any(|&s| !(s > 0.0)) {
            return Err(ExperimentError::InvalidSpec("snrs must be > 0".into()));
        }
        if self.p_values.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(ExperimentError::InvalidSpec("p_values must be in (0,1]".into()));
        }
        if self.replicates < 1 {
            return Err(ExperimentError::InvalidSpec("replicates must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(ExperimentError::InvalidSpec("methods must be non-empty".into()));
        }
        if self.d < 1 {
            return Err(ExperimentError::InvalidSpec("d must be >= 1".into()));
        }
        Ok(())
    }
}

/// One (method, grid cell, replicate) measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub method: Method,
    pub n: usize,
    pub lambda: f64,
    pub snr: f64,
    pub p: f64,
    pub replicate: usize,
    /// NaN when the method failed on this instance.
    pub mse: f64,
    /// NaN where the method carries no variance estimate.
    pub sigma2_hat: f64,
    pub converged: bool,
    pub non_imputable: usize,
    pub wall_ms: f64,
}

/// Mean/sd of mse per (method, grid cell) group, over finite replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub n: usize,
    pub lambda: f64,
    pub snr: f64,
    pub p: f64,
    pub mean_mse: f64,
    /// Sample standard deviation (divisor R - 1); absent with < 2 replicates.
    pub sd_mse: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: BenchSpec,
    pub records: Vec<ExperimentRecord>,
    pub aggregates: Vec<AggregateRow>,
}

/// Mean squared error over cells not excluded; also returns the excluded count.
pub fn mse(
    theta_hat: &DenseMatrix,
    theta: &DenseMatrix,
    exclude: &[bool],
) -> Result<(f64, usize), ExperimentError> {
    if theta_hat.n_rows() != theta.n_rows()
        || theta_hat.n_cols() != theta.n_cols()
        || exclude.len() != theta.values().len()
    {
        return Err(ExperimentError::ShapeMismatch);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (idx, (&est, &truth)) in theta_hat.values().iter().zip(theta.values()).enumerate() {
        if exclude[idx] {
            continue;
        }
        let r = est - truth;
        sum += r * r;
        count += 1;
    }
    if count == 0 {
        return Err(ExperimentError::AllCellsExcluded);
    }
    Ok((sum / count as f64, exclude.len() - count))
}

/// Cells where the estimate is not finite (the non-imputable marker).
pub fn non_finite_mask(theta_hat: &DenseMatrix) -> Vec<bool> {
    theta_hat.values().iter().map(|v| !v.is_finite()).collect()
}

/// Ordinary-least-squares slope of log(mse) on log(n).
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64, ExperimentError> {
    for &(_, m) in points {
        if !(m > 0.0) {
            return Err(ExperimentError::NonPositiveMse { value: m });
        }
    }
    let mut xs: Vec<f64> = points.iter().map(|&(n, _)| n).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 2 {
        return Err(ExperimentError::TooFewPoints);
    }
    let k = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, m)| (n.ln(), m.ln())).collect();
    let mean_x = logs.iter().map(|&(x, _)| x).sum::<f64>() / k;
    let mean_y = logs.iter().map(|&(_, y)| y).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mean_x) * (x - mean_x)).sum();
    Ok(sxy / sxx)
}

struct Cell {
    n: usize,
    lambda: f64,
    snr: f64,
    p: f64,
    replicate: usize,
}

fn instance_seed(spec: &BenchSpec, cell: &Cell) -> u64 {
    derive_seed(
        spec.base_seed,
        &[
            SEED_INSTANCE,
            cell.n as u64,
            cell.lambda.to_bits(),
            cell.snr.to_bits(),
            cell.p.to_bits(),
            cell.replicate as u64,
        ],
    )
}

fn failure_record(method: Method, cell: &Cell) -> ExperimentRecord {
    ExperimentRecord {
        method,
        n: cell.n,
        lambda: cell.lambda,
        snr: cell.snr,
        p: cell.p,
        replicate: cell.replicate,
        mse: f64::NAN,
        sigma2_hat: f64::NAN,
        converged: false,
        non_imputable: 0,
        wall_ms: 0.0,
    }
}

fn run_cell(spec: &BenchSpec, cell: &Cell) -> Vec<ExperimentRecord> {
    let synth = SyntheticSpec {
        n: cell.n,
        m: cell.n,
        d: spec.d,
        lambda: cell.lambda,
        snr: cell.snr,
        p: cell.p,
        seed: instance_seed(spec, cell),
    };
    let inst = match generate(&synth) {
        Ok(inst) => inst,
        Err(_) => return spec.methods.iter().map(|&m| failure_record(m, cell)).collect(),
    };
    let est_config = EstimatorConfig::default();
    // the AWNN fit is shared: its own record, and the variance for RowNN
    let mut awnn_fit: Option<Result<(ImputationResult, f64), ()>> = None;
    let mut fit_awnn = |record_time: bool| -> Result<(ImputationResult, f64), ()> {
        if awnn_fit.is_none() {
            let start = Instant::now();
            let out = fit(&inst.data, &est_config).map_err(|_| ());
            let ms = if record_time { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            awnn_fit = Some(out.map(|r| (r, ms)));
        }
        awnn_fit.clone().expect("just filled")
    };

    let mut records = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let mut record = failure_record(method, cell);
        match method {
            Method::Awnn => {
                if let Ok((result, ms)) = fit_awnn(spec.record_wall_time) {
                    let exclude = non_finite_mask(&result.theta_hat);
                    if let Ok((err, _)) = mse(&result.theta_hat, &inst.theta, &exclude) {
                        record.mse = err;
                    }
                    record.sigma2_hat = result.sigma2_hat;
                    record.converged = result.converged;
                    record.non_imputable = result.audit.non_imputable_count();
                    record.wall_ms = ms;
                }
            }
            Method::OAwnn => {
                let start = Instant::now();
                if let Ok(result) = oracle_fit(&inst.data, inst.sigma_eps2, &est_config) {
                    let ms = start.elapsed().as_secs_f64() * 1e3;
                    let exclude = non_finite_mask(&result.theta_hat);
                    if let Ok((err, _)) = mse(&result.theta_hat, &inst.theta, &exclude) {
                        record.mse = err;
                    }
                    record.sigma2_hat = result.sigma2_hat;
                    record.converged = true;
                    record.non_imputable = result.audit.non_imputable_count();
                    record.wall_ms = if spec.record_wall_time { ms } else { 0.0 };
                }
            }
            Method::Rownn => {
                // the radius search reuses the AWNN variance estimate
                let Ok((awnn_result, _)) = fit_awnn(spec.record_wall_time) else {
                    records.push(record);
                    continue;
                };
                let sigma2 = awnn_result.sigma2_hat;
                let config = RowNnConfig {
                    seed: derive_seed(spec.base_seed, &[SEED_ROWNN_TUNING, synth.seed]),
                    ..Default::default()
                };
                let start = Instant::now();
                let outcome = rownn_tune(&inst.data, sigma2, &config)
                    .and_then(|eta2| rownn_impute(&inst.data, sigma2, eta2, &config));
                if let Ok(theta_hat) = outcome {
                    let ms = start.elapsed().as_secs_f64() * 1e3;
                    let exclude = non_finite_mask(&theta_hat);
                    if let Ok((err, excluded)) = mse(&theta_hat, &inst.theta, &exclude) {
                        record.mse = err;
                        record.non_imputable = excluded;
                    }
                    record.sigma2_hat = sigma2;
                    record.converged = true;
                    record.wall_ms = if spec.record_wall_time { ms } else { 0.0 };
                }
            }
            Method::Usvt => {
                let start = Instant::now();
                if let Ok(theta_hat) = usvt_impute(&inst.data, &UsvtConfig::default()) {
                    let ms = start.elapsed().as_secs_f64() * 1e3;
                    let exclude = non_finite_mask(&theta_hat);
                    if let Ok((err, excluded)) = mse(&theta_hat, &inst.theta, &exclude) {
                        record.mse = err;
                        record.non_imputable = excluded;
                    }
                    record.converged = true;
                    record.wall_ms = if spec.record_wall_time { ms } else { 0.0 };
                }
            }
        }
        records.push(record);
    }
    records
}

/// Runs the full sweep. Every method within one (grid cell, replicate) sees
/// the identical synthetic instance, so comparisons are paired. Deterministic
/// given `base_seed` (up to the wall_ms column when `record_wall_time`).
pub fn run_bench(spec: &BenchSpec) -> Result<ExperimentResult, ExperimentError> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &n in &spec.n_values {
        for &lambda in &spec.lambdas {
            for &snr in &spec.snrs {
                for &p in &spec.p_values {
                    for replicate in 0..spec.replicates {
                        cells.push(Cell { n, lambda, snr, p, replicate });
                    }
                }
            }
        }
    }
    let mut records: Vec<ExperimentRecord> =
        cells.par_iter().flat_map_iter(|cell| run_cell(spec, cell)).collect();
    records.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.n.cmp(&b.n))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.snr.total_cmp(&b.snr))
            .then(a.p.total_cmp(&b.p))
            .then(a.replicate.cmp(&b.replicate))
    });
    let aggregates = aggregate(&records);
    Ok(ExperimentResult { spec: spec.clone(), records, aggregates })
}

/// Recomputes per-group mean and sample sd of mse from the records.
pub fn aggregate(records: &[ExperimentRecord]) -> Vec<AggregateRow> {
    let mut rows: Vec<AggregateRow> = Vec::new();
    let mut idx = 0;
    while idx < records.len() {
        let head = &records[idx];
        let mut group = Vec::new();
        while idx < records.len() {
            let r = &records[idx];
            if r.method == head.method
                && r.n == head.n
                && r.lambda == head.lambda
                && r.snr == head.snr
                && r.p == head.p
            {
                if r.mse.is_finite() {
                    group.push(r.mse);
                }
                idx += 1;
            } else {
                break;
            }
        }
        let k = group.len();
        let mean = if k == 0 { f64::NAN } else { group.iter().sum::<f64>() / k as f64 };
        let sd = if k >= 2 {
            Some(
                (group.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1) as f64)
                    .sqrt(),
            )
        } else {
            None
        };
        rows.push(AggregateRow {
            method: head.method,
            n: head.n,
            lambda: head.lambda,
            snr: head.snr,
            p: head.p,
            mean_mse: mean,
            sd_mse: sd,
            replicates: k,
        });
    }
    rows
}

/// Fitted log-log slope per (method, lambda, snr, p) group.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeRow {
    pub method: Method,
    pub lambda: f64,
    pub snr: f64,
    pub p: f64,
    /// NaN when the group lacks two distinct sizes or has nonpositive means.
    pub slope: f64,
    pub n_points: usize,
}

/// Slopes of log mean-mse vs log n for every (method, lambda, snr, p) group.
pub fn slopes_from_records(records: &[ExperimentRecord]) -> Vec<SlopeRow> {
    let aggregates = {
        let mut sorted = records.to_vec();
        sorted.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.lambda.total_cmp(&b.lambda))
                .then(a.snr.total_cmp(&b.snr))
                .then(a.p.total_cmp(&b.p))
                .then(a.n.cmp(&b.n))
        });
        aggregate(&sorted)
    };
    let mut rows = Vec::new();
    let mut idx = 0;
    while idx < aggregates.len() {
        let head = &aggregates[idx];
        let mut points = Vec::new();
        while idx < aggregates.len() {
            let a = &aggregates[idx];
            if a.method == head.method
                && a.lambda == head.lambda
                && a.snr == head.snr
                && a.p == head.p
            {
                if a.mean_mse.is_finite() {
                    points.push((a.n as f64, a.mean_mse));
                }
                idx += 1;
            } else {
                break;
            }
        }
        let slope = fit_slope(&points).unwrap_or(f64::NAN);
        rows.push(SlopeRow {
            method: head.method,
            lambda: head.lambda,
            snr: head.snr,
            p: head.p,
            slope,
            n_points: points.len(),
        });
    }
    rows
}

/// Writes records as CSV with the fixed header. Floats use the shortest
/// round-trip representation, so identical records serialize identically.
pub fn write_records_csv<W: IoWrite>(out: &mut W, records: &[ExperimentRecord]) -> Result<(), ExperimentError> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.n,
            r.lambda,
            r.snr,
            r.p,
            r.replicate,
            r.mse,
            r.sigma2_hat,
            r.converged,
            r.non_imputable,
            r.wall_ms
        )?;
    }
    Ok(())
}

pub fn save_records_csv(path: &Path, records: &[ExperimentRecord]) -> Result<(), ExperimentError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_records_csv(&mut file, records)?;
    file.flush()?;
    Ok(())
}

pub fn load_records_csv(path: &Path) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(ExperimentError::Parse { line: 1, message: "empty results file".into() });
    };
    let header = header?;
    if header.trim() != CSV_HEADER {
        return Err(ExperimentError::Parse {
            line: 1,
            message: format!("unexpected header '{header}'"),
        });
    }
    let mut records = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(ExperimentError::Parse {
                line: lineno + 1,
                message: format!("expected 11 fields, found {}", fields.len()),
            });
        }
        let parse_err = |message: String| ExperimentError::Parse { line: lineno + 1, message };
        let method = Method::from_str(fields[0]).map_err(&parse_err)?;
        let f = |idx: usize| -> Result<f64, ExperimentError> {
            fields[idx]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("field {}: {e}", idx + 1)))
        };
        let u = |idx: usize| -> Result<usize, ExperimentError> {
            fields[idx]
                .parse::<usize>()
                .map_err(|e| parse_err(format!("field {}: {e}", idx + 1)))
        };
        records.push(ExperimentRecord {
            method,
            n: u(1)?,
            lambda: f(2)?,
            snr: f(3)?,
            p: f(4)?,
            replicate: u(5)?,
            mse: f(6)?,
            sigma2_hat: f(7)?,
            converged: fields[8]
                .parse::<bool>()
                .map_err(|e| parse_err(format!("field 9: {e}")))?,
            non_imputable: u(9)?,
            wall_ms: f(10)?,
        });
    }
    if records.is_empty() {
        return Err(ExperimentError::Parse { line: 1, message: "results file has no records".into() });
    }
    Ok(records)
}

#[derive(Debug, Serialize)]
struct AggregateFile<'a> {
    schema_version: u32,
    spec: &'a BenchSpec,
    aggregates: &'a [AggregateRow],
}

pub fn save_aggregate_json(path: &Path, result: &ExperimentResult) -> Result<(), ExperimentError> {
    let file = AggregateFile {
        schema_version: SCHEMA_VERSION,
        spec: &result.spec,
        aggregates: &result.aggregates,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| ExperimentError::Parse { line: 0, message: e.to_string() })?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}
