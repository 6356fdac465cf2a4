//! The AWNN estimator: per-column row imputation with adaptively weighted
//! neighbors, and the fixed-point iteration over the noise variance.
//!
//! One imputation pass debiases the cached raw row distances by the current
//! variance estimate, then for every cell `(i, j)` solves the simplex weight
//! program over the rows observed in column `j` and returns the weighted
//! average. The fixed point alternates imputation with re-estimating the
//! variance from observed-cell residuals until the estimate stabilizes.
//!
//! `oracle_fit` runs a single pass with a known noise variance instead of
//! iterating.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::distance::RawDistances;
use crate::matrix::{DenseMatrix, MaskedMatrix};
use crate::simplex::{waterfill_ascending, WeightError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("cannot estimate variance: need at least 2 observed entries, found {count}")]
    TooFewObserved { count: usize },
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// Which logarithmic constant scales the ridge term.
///
/// `Theory` uses `C = ln(2m / delta)`, matching the closed-form weight
/// characterization and the error bounds. `Algorithm2` uses `C = ln(1 /
/// delta)`, kept available for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LogConstantMode {
    Theory,
    Algorithm2,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimatorConfig {
    /// Failure probability budget of the weight bound.
    pub delta: f64,
    /// Whether a row may neighbor itself (zero self-distance).
    pub allow_self: bool,
    pub log_constant_mode: LogConstantMode,
    /// Below this variance the solver degenerates to argmin-distance weights.
    pub variance_floor: f64,
    /// Relative fixed-point tolerance on the variance estimate.
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Row pairs with fewer commonly observed columns get infinite distance.
    pub min_overlap: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            allow_self: true,
            log_constant_mode: LogConstantMode::Theory,
            variance_floor: 1e-12,
            fp_tol: 1e-6,
            fp_max_iter: 50,
            min_overlap: 1,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(EstimatorError::InvalidConfig(format!(
                "delta must be in (0,1), got {}",
                self.delta
            )));
        }
        if self.fp_max_iter < 1 {
            return Err(EstimatorError::InvalidConfig("fp_max_iter must be >= 1".into()));
        }
        Ok(())
    }

    /// The constant `C` in `regularizer = 2 * C * sigma2`.
    pub fn log_constant(&self, n_cols: usize) -> f64 {
        match self.log_constant_mode {
            LogConstantMode::Theory => (2.0 * n_cols as f64 / self.delta).ln(),
            LogConstantMode::Algorithm2 => (1.0 / self.delta).ln(),
        }
    }

    /// Ridge coefficient applied to `||w||^2` for a given variance estimate.
    pub fn regularizer(&self, n_cols: usize, sigma2: f64) -> f64 {
        2.0 * self.log_constant(n_cols) * sigma2
    }
}

/// Per-cell weight summary kept for invariant auditing.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CellStats {
    /// Proximity set cardinality; 0 marks a non-imputable cell.
    pub k: u32,
    pub min_dist: f64,
    pub max_dist: f64,
    pub mean_dist: f64,
    pub max_weight: f64,
}

impl CellStats {
    const NON_IMPUTABLE: CellStats = CellStats {
        k: 0,
        min_dist: f64::NAN,
        max_dist: f64::NAN,
        mean_dist: f64::NAN,
        max_weight: f64::NAN,
    };
}

/// Weight summaries for every cell of one imputation pass.
#[derive(Debug, Clone)]
pub struct WeightAudit {
    n_rows: usize,
    n_cols: usize,
    cells: Vec<CellStats>,
}

impl WeightAudit {
    pub fn get(&self, i: usize, j: usize) -> &CellStats {
        &self.cells[i * self.n_cols + j]
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn non_imputable_count(&self) -> usize {
        self.cells.iter().filter(|c| c.k == 0).count()
    }

    /// Mask of non-imputable cells, row-major.
    pub fn non_imputable_mask(&self) -> Vec<bool> {
        self.cells.iter().map(|c| c.k == 0).collect()
    }

    pub fn max_k(&self) -> u32 {
        self.cells.iter().map(|c| c.k).max().unwrap_or(0)
    }

    pub fn mean_k(&self) -> f64 {
        let imputable: Vec<u32> =
            self.cells.iter().filter(|c| c.k > 0).map(|c| c.k).collect();
        if imputable.is_empty() {
            0.0
        } else {
            imputable.iter().map(|&k| k as f64).sum::<f64>() / imputable.len() as f64
        }
    }
}

/// Output of [`fit`] / [`oracle_fit`].
#[derive(Debug, Clone)]
pub struct ImputationResult {
    pub theta_hat: DenseMatrix,
    /// Final variance estimate (last element of `sigma2_trace`).
    pub sigma2_hat: f64,
    /// Variance estimates per fixed-point iteration, starting at the
    /// initialization.
    pub sigma2_trace: Vec<f64>,
    /// The variance the final imputation pass debiased with (second-to-last
    /// trace element once the iteration has run).
    pub sigma2_weights: f64,
    pub audit: WeightAudit,
    pub converged: bool,
}

/// One imputation pass at a fixed noise variance.
pub fn row_imputer(
    matrix: &MaskedMatrix,
    sigma2: f64,
    config: &EstimatorConfig,
) -> Result<(DenseMatrix, WeightAudit), EstimatorError> {
    config.validate()?;
    let raw = RawDistances::compute(matrix);
    Ok(row_imputer_with(matrix, &raw, sigma2, config))
}

/// Imputation pass reusing precomputed raw distances.
fn row_imputer_with(
    matrix: &MaskedMatrix,
    raw: &RawDistances,
    sigma2: f64,
    config: &EstimatorConfig,
) -> (DenseMatrix, WeightAudit) {
    let n = matrix.n_rows();
    let m = matrix.n_cols();
    let table = raw.debiased(sigma2, config.allow_self, config.min_overlap);
    let degenerate = sigma2 < config.variance_floor;
    let reg = config.regularizer(m, sigma2);

    // column-major copies of mask and values for the inner scans
    let mut col_observed = vec![false; n * m];
    let mut col_values = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            col_observed[j * n + i] = matrix.is_observed(i, j);
            col_values[j * n + i] = matrix.value_raw(i, j);
        }
    }

    let rows: Vec<(Vec<f64>, Vec<CellStats>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dists = table.row(i);
            // candidate rows by ascending distance; ties by index
            let mut order: Vec<u32> =
                (0..n as u32).filter(|&k| dists[k as usize].is_finite()).collect();
            order.sort_by(|&a, &b| {
                dists[a as usize].total_cmp(&dists[b as usize]).then(a.cmp(&b))
            });

            let mut theta_row = vec![f64::NAN; m];
            let mut stats_row = vec![CellStats::NON_IMPUTABLE; m];
            let mut buf: Vec<(usize, f64, f64)> = Vec::new();
            let mut contrib: Vec<(usize, f64)> = Vec::new();
            for j in 0..m {
                let obs = &col_observed[j * n..(j + 1) * n];
                let cands = order
                    .iter()
                    .filter(|&&k| obs[k as usize])
                    .map(|&k| (k as usize, dists[k as usize]));
                let ok = if degenerate {
                    take_argmin_ties(cands, &mut buf)
                } else {
                    waterfill_ascending(cands, reg, &mut buf)
                };
                if !ok {
                    continue;
                }
                let k = buf.len();
                let min_dist = buf[0].1;
                let max_dist = buf[k - 1].1;
                let mean_dist = buf.iter().map(|e| e.1).sum::<f64>() / k as f64;
                let max_weight = buf.iter().map(|e| e.2).fold(0.0f64, f64::max);
                // fixed summation order (ascending row index) for determinism
                contrib.clear();
                contrib.extend(buf.iter().map(|&(row, _, w)| (row, w)));
                contrib.sort_unstable_by_key(|&(row, _)| row);
                let col = &col_values[j * n..(j + 1) * n];
                let estimate: f64 = contrib.iter().map(|&(row, w)| w * col[row]).sum();
                theta_row[j] = estimate;
                stats_row[j] =
                    CellStats { k: k as u32, min_dist, max_dist, mean_dist, max_weight };
            }
            (theta_row, stats_row)
        })
        .collect();

    let mut theta = Vec::with_capacity(n * m);
    let mut cells = Vec::with_capacity(n * m);
    for (theta_row, stats_row) in rows {
        theta.extend(theta_row);
        cells.extend(stats_row);
    }
    (DenseMatrix::from_vec(n, m, theta), WeightAudit { n_rows: n, n_cols: m, cells })
}

/// Uniform weights over the argmin-distance candidates (noiseless route).
fn take_argmin_ties<I>(mut cands: I, buf: &mut Vec<(usize, f64, f64)>) -> bool
where
    I: Iterator<Item = (usize, f64)>,
{
    buf.clear();
    let Some((row0, d0)) = cands.next() else {
        return false;
    };
    buf.push((row0, d0, 0.0));
    for (row, d) in cands {
        if d > d0 {
            break;
        }
        buf.push((row, d, 0.0));
    }
    let w = 1.0 / buf.len() as f64;
    for e in buf.iter_mut() {
        e.2 = w;
    }
    true
}

/// Full AWNN fit: variance initialization, fixed-point iteration, final pass.
pub fn fit(matrix: &MaskedMatrix, config: &EstimatorConfig) -> Result<ImputationResult, EstimatorError> {
    config.validate()?;
    let observed: Vec<f64> = matrix.observed_entries().map(|(_, _, x)| x).collect();
    if observed.len() < 2 {
        return Err(EstimatorError::TooFewObserved { count: observed.len() });
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let var =
        observed.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / observed.len() as f64;
    let mut sigma2 = var / 10.0;

    let raw = RawDistances::compute(matrix);
    let mut trace = vec![sigma2];
    let mut last: Option<(DenseMatrix, WeightAudit, f64)> = None;
    let mut converged = false;

    for _ in 0..config.fp_max_iter {
        let (theta, audit) = row_imputer_with(matrix, &raw, sigma2, config);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, j, x) in matrix.observed_entries() {
            let est = theta.get(i, j);
            if est.is_finite() {
                let r = x - est;
                sum += r * r;
                count += 1;
            }
        }
        let sigma2_weights = sigma2;
        last = Some((theta, audit, sigma2_weights));
        if count == 0 {
            // nothing imputable among observed cells; variance cannot update
            break;
        }
        let next = sum / count as f64;
        trace.push(next);
        if (next - sigma2).abs() <= config.fp_tol * sigma2.max(config.variance_floor) {
            converged = true;
            break;
        }
        sigma2 = next;
    }

    let (theta_hat, audit, sigma2_weights) = last.expect("fp_max_iter >= 1");
    let sigma2_hat = *trace.last().expect("trace is non-empty");
    Ok(ImputationResult { theta_hat, sigma2_hat, sigma2_trace: trace, sigma2_weights, audit, converged })
}

/// AWNN with a known noise variance: a single imputation pass, no iteration.
pub fn oracle_fit(
    matrix: &MaskedMatrix,
    sigma2_true: f64,
    config: &EstimatorConfig,
) -> Result<ImputationResult, EstimatorError> {
    config.validate()?;
    if !(sigma2_true >= 0.0 && sigma2_true.is_finite()) {
        return Err(EstimatorError::InvalidConfig(format!(
            "oracle variance must be finite and non-negative, got {sigma2_true}"
        )));
    }
    let raw = RawDistances::compute(matrix);
    let (theta_hat, audit) = row_imputer_with(matrix, &raw, sigma2_true, config);
    Ok(ImputationResult {
        theta_hat,
        sigma2_hat: sigma2_true,
        sigma2_trace: vec![sigma2_true],
        sigma2_weights: sigma2_true,
        audit,
        converged: true,
    })
}

/// One distance-bound violation found by [`audit_distance_bounds`].
#[derive(Debug, Clone, Serialize)]
pub struct BoundViolation {
    pub row: usize,
    pub col: usize,
    pub kind: ViolationKind,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Proximity-set distance exceeded the ridge bound.
    MaxDistance,
    /// The mean-distance identity failed.
    MeanIdentity,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub checked_cells: usize,
    pub violations: Vec<BoundViolation>,
}

/// Checks the proximity-set distance bounds on a finished fit.
///
/// Every proximity-set distance must satisfy `d <= 4 C sigma2` (twice the
/// ridge coefficient) for observed targets, plus the minimum proximity
/// distance for unobserved ones; and the mean proximity distance must equal
/// `4 C sigma2 (max_weight - 1/K) + min_dist` — the closed-form weight
/// expression evaluated at the nearest neighbor. Both within `slack`. These
/// follow from the weights lying in `[0, 1]` and summing to one.
pub fn audit_distance_bounds(
    result: &ImputationResult,
    matrix: &MaskedMatrix,
    config: &EstimatorConfig,
    slack: f64,
) -> BoundReport {
    let reg = config.regularizer(matrix.n_cols(), result.sigma2_weights);
    let mut violations = Vec::new();
    let mut checked = 0usize;
    for i in 0..matrix.n_rows() {
        for j in 0..matrix.n_cols() {
            let cell = result.audit.get(i, j);
            if cell.k == 0 {
                continue;
            }
            checked += 1;
            let bound =
                if matrix.is_observed(i, j) { 2.0 * reg } else { 2.0 * reg + cell.min_dist };
            if cell.max_dist > bound + slack {
                violations.push(BoundViolation {
                    row: i,
                    col: j,
                    kind: ViolationKind::MaxDistance,
                    value: cell.max_dist,
                    bound,
                });
            }
            let identity = 2.0 * reg * (cell.max_weight - 1.0 / cell.k as f64) + cell.min_dist;
            if (cell.mean_dist - identity).abs() > slack {
                violations.push(BoundViolation {
                    row: i,
                    col: j,
                    kind: ViolationKind::MeanIdentity,
                    value: cell.mean_dist,
                    bound: identity,
                });
            }
        }
    }
    BoundReport { checked_cells: checked, violations }
}
