//! Reference estimators: unweighted row nearest neighbors with a tuned
//! radius, and universal singular value thresholding (USVT).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::distance::build_distance_table;
use crate::matrix::{DenseMatrix, MaskedMatrix};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid baseline config: {0}")]
    InvalidConfig(String),
    #[error("matrix has no observed entries")]
    NoObservations,
    #[error("tuning needs at least 10 observed entries, found {count}")]
    TooFewForTuning { count: usize },
    #[error("singular value decomposition failed")]
    SvdFailure,
}

/// Unweighted row-nearest-neighbor configuration.
#[derive(Debug, Clone, Copy)]
pub struct RowNnConfig {
    /// Radius threshold in variance units; `None` means tune it.
    pub eta2: Option<f64>,
    pub tuning_grid_size: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Whether a row may neighbor itself (zero self-distance).
    pub allow_self: bool,
    pub min_overlap: usize,
}

impl Default for RowNnConfig {
    fn default() -> Self {
        Self {
            eta2: None,
            tuning_grid_size: 30,
            holdout_fraction: 0.1,
            seed: 0,
            allow_self: true,
            min_overlap: 1,
        }
    }
}

impl RowNnConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if let Some(eta2) = self.eta2 {
            if !(eta2 > 0.0) {
                return Err(BaselineError::InvalidConfig(format!(
                    "eta2 must be > 0, got {eta2}"
                )));
            }
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 0.5) {
            return Err(BaselineError::InvalidConfig(format!(
                "holdout_fraction must be in (0, 0.5), got {}",
                self.holdout_fraction
            )));
        }
        if self.tuning_grid_size < 1 {
            return Err(BaselineError::InvalidConfig("tuning_grid_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UsvtConfig {
    pub threshold_factor: f64,
    /// Clip range; `None` means the observed min/max.
    pub clip_low: Option<f64>,
    pub clip_high: Option<f64>,
}

impl Default for UsvtConfig {
    fn default() -> Self {
        Self { threshold_factor: 2.01, clip_low: None, clip_high: None }
    }
}

/// Rows sorted by ascending distance from row `i`, ties broken by index;
/// infinite distances are dropped.
fn neighbor_order(dists: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> =
        (0..dists.len() as u32).filter(|&k| dists[k as usize].is_finite()).collect();
    order.sort_by(|&a, &b| dists[a as usize].total_cmp(&dists[b as usize]).then(a.cmp(&b)));
    order
}

/// Unweighted mean over admissible rows within radius `eta2`; falls back to
/// the single nearest admissible row when the radius captures none. Returns
/// `(estimate, neighborhood size)`; `None` when no row is admissible.
fn rownn_cell(
    order: &[u32],
    dists: &[f64],
    obs_col: &[bool],
    values_col: &[f64],
    eta2: f64,
) -> Option<(f64, usize)> {
    let mut members: Vec<u32> = Vec::new();
    let mut nearest: Option<u32> = None;
    for &k in order {
        if !obs_col[k as usize] {
            continue;
        }
        if nearest.is_none() {
            nearest = Some(k);
        }
        if dists[k as usize] <= eta2 {
            members.push(k);
        } else {
            break;
        }
    }
    if members.is_empty() {
        members.push(nearest?);
    }
    // fixed summation order for determinism
    members.sort_unstable();
    let sum: f64 = members.iter().map(|&k| values_col[k as usize]).sum();
    Some((sum / members.len() as f64, members.len()))
}

/// RowNN imputation of every cell at a fixed radius.
///
/// Uses the same debiased distance table as the weighted estimator; cells with
/// no admissible row come back as NaN.
pub fn rownn_impute(
    matrix: &MaskedMatrix,
    sigma2: f64,
    eta2: f64,
    config: &RowNnConfig,
) -> Result<DenseMatrix, BaselineError> {
    config.validate()?;
    if !(eta2 > 0.0) {
        return Err(BaselineError::InvalidConfig(format!("eta2 must be > 0, got {eta2}")));
    }
    let n = matrix.n_rows();
    let m = matrix.n_cols();
    let table = build_distance_table(matrix, sigma2, config.allow_self, config.min_overlap);

    let mut col_observed = vec![false; n * m];
    let mut col_values = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            col_observed[j * n + i] = matrix.is_observed(i, j);
            col_values[j * n + i] = matrix.value_raw(i, j);
        }
    }

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dists = table.row(i);
            let order = neighbor_order(dists);
            (0..m)
                .map(|j| {
                    let obs = &col_observed[j * n..(j + 1) * n];
                    let vals = &col_values[j * n..(j + 1) * n];
                    rownn_cell(&order, dists, obs, vals, eta2)
                        .map_or(f64::NAN, |(est, _)| est)
                })
                .collect()
        })
        .collect();
    Ok(DenseMatrix::from_vec(n, m, rows.into_iter().flatten().collect()))
}

/// Selects the RowNN radius by seeded holdout grid search.
///
/// Masks a fraction of observed entries, evaluates a geometric radius grid
/// spanning the 1st–99th percentile of finite positive distances on the
/// training split, and returns the radius with the lowest holdout error
/// (smallest radius on ties). Deterministic given the config seed.
pub fn rownn_tune(
    matrix: &MaskedMatrix,
    sigma2: f64,
    config: &RowNnConfig,
) -> Result<f64, BaselineError> {
    config.validate()?;
    let observed: Vec<(usize, usize, f64)> = matrix.observed_entries().collect();
    if observed.len() < 10 {
        return Err(BaselineError::TooFewForTuning { count: observed.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_held = ((observed.len() as f64 * config.holdout_fraction) as usize).max(1);
    let held: Vec<(usize, usize, f64)> = rand::seq::index::sample(&mut rng, observed.len(), n_held)
        .into_iter()
        .map(|idx| observed[idx])
        .collect();
    let held_cells: Vec<(usize, usize)> = held.iter().map(|&(i, j, _)| (i, j)).collect();
    let train = matrix.with_masked_cells(&held_cells);

    let n = train.n_rows();
    let m = train.n_cols();
    let table = build_distance_table(&train, sigma2, config.allow_self, config.min_overlap);

    // geometric grid over the positive-distance range
    let mut positive: Vec<f64> = Vec::new();
    for i in 0..n {
        for k in 0..n {
            if i != k {
                let d = table.dist(i, k);
                if d.is_finite() && d > 0.0 {
                    positive.push(d);
                }
            }
        }
    }
    if positive.is_empty() {
        // every admissible pair is at non-positive distance; any positive
        // radius captures them all
        return Ok(f64::MIN_POSITIVE);
    }
    positive.sort_by(f64::total_cmp);
    let pct = |q: f64| positive[((positive.len() - 1) as f64 * q).round() as usize];
    let lo = pct(0.01);
    let hi = pct(0.99);
    let grid: Vec<f64> = if config.tuning_grid_size == 1 || lo == hi {
        vec![lo]
    } else {
        let g = config.tuning_grid_size;
        (0..g)
            .map(|t| lo * (hi / lo).powf(t as f64 / (g - 1) as f64))
            .collect()
    };
    if grid.len() == 1 {
        return Ok(grid[0]);
    }

    // per-target-row neighbor order, only for rows that hold cells
    let mut orders: Vec<Option<Vec<u32>>> = vec![None; n];
    for &(i, _, _) in &held {
        if orders[i].is_none() {
            orders[i] = Some(neighbor_order(table.row(i)));
        }
    }
    let mut col_observed = vec![false; n * m];
    let mut col_values = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            col_observed[j * n + i] = train.is_observed(i, j);
            col_values[j * n + i] = train.value_raw(i, j);
        }
    }

    let scores: Vec<f64> = grid
        .par_iter()
        .map(|&eta2| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &(i, j, x) in &held {
                let dists = table.row(i);
                let order = orders[i].as_ref().expect("order precomputed for held rows");
                let obs = &col_observed[j * n..(j + 1) * n];
                let vals = &col_values[j * n..(j + 1) * n];
                if let Some((est, _)) = rownn_cell(order, dists, obs, vals, eta2) {
                    let r = x - est;
                    sum += r * r;
                    count += 1;
                }
            }
            if count == 0 {
                f64::INFINITY
            } else {
                sum / count as f64
            }
        })
        .collect();

    let mut best = 0usize;
    for t in 1..grid.len() {
        if scores[t] < scores[best] {
            best = t;
        }
    }
    Ok(grid[best])
}

/// Universal singular value thresholding.
///
/// Zero-fills the unobserved cells, truncates singular values at
/// `threshold_factor * sqrt(max(n, m) * p_hat)`, rescales by `1 / p_hat`, and
/// clips to the observed range (or an explicit range).
pub fn usvt_impute(matrix: &MaskedMatrix, config: &UsvtConfig) -> Result<DenseMatrix, BaselineError> {
    if !(config.threshold_factor > 0.0) {
        return Err(BaselineError::InvalidConfig(format!(
            "threshold_factor must be > 0, got {}",
            config.threshold_factor
        )));
    }
    let n = matrix.n_rows();
    let m = matrix.n_cols();
    if matrix.observed_count() == 0 {
        return Err(BaselineError::NoObservations);
    }
    let p_hat = matrix.observed_fraction();

    let mut filled = DMatrix::<f64>::zeros(n, m);
    let mut obs_min = f64::INFINITY;
    let mut obs_max = f64::NEG_INFINITY;
    for (i, j, x) in matrix.observed_entries() {
        filled[(i, j)] = x;
        obs_min = obs_min.min(x);
        obs_max = obs_max.max(x);
    }
    let clip_low = config.clip_low.unwrap_or(obs_min);
    let clip_high = config.clip_high.unwrap_or(obs_max);
    if clip_low > clip_high {
        return Err(BaselineError::InvalidConfig(format!(
            "clip range is empty: [{clip_low}, {clip_high}]"
        )));
    }

    let threshold = config.threshold_factor * (n.max(m) as f64 * p_hat).sqrt();
    let mut svd = filled
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(BaselineError::SvdFailure)?;
    for s in svd.singular_values.iter_mut() {
        if *s <= threshold {
            *s = 0.0;
        }
    }
    let recomposed = svd.recompose().map_err(|_| BaselineError::SvdFailure)?;

    let mut values = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            values.push((recomposed[(i, j)] / p_hat).clamp(clip_low, clip_high));
        }
    }
    Ok(DenseMatrix::from_vec(n, m, values))
}
