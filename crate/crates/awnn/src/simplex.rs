//! Simplex-constrained quadratic weight solver.
//!
//! For a target row with neighbor distances `d` and a ridge coefficient
//! `r > 0`, the weights minimize `r * ||w||^2 + sum_i w_i d_i` over the
//! probability simplex. The minimizer is computed in closed form by
//! water-filling: form `a_i = 1/K - (d_i - mean d) / (2r)`, find the level `u`
//! with `sum_i max(a_i - u, 0) = 1`, and clamp. Rows with `+inf` distance are
//! excluded up front.
//!
//! [`qp_oracle`] solves the same program by projected gradient descent with
//! its own simplex projection; it exists as an independent cross-check and is
//! deliberately not shared with the closed-form path.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("empty weight sequence")]
    EmptySequence,
    #[error("not pre-normalized: sequence sums to {sum}")]
    NotNormalized { sum: f64 },
    #[error("no admissible neighbors: all distances are infinite")]
    NoAdmissibleNeighbors,
    #[error("projected gradient did not converge after {iters} iterations")]
    NoConvergence { iters: usize },
}

/// A per-target simplex weight vector over its proximity set.
///
/// Rows outside the proximity set have weight zero. Within the set, the
/// entries are ordered by ascending distance (ties by row index), so weights
/// are non-increasing along the set.
#[derive(Debug, Clone)]
pub struct WeightSolution {
    proximity_set: Vec<usize>,
    weights: Vec<f64>,
    /// Water-filling level from the adjuster (shifted dual of the simplex
    /// constraint multiplier).
    u: f64,
    /// The coefficient applied to `||w||^2`.
    regularizer: f64,
}

impl WeightSolution {
    /// Rows with strictly positive weight, ordered by ascending distance.
    pub fn proximity_set(&self) -> &[usize] {
        &self.proximity_set
    }

    /// Weights parallel to [`WeightSolution::proximity_set`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cardinality of the proximity set.
    pub fn k(&self) -> usize {
        self.proximity_set.len()
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn regularizer(&self) -> f64 {
        self.regularizer
    }

    /// Weight of a specific row (zero outside the proximity set).
    pub fn weight_of(&self, row: usize) -> f64 {
        self.proximity_set
            .iter()
            .position(|&r| r == row)
            .map_or(0.0, |p| self.weights[p])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.proximity_set.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Water-filling level for a pre-normalized sequence.
///
/// Given `a` with `sum a_i = 1`, returns `u` such that
/// `sum_i max(a_i - u, 0) = 1`: sort decreasing, accumulate, and stop as soon
/// as the next element falls at or below the running level.
pub fn weight_adjuster(a: &[f64]) -> Result<f64, WeightError> {
    if a.is_empty() {
        return Err(WeightError::EmptySequence);
    }
    let sum: f64 = a.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(WeightError::NotNormalized { sum });
    }
    let mut b = a.to_vec();
    // descending; ties keep a deterministic order (values only matter)
    b.sort_by(|x, y| y.total_cmp(x));
    let mut acc = 0.0;
    let mut u = 0.0;
    for k in 1..=b.len() {
        acc += b[k - 1];
        u = (acc - 1.0) / k as f64;
        if k == b.len() || b[k] <= u {
            break;
        }
    }
    Ok(u)
}

/// Minimizes `regularizer * ||w||^2 + sum w_i d_i` over the simplex.
///
/// `distances` pairs each candidate row with its (possibly negative) debiased
/// distance; `+inf` entries are excluded before forming the water-filling
/// sequence.
pub fn solve_weights(
    distances: &[(usize, f64)],
    regularizer: f64,
) -> Result<WeightSolution, WeightError> {
    assert!(regularizer > 0.0, "regularizer must be positive");
    let cands: Vec<(usize, f64)> =
        distances.iter().copied().filter(|&(_, d)| d.is_finite()).collect();
    if cands.is_empty() {
        return Err(WeightError::NoAdmissibleNeighbors);
    }
    let k0 = cands.len() as f64;
    let mean: f64 = cands.iter().map(|&(_, d)| d).sum::<f64>() / k0;
    let a: Vec<f64> = cands
        .iter()
        .map(|&(_, d)| 1.0 / k0 - (d - mean) / (2.0 * regularizer))
        .collect();
    let u = weight_adjuster(&a)?;
    build_solution(&cands, &a, u, regularizer)
}

/// Noiseless limit of [`solve_weights`]: uniform weight over the
/// argmin-distance rows, everything else zero.
pub fn solve_weights_degenerate(
    distances: &[(usize, f64)],
) -> Result<WeightSolution, WeightError> {
    let mut best = f64::INFINITY;
    for &(_, d) in distances {
        if d < best {
            best = d;
        }
    }
    if best.is_infinite() {
        return Err(WeightError::NoAdmissibleNeighbors);
    }
    let mut set: Vec<usize> =
        distances.iter().filter(|&&(_, d)| d == best).map(|&(r, _)| r).collect();
    set.sort_unstable();
    let k = set.len();
    Ok(WeightSolution {
        weights: vec![1.0 / k as f64; k],
        proximity_set: set,
        u: 0.0,
        regularizer: 0.0,
    })
}

fn build_solution(
    cands: &[(usize, f64)],
    a: &[f64],
    u: f64,
    regularizer: f64,
) -> Result<WeightSolution, WeightError> {
    let mut active: Vec<(usize, f64, f64)> = cands
        .iter()
        .zip(a)
        .filter(|(_, &ai)| ai > u)
        .map(|(&(row, d), &ai)| (row, d, ai - u))
        .collect();
    active.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    Ok(WeightSolution {
        proximity_set: active.iter().map(|&(row, _, _)| row).collect(),
        weights: active.iter().map(|&(_, _, w)| w).collect(),
        u,
        regularizer,
    })
}

/// Incremental water-filling over candidates streamed in ascending-distance
/// order; used by the row imputer's hot path.
///
/// Equivalent to [`solve_weights`] because the water-filling weights are
/// invariant to constant shifts of the sequence: working with
/// `v_i = -d_i / (2r)` skips the mean and `1/K` terms. Fills `buf` with
/// `(row, distance, weight)` for the proximity set (ascending distance order)
/// and returns `false` when the stream is empty.
pub(crate) fn waterfill_ascending<I>(
    cands: I,
    regularizer: f64,
    buf: &mut Vec<(usize, f64, f64)>,
) -> bool
where
    I: Iterator<Item = (usize, f64)>,
{
    buf.clear();
    let inv = 1.0 / (2.0 * regularizer);
    let mut sum_v = 0.0;
    let mut level = f64::NEG_INFINITY;
    let mut k = 0usize;
    for (row, d) in cands {
        let v = -d * inv;
        if k > 0 && v <= level {
            break;
        }
        buf.push((row, d, v));
        k += 1;
        sum_v += v;
        level = (sum_v - 1.0) / k as f64;
    }
    if k == 0 {
        return false;
    }
    for entry in buf.iter_mut() {
        entry.2 -= level;
    }
    true
}

/// Independent projected-gradient solver for the same objective.
///
/// Fixed step `1 / (4 * regularizer)` (half the inverse gradient Lipschitz
/// constant); stops once the iterate moves less than 1e-13 in the max norm.
pub fn qp_oracle(
    distances: &[(usize, f64)],
    regularizer: f64,
) -> Result<WeightSolution, WeightError> {
    assert!(regularizer > 0.0, "regularizer must be positive");
    let cands: Vec<(usize, f64)> =
        distances.iter().copied().filter(|&(_, d)| d.is_finite()).collect();
    if cands.is_empty() {
        return Err(WeightError::NoAdmissibleNeighbors);
    }
    let n = cands.len();
    let step = 1.0 / (4.0 * regularizer);
    let max_iters = 100_000;
    let mut w = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iters {
        for i in 0..n {
            next[i] = w[i] - step * (2.0 * regularizer * w[i] + cands[i].1);
        }
        project_to_simplex(&mut next);
        let delta = w
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        std::mem::swap(&mut w, &mut next);
        if delta <= 1e-13 {
            // recover the adjuster-space level from the active set
            let k0 = n as f64;
            let mean: f64 = cands.iter().map(|&(_, d)| d).sum::<f64>() / k0;
            let a: Vec<f64> = cands
                .iter()
                .map(|&(_, d)| 1.0 / k0 - (d - mean) / (2.0 * regularizer))
                .collect();
            let active: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
            let u = active.iter().map(|&i| a[i] - w[i]).sum::<f64>() / active.len() as f64;
            let mut entries: Vec<(usize, f64, f64)> =
                active.iter().map(|&i| (cands[i].0, cands[i].1, w[i])).collect();
            entries.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            return Ok(WeightSolution {
                proximity_set: entries.iter().map(|&(row, _, _)| row).collect(),
                weights: entries.iter().map(|&(_, _, wi)| wi).collect(),
                u,
                regularizer,
            });
        }
    }
    Err(WeightError::NoConvergence { iters: max_iters })
}

/// Euclidean projection onto the probability simplex (sort/cumulative-sum
/// form). Kept separate from [`weight_adjuster`] so the oracle path stays
/// independent of the closed form.
fn project_to_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
    // guard against drift in long PGD runs
    let total: f64 = v.iter().sum();
    if total > 0.0 && (total - 1.0).abs() > 1e-15 {
        for x in v.iter_mut() {
            *x /= total;
        }
    }
}

/// Objective value `regularizer * ||w||^2 + sum w_i d_i` of a solution.
pub fn objective(solution: &WeightSolution, distances: &[(usize, f64)]) -> f64 {
    let quad: f64 = solution.weights.iter().map(|w| w * w).sum();
    let lin: f64 = solution
        .iter()
        .map(|(row, w)| {
            let d = distances.iter().find(|&&(r, _)| r == row).map(|&(_, d)| d).unwrap();
            w * d
        })
        .sum();
    solution.regularizer * quad + lin
}
