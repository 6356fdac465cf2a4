//! Debiased pairwise row distances.
//!
//! The distance between rows `i` and `i'` is the mean squared difference over
//! columns observed in both rows, minus `2 * sigma2` to cancel the noise
//! inflation. Negative debiased values are kept as-is; pairs with no common
//! column (or overlap below a configurable threshold) get `+inf` and are
//! thereby excluded from every proximity set.

use rayon::prelude::*;

use crate::matrix::MaskedMatrix;

/// Raw (un-debiased) overlap-mean distances with overlap counts.
///
/// Computed once per matrix; the debias shift is applied afterwards via
/// [`RawDistances::debiased`], which is what lets the fixed-point iteration
/// re-debias cheaply as the variance estimate moves.
#[derive(Debug, Clone)]
pub struct RawDistances {
    n: usize,
    /// Row-major n x n; `+inf` where the overlap is empty.
    dist: Vec<f64>,
    overlap: Vec<usize>,
}

/// Pairwise debiased row distances.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    n: usize,
    /// Row-major n x n; may be negative after debiasing, `+inf` where undefined.
    dist: Vec<f64>,
    overlap: Vec<usize>,
    /// The subtracted `2 * sigma2`.
    debias: f64,
}

/// Mean squared difference of two rows over commonly observed columns.
///
/// Returns `(+inf, 0)` when the rows share no observed column.
pub fn raw_row_distance(matrix: &MaskedMatrix, i: usize, i2: usize) -> (f64, usize) {
    let (xi, oi) = matrix.row(i);
    let (xk, ok) = matrix.row(i2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..xi.len() {
        if oi[j] && ok[j] {
            let d = xi[j] - xk[j];
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        (f64::INFINITY, 0)
    } else {
        (sum / count as f64, count)
    }
}

impl RawDistances {
    /// Computes all pairwise raw distances; row pairs run in parallel.
    pub fn compute(matrix: &MaskedMatrix) -> Self {
        let n = matrix.n_rows();
        let rows: Vec<Vec<(f64, usize)>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|k| raw_row_distance(matrix, i, k)).collect())
            .collect();
        let mut dist = vec![0.0; n * n];
        let mut overlap = vec![0usize; n * n];
        for i in 0..n {
            for (off, &(d, c)) in rows[i].iter().enumerate() {
                let k = i + off;
                dist[i * n + k] = d;
                dist[k * n + i] = d;
                overlap[i * n + k] = c;
                overlap[k * n + i] = c;
            }
        }
        Self { n, dist, overlap }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn raw(&self, i: usize, k: usize) -> f64 {
        self.dist[i * self.n + k]
    }

    pub fn overlap(&self, i: usize, k: usize) -> usize {
        self.overlap[i * self.n + k]
    }

    /// Applies the `-2 * sigma2` debias and the diagonal/overlap policy.
    pub fn debiased(&self, sigma2: f64, allow_self: bool, min_overlap: usize) -> DistanceTable {
        assert!(sigma2.is_finite() && sigma2 >= 0.0, "sigma2 must be finite and non-negative");
        let n = self.n;
        let shift = 2.0 * sigma2;
        let mut dist = vec![f64::INFINITY; n * n];
        for i in 0..n {
            for k in 0..n {
                let idx = i * n + k;
                if i == k {
                    dist[idx] = if allow_self { 0.0 } else { f64::INFINITY };
                } else if self.overlap[idx] >= min_overlap.max(1) {
                    dist[idx] = self.dist[idx] - shift;
                }
            }
        }
        DistanceTable { n, dist, overlap: self.overlap.clone(), debias: shift }
    }
}

/// Builds the debiased distance table in one step.
pub fn build_distance_table(
    matrix: &MaskedMatrix,
    sigma2: f64,
    allow_self: bool,
    min_overlap: usize,
) -> DistanceTable {
    RawDistances::compute(matrix).debiased(sigma2, allow_self, min_overlap)
}

impl DistanceTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dist(&self, i: usize, k: usize) -> f64 {
        self.dist[i * self.n + k]
    }

    pub fn overlap(&self, i: usize, k: usize) -> usize {
        self.overlap[i * self.n + k]
    }

    /// The subtracted `2 * sigma2`.
    pub fn debias(&self) -> f64 {
        self.debias
    }

    /// Distances from row `i` to every row, as a slice of length `n`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.dist[i * self.n..(i + 1) * self.n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::MaskedMatrix;
    use proptest::prelude::*;

    fn full(rows: &[&[f64]]) -> MaskedMatrix {
        let n = rows.len();
        let m = rows[0].len();
        let values: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        MaskedMatrix::from_parts(n, m, values, vec![true; n * m])
    }

    #[test]
    fn identical_rows_have_zero_distance() {
        let m = full(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
        assert_eq!(raw_row_distance(&m, 0, 1), (0.0, 3));
    }

    #[test]
    fn constant_offset_rows() {
        let m = full(&[&[0.0, 0.0], &[2.0, 2.0]]);
        assert_eq!(raw_row_distance(&m, 0, 1), (4.0, 2));
    }

    #[test]
    fn empty_overlap_is_infinite() {
        let m = MaskedMatrix::from_parts(
            2,
            3,
            vec![1.0, f64::NAN, 3.0, f64::NAN, 2.0, f64::NAN],
            vec![true, false, true, false, true, false],
        );
        assert_eq!(raw_row_distance(&m, 0, 1), (f64::INFINITY, 0));
    }

    #[test]
    fn debias_shifts_identical_rows_negative() {
        let m = full(&[&[1.0, 2.0], &[1.0, 2.0]]);
        let t = build_distance_table(&m, 0.5, true, 1);
        assert_eq!(t.dist(0, 1), -1.0);
        assert_eq!(t.dist(1, 0), -1.0);
    }

    #[test]
    fn debias_shifts_offset_rows() {
        let m = full(&[&[0.0, 0.0], &[2.0, 2.0]]);
        let t = build_distance_table(&m, 0.5, true, 1);
        assert_eq!(t.dist(0, 1), 3.0);
    }

    #[test]
    fn allow_self_zeroes_the_diagonal() {
        let m = full(&[&[0.0, 0.0], &[2.0, 2.0]]);
        let t = build_distance_table(&m, 0.7, true, 1);
        assert_eq!(t.dist(0, 0), 0.0);
        assert_eq!(t.dist(1, 1), 0.0);
        let t = build_distance_table(&m, 0.7, false, 1);
        assert!(t.dist(0, 0).is_infinite());
    }

    #[test]
    fn min_overlap_threshold_excludes_pairs() {
        let m = MaskedMatrix::from_parts(
            2,
            3,
            vec![1.0, 2.0, f64::NAN, 1.5, f64::NAN, 3.0],
            vec![true, true, false, true, false, true],
        );
        // overlap is 1 column
        let t = build_distance_table(&m, 0.0, true, 2);
        assert!(t.dist(0, 1).is_infinite());
        let t = build_distance_table(&m, 0.0, true, 1);
        assert!(t.dist(0, 1).is_finite());
    }

    fn random_masked(seed: u64, n: usize, m: usize, p: f64) -> MaskedMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(n * m);
        let mut observed = Vec::with_capacity(n * m);
        for _ in 0..n * m {
            if rng.random_bool(p) {
                values.push(rng.random_range(-2.0..2.0));
                observed.push(true);
            } else {
                values.push(f64::NAN);
                observed.push(false);
            }
        }
        MaskedMatrix::from_parts(n, m, values, observed)
    }

    proptest! {
        #[test]
        fn table_is_symmetric(seed in any::<u64>()) {
            let m = random_masked(seed, 8, 6, 0.7);
            let t = build_distance_table(&m, 0.3, true, 1);
            for i in 0..8 {
                for k in 0..8 {
                    prop_assert_eq!(t.dist(i, k).to_bits(), t.dist(k, i).to_bits());
                    prop_assert_eq!(t.overlap(i, k), t.overlap(k, i));
                }
            }
        }

        // Increasing sigma2 by c shifts every finite off-diagonal entry down by 2c.
        #[test]
        fn monotone_shift(seed in any::<u64>(), c in 0.01f64..2.0) {
            let m = random_masked(seed, 6, 5, 0.8);
            let base = build_distance_table(&m, 0.2, true, 1);
            let shifted = build_distance_table(&m, 0.2 + c, true, 1);
            for i in 0..6 {
                for k in 0..6 {
                    if i != k && base.dist(i, k).is_finite() {
                        prop_assert!((shifted.dist(i, k) - (base.dist(i, k) - 2.0 * c)).abs() < 1e-12);
                    }
                }
            }
        }

        // Fully observed, noiseless, sigma2 = 0: distance equals the exact
        // per-column mean squared signal difference.
        #[test]
        fn noiseless_distance_is_exact(seed in any::<u64>()) {
            let m = random_masked(seed, 5, 7, 1.0);
            let t = build_distance_table(&m, 0.0, true, 1);
            for i in 0..5 {
                for k in 0..5 {
                    if i == k { continue; }
                    let mut expect = 0.0;
                    for j in 0..7 {
                        let d = m.get(i, j).unwrap() - m.get(k, j).unwrap();
                        expect += d * d;
                    }
                    expect /= 7.0;
                    prop_assert!((t.dist(i, k) - expect).abs() < 1e-12);
                }
            }
        }
    }
}
