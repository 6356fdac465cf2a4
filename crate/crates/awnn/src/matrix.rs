//! Partially observed matrices and their CSV round trip.
//!
//! A [`MaskedMatrix`] holds an `n x m` grid of `f64` values together with a
//! boolean observation mask; values at unobserved cells are undefined (stored
//! as NaN, never read by the algorithms). A [`DenseMatrix`] is the fully
//! defined counterpart used for ground truth and estimates.
//!
//! The CSV format is plain comma-separated numbers, one row per line, with a
//! configurable missing token (default `"NaN"`; an empty cell also counts as
//! missing on read). Values are written with 17 significant digits so that a
//! save/load round trip is bit-exact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Token written for unobserved cells.
pub const MISSING_TOKEN: &str = "NaN";

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("empty matrix: {path}")]
    EmptyMatrix { path: PathBuf },
    #[error("ragged row {row} in {path}: expected {expected} cells, found {found}")]
    RaggedRow {
        path: PathBuf,
        /// 1-based row number.
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unparseable cell at row {row}, col {col} in {path}: {token:?}")]
    BadCell {
        path: PathBuf,
        /// 1-based row number.
        row: usize,
        /// 1-based column number.
        col: usize,
        token: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// An `n x m` matrix with a boolean observation mask.
///
/// Immutable after construction; cheap to share across threads.
#[derive(Debug, Clone)]
pub struct MaskedMatrix {
    n_rows: usize,
    n_cols: usize,
    /// Row-major values; NaN where unobserved.
    values: Vec<f64>,
    /// Row-major mask; `true` where a value is observed.
    observed: Vec<bool>,
}

// bitwise equality so NaN placeholders compare equal
impl PartialEq for MaskedMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.observed == other.observed
            && bits_equal(&self.values, &other.values)
    }
}

impl Eq for MaskedMatrix {}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl MaskedMatrix {
    /// Builds a matrix from row-major values and mask.
    ///
    /// Panics if the dimensions are zero, the buffer lengths disagree, or an
    /// observed value is non-finite.
    pub fn from_parts(n_rows: usize, n_cols: usize, values: Vec<f64>, observed: Vec<bool>) -> Self {
        assert!(n_rows >= 1 && n_cols >= 1, "matrix dimensions must be positive");
        assert_eq!(values.len(), n_rows * n_cols);
        assert_eq!(observed.len(), n_rows * n_cols);
        for (idx, (&v, &obs)) in values.iter().zip(&observed).enumerate() {
            if obs {
                assert!(
                    v.is_finite(),
                    "observed value at ({}, {}) is not finite",
                    idx / n_cols,
                    idx % n_cols
                );
            }
        }
        Self { n_rows, n_cols, values, observed }
    }

    /// A fully observed matrix built from a dense one.
    pub fn fully_observed(dense: &DenseMatrix) -> Self {
        Self::from_parts(
            dense.n_rows,
            dense.n_cols,
            dense.values.clone(),
            vec![true; dense.n_rows * dense.n_cols],
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.n_cols + j]
    }

    /// The value at `(i, j)` if observed.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if self.is_observed(i, j) {
            Some(self.values[i * self.n_cols + j])
        } else {
            None
        }
    }

    /// Raw value without checking the mask; NaN where unobserved.
    pub fn value_raw(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    /// Row `i` as (values, mask) slices.
    pub fn row(&self, i: usize) -> (&[f64], &[bool]) {
        let start = i * self.n_cols;
        (&self.values[start..start + self.n_cols], &self.observed[start..start + self.n_cols])
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Fraction of observed entries, in `[0, 1]`.
    pub fn observed_fraction(&self) -> f64 {
        self.observed_count() as f64 / (self.n_rows * self.n_cols) as f64
    }

    /// Iterates `(i, j, value)` over observed cells in row-major order.
    pub fn observed_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n_cols = self.n_cols;
        self.observed.iter().enumerate().filter_map(move |(idx, &obs)| {
            obs.then(|| (idx / n_cols, idx % n_cols, self.values[idx]))
        })
    }

    /// Returns a copy with the given cells masked off (used by holdout tuning).
    pub fn with_masked_cells(&self, cells: &[(usize, usize)]) -> Self {
        let mut out = self.clone();
        for &(i, j) in cells {
            let idx = i * self.n_cols + j;
            out.observed[idx] = false;
            out.values[idx] = f64::NAN;
        }
        out
    }

    /// Parses a rectangular CSV file. Cells equal to `missing_token`
    /// (case-insensitive) or empty mark unobserved entries.
    pub fn load_csv(path: impl AsRef<Path>, missing_token: &str) -> Result<Self, MatrixError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| MatrixError::Io { path: path.to_owned(), source })?;
        parse_csv(&text, missing_token, path)
    }

    /// Writes the matrix as CSV, with [`MISSING_TOKEN`] at unobserved cells.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), MatrixError> {
        let path = path.as_ref();
        let mut out = String::new();
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                if j > 0 {
                    out.push(',');
                }
                match self.get(i, j) {
                    Some(v) => write_value(&mut out, v),
                    None => out.push_str(MISSING_TOKEN),
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|source| MatrixError::Io { path: path.to_owned(), source })
    }
}

/// A fully defined `n x m` matrix of `f64`.
///
/// Estimator outputs may carry NaN at cells flagged non-imputable in the
/// accompanying audit; everywhere else entries are finite.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

// bitwise equality so NaN markers compare equal
impl PartialEq for DenseMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && bits_equal(&self.values, &other.values)
    }
}

impl Eq for DenseMatrix {}

impl DenseMatrix {
    pub fn from_vec(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Self {
        assert!(n_rows >= 1 && n_cols >= 1, "matrix dimensions must be positive");
        assert_eq!(values.len(), n_rows * n_cols);
        Self { n_rows, n_cols, values }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self::from_vec(n_rows, n_cols, vec![0.0; n_rows * n_cols])
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_cols + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Loads a CSV that must have no missing cells.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, MatrixError> {
        let path = path.as_ref();
        let masked = MaskedMatrix::load_csv(path, MISSING_TOKEN)?;
        for i in 0..masked.n_rows() {
            for j in 0..masked.n_cols() {
                if !masked.is_observed(i, j) {
                    return Err(MatrixError::BadCell {
                        path: path.to_owned(),
                        row: i + 1,
                        col: j + 1,
                        token: MISSING_TOKEN.to_owned(),
                    });
                }
            }
        }
        Ok(Self { n_rows: masked.n_rows, n_cols: masked.n_cols, values: masked.values })
    }

    /// Writes the matrix as CSV; NaN entries serialize as [`MISSING_TOKEN`].
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), MatrixError> {
        let path = path.as_ref();
        let mut out = String::new();
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                if j > 0 {
                    out.push(',');
                }
                let v = self.get(i, j);
                if v.is_nan() {
                    out.push_str(MISSING_TOKEN);
                } else {
                    write_value(&mut out, v);
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|source| MatrixError::Io { path: path.to_owned(), source })
    }
}

/// 17 significant digits: enough to reproduce any f64 bit-exactly on parse.
fn write_value(out: &mut String, v: f64) {
    write!(out, "{:.16e}", v).expect("write to String");
}

fn parse_csv(text: &str, missing_token: &str, path: &Path) -> Result<MaskedMatrix, MatrixError> {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(MatrixError::EmptyMatrix { path: path.to_owned() });
    }
    let n_cols = lines[0].split(',').count();
    let n_rows = lines.len();
    let mut values = Vec::with_capacity(n_rows * n_cols);
    let mut observed = Vec::with_capacity(n_rows * n_cols);
    for (r, line) in lines.iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(MatrixError::RaggedRow {
                path: path.to_owned(),
                row: r + 1,
                expected: n_cols,
                found: cells.len(),
            });
        }
        for (c, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() || cell.eq_ignore_ascii_case(missing_token) {
                values.push(f64::NAN);
                observed.push(false);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    values.push(v);
                    observed.push(true);
                }
                _ => {
                    return Err(MatrixError::BadCell {
                        path: path.to_owned(),
                        row: r + 1,
                        col: c + 1,
                        token: cell.to_owned(),
                    });
                }
            }
        }
    }
    Ok(MaskedMatrix::from_parts(n_rows, n_cols, values, observed))
}
