//! Synthetic instance generation: Hölder signal from latent factors,
//! SNR-calibrated Gaussian noise, and MCAR masking.
//!
//! Signals follow a non-linear factor model
//! `theta[i][j] = sum_k |u_ik + v_jk|^lambda * sgn(u_ik + v_jk)` with latent
//! factors drawn uniformly from `[-0.5, 0.5]^d`. The noise variance is chosen
//! so the signal-to-noise ratio `sqrt(sum theta^2 / (n m sigma^2))` equals the
//! requested value, and the mask is i.i.d. Bernoulli(p) independent of
//! everything else.
//!
//! Generation is fully deterministic given the seed: the latent factors, the
//! noise, and the mask each draw from an independent ChaCha8 substream derived
//! via SplitMix64 (see [`GENERATOR_TAG`]).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{DenseMatrix, MaskedMatrix, MatrixError};
use crate::seeding::derive_seed;

/// Identifies the PRNG construction recorded in instance metadata.
pub const GENERATOR_TAG: &str = "chacha8-splitmix64-v1";

const STREAM_ROW_FACTORS: u64 = 1;
const STREAM_COL_FACTORS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_MASK: u64 = 4;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("lambda must be in (0,1], got {0}")]
    BadLambda(f64),
    #[error("p must be in (0,1], got {0}")]
    BadObservationProbability(f64),
    #[error("snr must be positive, got {0}")]
    BadSnr(f64),
    #[error("dimensions must be positive")]
    BadDimensions,
    #[error("SNR undefined: signal matrix is identically zero")]
    ZeroSignal,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("metadata error on {path}: {message}")]
    Meta { path: std::path::PathBuf, message: String },
}

/// Parameters of one synthetic instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    /// Latent dimension.
    pub d: usize,
    /// Hölder exponent in (0, 1].
    pub lambda: f64,
    /// Signal-to-noise ratio, > 0.
    pub snr: f64,
    /// Observation probability in (0, 1].
    pub p: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n: 64, m: 64, d: 2, lambda: 1.0, snr: 1.0, p: 1.0, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(SyntheticError::BadDimensions);
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(SyntheticError::BadLambda(self.lambda));
        }
        if !(self.snr > 0.0) {
            return Err(SyntheticError::BadSnr(self.snr));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(SyntheticError::BadObservationProbability(self.p));
        }
        Ok(())
    }
}

/// A generated instance with full ground truth retained.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub spec: SyntheticSpec,
    pub theta: DenseMatrix,
    pub data: MaskedMatrix,
    /// Row latent factors, n x d row-major.
    pub row_factors: Vec<f64>,
    /// Column latent factors, m x d row-major.
    pub col_factors: Vec<f64>,
    /// Calibrated noise variance.
    pub sigma_eps2: f64,
}

/// Companion metadata written next to `theta.csv` / `data.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub lambda: f64,
    pub snr: f64,
    pub p: f64,
    pub seed: u64,
    pub sigma_eps2: f64,
    pub generator: String,
}

/// The link function: `sum_k |u_k + v_k|^lambda * sgn(u_k + v_k)`, with
/// `sgn(0) * 0^lambda = 0`.
pub fn holder_f(u: &[f64], v: &[f64], lambda: f64) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let s = a + b;
            if s == 0.0 {
                0.0
            } else {
                s.abs().powf(lambda) * s.signum()
            }
        })
        .sum()
}

/// The unique noise variance making the SNR of `theta` equal `snr`.
pub fn calibrate_noise(theta: &DenseMatrix, snr: f64) -> Result<f64, SyntheticError> {
    if !(snr > 0.0) {
        return Err(SyntheticError::BadSnr(snr));
    }
    let sum_sq: f64 = theta.values().iter().map(|&t| t * t).sum();
    if sum_sq == 0.0 {
        return Err(SyntheticError::ZeroSignal);
    }
    Ok(sum_sq / ((theta.n_rows() * theta.n_cols()) as f64 * snr * snr))
}

/// Generates a full instance; bit-identical for identical specs.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticInstance, SyntheticError> {
    spec.validate()?;
    let (n, m, d) = (spec.n, spec.m, spec.d);

    let mut u_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[STREAM_ROW_FACTORS]));
    let mut v_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[STREAM_COL_FACTORS]));
    let row_factors: Vec<f64> = (0..n * d).map(|_| u_rng.random_range(-0.5..0.5)).collect();
    let col_factors: Vec<f64> = (0..m * d).map(|_| v_rng.random_range(-0.5..0.5)).collect();

    let mut theta = DenseMatrix::zeros(n, m);
    for i in 0..n {
        let ui = &row_factors[i * d..(i + 1) * d];
        for j in 0..m {
            let vj = &col_factors[j * d..(j + 1) * d];
            theta.set(i, j, holder_f(ui, vj, spec.lambda));
        }
    }

    let sigma_eps2 = calibrate_noise(&theta, spec.snr)?;
    let normal = Normal::new(0.0, sigma_eps2.sqrt()).expect("finite std dev");

    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[STREAM_NOISE]));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[STREAM_MASK]));
    let mut values = Vec::with_capacity(n * m);
    let mut observed = Vec::with_capacity(n * m);
    for idx in 0..n * m {
        // noise drawn for every cell so the mask stream stays independent
        let eps: f64 = normal.sample(&mut noise_rng);
        let obs = mask_rng.random_bool(spec.p);
        observed.push(obs);
        values.push(if obs { theta.values()[idx] + eps } else { f64::NAN });
    }
    let data = MaskedMatrix::from_parts(n, m, values, observed);

    Ok(SyntheticInstance { spec: *spec, theta, data, row_factors, col_factors, sigma_eps2 })
}

impl SyntheticInstance {
    pub fn meta(&self) -> InstanceMeta {
        InstanceMeta {
            n: self.spec.n,
            m: self.spec.m,
            d: self.spec.d,
            lambda: self.spec.lambda,
            snr: self.spec.snr,
            p: self.spec.p,
            seed: self.spec.seed,
            sigma_eps2: self.sigma_eps2,
            generator: GENERATOR_TAG.to_owned(),
        }
    }

    /// Writes `theta.csv`, `data.csv`, and `meta.json` into `dir`.
    pub fn save_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), SyntheticError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| SyntheticError::Meta {
            path: dir.to_owned(),
            message: e.to_string(),
        })?;
        self.theta.save_csv(dir.join("theta.csv"))?;
        self.data.save_csv(dir.join("data.csv"))?;
        let meta_path = dir.join("meta.json");
        let json = serde_json::to_string_pretty(&self.meta()).expect("meta serializes");
        std::fs::write(&meta_path, json)
            .map_err(|e| SyntheticError::Meta { path: meta_path, message: e.to_string() })?;
        Ok(())
    }
}

/// Reads a `meta.json` written by [`SyntheticInstance::save_to_dir`].
pub fn load_meta(path: impl AsRef<Path>) -> Result<InstanceMeta, SyntheticError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| SyntheticError::Meta { path: path.to_owned(), message: e.to_string() })?;
    serde_json::from_str(&text)
        .map_err(|e| SyntheticError::Meta { path: path.to_owned(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn holder_f_examples() {
        assert_eq!(holder_f(&[0.3, -0.1], &[-0.3, 0.1], 0.7), 0.0);
        assert!((holder_f(&[0.1], &[0.15], 1.0) - 0.25).abs() < 1e-15);
        // sqrt(0.25) - sqrt(0.04)
        let got = holder_f(&[0.20, -0.02], &[0.05, -0.02], 0.5);
        assert!((got - 0.3).abs() < 1e-15);
    }

    #[test]
    fn calibrate_noise_examples() {
        let theta = DenseMatrix::from_vec(2, 2, vec![3.0; 4]);
        assert!((calibrate_noise(&theta, 1.0).unwrap() - 9.0).abs() < 1e-12);
        let theta = DenseMatrix::from_vec(2, 2, vec![2.0; 4]);
        assert!((calibrate_noise(&theta, 2.0).unwrap() - 1.0).abs() < 1e-12);
        let zero = DenseMatrix::zeros(3, 3);
        assert!(matches!(calibrate_noise(&zero, 1.0), Err(SyntheticError::ZeroSignal)));
    }

    #[test]
    fn full_observation_when_p_is_one() {
        let spec = SyntheticSpec { n: 10, m: 8, p: 1.0, seed: 3, ..Default::default() };
        let inst = generate(&spec).unwrap();
        assert_eq!(inst.data.observed_fraction(), 1.0);
    }

    #[test]
    fn huge_snr_makes_data_match_theta() {
        let spec = SyntheticSpec { n: 12, m: 12, snr: 1e9, seed: 11, ..Default::default() };
        let inst = generate(&spec).unwrap();
        let scale = inst.theta.values().iter().fold(0.0f64, |a, &t| a.max(t.abs()));
        for (i, j, x) in inst.data.observed_entries() {
            assert!((x - inst.theta.get(i, j)).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec { n: 9, m: 7, p: 0.6, seed: 42, ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.data, b.data);
        assert_eq!(a.sigma_eps2.to_bits(), b.sigma_eps2.to_bits());
    }

    #[test]
    fn snr_round_trip() {
        let spec = SyntheticSpec { n: 20, m: 15, snr: 3.7, seed: 5, ..Default::default() };
        let inst = generate(&spec).unwrap();
        let sum_sq: f64 = inst.theta.values().iter().map(|&t| t * t).sum();
        let snr = (sum_sq / (300.0 * inst.sigma_eps2)).sqrt();
        assert!((snr - 3.7).abs() < 1e-12);
    }

    #[test]
    fn theta_is_bounded_by_d() {
        let spec = SyntheticSpec { n: 30, m: 30, d: 3, lambda: 0.5, seed: 1, ..Default::default() };
        let inst = generate(&spec).unwrap();
        assert!(inst.theta.values().iter().all(|t| t.abs() <= 3.0));
    }

    #[test]
    fn empirical_observation_rate_matches_p() {
        // 3-sigma statistical check; ~1 expected failure in 370 seeds
        let spec =
            SyntheticSpec { n: 100, m: 100, p: 0.65, seed: 12345, ..Default::default() };
        let inst = generate(&spec).unwrap();
        let tol = 3.0 * (0.65f64 * 0.35 / 10_000.0).sqrt();
        assert!((inst.data.observed_fraction() - 0.65).abs() <= tol);
    }

    #[test]
    fn meta_round_trip() {
        let spec = SyntheticSpec { n: 4, m: 5, p: 0.8, seed: 9, ..Default::default() };
        let inst = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        inst.save_to_dir(dir.path()).unwrap();
        let meta = load_meta(dir.path().join("meta.json")).unwrap();
        assert_eq!(meta.n, 4);
        assert_eq!(meta.m, 5);
        assert_eq!(meta.generator, GENERATOR_TAG);
        assert_eq!(meta.sigma_eps2.to_bits(), inst.sigma_eps2.to_bits());
        let data = MaskedMatrix::load_csv(dir.path().join("data.csv"), "NaN").unwrap();
        assert_eq!(data, inst.data);
    }

    proptest! {
        // f is odd under (u, v) -> (-u, -v).
        #[test]
        fn holder_f_is_odd(seed in any::<u64>(), lambda in 0.1f64..=1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = rng.random_range(1..5);
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
            let nu: Vec<f64> = u.iter().map(|x| -x).collect();
            let nv: Vec<f64> = v.iter().map(|x| -x).collect();
            prop_assert!((holder_f(&u, &v, lambda) + holder_f(&nu, &nv, lambda)).abs() < 1e-12);
        }

        // Hölder probe: |f(x) - f(x')| <= 2 d ||x - x'||_inf^lambda (loose constant).
        #[test]
        fn holder_probe(seed in any::<u64>(), lambda in 0.1f64..=1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = rng.random_range(1..4usize);
            let x: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-0.5..0.5)).collect();
            let y: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-0.5..0.5)).collect();
            let fx = holder_f(&x[..d], &x[d..], lambda);
            let fy = holder_f(&y[..d], &y[d..], lambda);
            let gap = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
            prop_assert!((fx - fy).abs() <= 2.0 * d as f64 * gap.powf(lambda) + 1e-12);
        }
    }
}
