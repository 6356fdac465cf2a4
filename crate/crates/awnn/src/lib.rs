//! Adaptively weighted nearest-neighbor (AWNN) matrix completion.
//!
//! The estimator imputes each cell of a partially observed matrix as a
//! weighted average over rows observed in that column. The weights minimize a
//! ridge-regularized linear distance objective over the probability simplex
//! and have a closed form computed by a water-filling routine; the
//! regularizer scales with a noise-variance estimate obtained by a fixed-point
//! iteration. The crate also ships unweighted row-nearest-neighbor and
//! USVT baselines, a synthetic benchmark generator with SNR-calibrated noise,
//! and an experiment harness that measures MSE decay rates.

pub mod baselines;
pub mod distance;
pub mod estimator;
pub mod experiments;
pub mod matrix;
pub mod seeding;
pub mod simplex;
pub mod synthetic;

pub use baselines::{rownn_impute, rownn_tune, usvt_impute, BaselineError, RowNnConfig, UsvtConfig};
pub use distance::{build_distance_table, raw_row_distance, DistanceTable, RawDistances};
pub use estimator::{
    audit_distance_bounds, fit, oracle_fit, row_imputer, BoundReport, CellStats, EstimatorConfig,
    EstimatorError, ImputationResult, LogConstantMode, WeightAudit,
};
pub use experiments::{
    fit_slope, mse, run_bench, slopes_from_records, BenchSpec, ExperimentError, ExperimentRecord,
    ExperimentResult, Method, SlopeRow,
};
pub use matrix::{DenseMatrix, MaskedMatrix, MatrixError, MISSING_TOKEN};
pub use simplex::{
    qp_oracle, solve_weights, solve_weights_degenerate, weight_adjuster, WeightError,
    WeightSolution,
};
pub use synthetic::{
    calibrate_noise, generate, holder_f, InstanceMeta, SyntheticError, SyntheticInstance,
    SyntheticSpec,
};
