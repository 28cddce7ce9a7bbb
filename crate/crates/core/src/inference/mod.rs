//! Standard errors and confidence intervals: a stacked estimating-equation sandwich and a
//! stratified nonparametric bootstrap.

mod bootstrap;
mod sandwich;
mod system;

pub use bootstrap::{bootstrap, resample_indices, BootstrapConfig, BootstrapResult};
pub use sandwich::{mean_psi, sandwich, solve_newton, EstimatingFunction, ParamBlock, SandwichResult};
pub use system::{transport_inference, StackMode, TransportSystem};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::estimators::{EstimateError, Estimator};

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Fraction of failed bootstrap replicates above which the bootstrap is abandoned.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("confidence level {0} must lie in (0, 1)")]
    InvalidLevel(f64),
    #[error("derivative matrix is numerically singular (condition number {condition:.3e}); simplify the working models")]
    Singular { condition: f64 },
    #[error("estimating equations did not converge after {iterations} iterations (max residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{failed} of {total} bootstrap replicates failed (more than 20%); last error: {last_error}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        last_error: String,
    },
    #[error("bootstrap statistic changed length from {expected} to {found}")]
    StatisticLength { expected: usize, found: usize },
    #[error("weight truncation is not supported with sandwich inference for {0}; use the bootstrap")]
    TruncationUnsupported(Estimator),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

/// Point estimate with standard error and confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Two-sided normal critical value for `level`, e.g. 1.959964 at 0.95.
pub fn normal_quantile(level: f64) -> Result<f64, InferenceError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::InvalidLevel(level));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

pub fn wald(estimate: f64, se: f64, level: f64) -> Result<Interval, InferenceError> {
    let z = normal_quantile(level)?;
    Ok(Interval {
        estimate,
        se,
        lo: estimate - z * se,
        hi: estimate + z * se,
    })
}

/// Linear-interpolation quantile of sorted data (type 7). NaN for empty input.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            if lo + 1 >= n {
                return sorted[n - 1];
            }
            sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
        }
    }
}
