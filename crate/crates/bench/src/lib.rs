//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;
use transport_core::simulate::{CovariateSpec, LinearIndex, Violation};
use transport_core::{generate, Design, DgpConfig, StudyDataset};

/// Four covariates, about 55% participation, constant violation (3, −2).
pub fn config(n: usize, seed: u64, design: Design) -> DgpConfig {
    DgpConfig {
        n,
        covariates: vec![
            CovariateSpec::normal("age", 0.0, 1.0),
            CovariateSpec::normal("bmi", 0.0, 1.0),
            CovariateSpec::bernoulli("male", 0.5),
            CovariateSpec::bernoulli("smoker", 0.3),
        ],
        participation: LinearIndex::new(0.2, vec![0.6, -0.3, 0.4, -0.5]),
        treatment_probability: 0.5,
        outcome_treated: LinearIndex::new(3.0, vec![2.0, 1.0, -0.5, 0.8]),
        outcome_control: LinearIndex::new(2.0, vec![0.5, 1.0, -0.5, 0.2]),
        noise_sd: 1.0,
        violation: Violation::constant(3.0, -2.0),
        seed,
        design,
    }
}

pub fn dataset(n: usize, design: Design) -> StudyDataset {
    generate(&config(n, 42, design)).expect("valid configuration")
}

/// Covariate matrix (no intercept column) and participation indicator.
pub fn participation_problem(ds: &StudyDataset) -> (DMatrix<f64>, Vec<f64>) {
    let k = ds.covariate_names.len();
    let x = DMatrix::from_fn(ds.n(), k, |i, j| ds.rows[i].x[j]);
    let s = ds.rows.iter().map(|r| if r.s() { 1.0 } else { 0.0 }).collect();
    (x, s)
}
