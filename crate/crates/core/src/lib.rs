//! Transporting randomized-trial estimates to a target population, with bias-function
//! sensitivity analysis.
//!
//! The usual flow: load a [`StudyDataset`], fit the working models with [`fit_nuisance`],
//! then evaluate estimators over a grid of bias functions with [`run_grid`].

pub mod bias;
pub mod data;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod positivity;
pub mod sensitivity;
pub mod simulate;

pub use bias::{eval_delta, eval_u, make_grid, BiasError, BiasFunctionSpec, Modulation, ModulationConfig, ModulationRule};
pub use data::{
    load_dataset, read_dataset, validate_structure, Arm, DataError, Design, Row, Schema, StructureReport, StudyDataset,
};
pub use estimators::{
    estimate_mean, estimate_triple, EstimateError, EstimateRecord, Estimand, Estimator, EstimatorOptions, EvalContext,
    InferenceTag, Target,
};
pub use glm::{fit_nuisance, DesignSpec, GlmError, ModelSpec, NuisanceError, NuisanceModels, TreatmentSpec};
pub use inference::{InferenceError, Interval};
pub use positivity::{positivity_diagnostics, PositivityError, PositivityReport};
pub use sensitivity::{
    find_crossing, run_grid, Crossing, GridCell, InferenceConfig, InferenceMethod, SensitivityError,
    SensitivityGridResult,
};
pub use simulate::{generate, generate_replicate, true_values, DgpConfig, SimulateError, Truths};

use thiserror::Error;

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("glm: {0}")]
    Nuisance(#[from] NuisanceError),
    #[error("glm: {0}")]
    Glm(#[from] GlmError),
    #[error("bias: {0}")]
    Bias(#[from] BiasError),
    #[error("estimators: {0}")]
    Estimate(#[from] EstimateError),
    #[error("inference: {0}")]
    Inference(#[from] InferenceError),
    #[error("positivity: {0}")]
    Positivity(#[from] PositivityError),
    #[error("sensitivity: {0}")]
    Sensitivity(#[from] SensitivityError),
    #[error("simulate: {0}")]
    Simulate(#[from] SimulateError),
}

impl Error {
    /// Whether the failure is numerical (non-convergence, separation, singular systems,
    /// positivity) rather than a problem with the inputs.
    pub fn is_numerical(&self) -> bool {
        fn glm(e: &GlmError) -> bool {
            matches!(
                e,
                GlmError::NonConvergence { .. } | GlmError::Separation { .. } | GlmError::RankDeficient { .. }
            )
        }
        fn estimate(e: &EstimateError) -> bool {
            match e {
                EstimateError::Positivity { .. } | EstimateError::ZeroWeightSum { .. } => true,
                EstimateError::Glm(g) => glm(g),
                _ => false,
            }
        }
        fn inference(e: &InferenceError) -> bool {
            match e {
                InferenceError::Singular { .. }
                | InferenceError::NonConvergence { .. }
                | InferenceError::TooManyFailures { .. } => true,
                InferenceError::Estimate(e) => estimate(e),
                _ => false,
            }
        }
        match self {
            Error::Nuisance(e) => glm(&e.source),
            Error::Glm(e) => glm(e),
            Error::Estimate(e) => estimate(e),
            Error::Inference(e) => inference(e),
            Error::Sensitivity(SensitivityError::Cell { source, .. } | SensitivityError::Bootstrap(source)) => {
                inference(source)
            }
            Error::Positivity(PositivityError::Glm(e)) => glm(e),
            _ => false,
        }
    }
}
