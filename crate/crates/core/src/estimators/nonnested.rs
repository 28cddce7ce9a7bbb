//! Estimators of `E[Y^a | S = 0]` for trial data combined with a separate sample of
//! non-participants.

use super::{truncate_weights, EstimateError, EstimatorOptions, EvalContext, Estimator, Target};
use crate::bias::BiasFunctionSpec;
use crate::data::{Arm, StudyDataset};
use crate::glm::NuisanceModels;

/// Inverse-odds-of-participation weights
/// `ŵ_a = S·I(A=a)·(1 − p̂(X)) / (p̂(X)·ê_a(X))`, zero on non-contributing rows.
#[derive(Debug, Clone, PartialEq)]
pub struct IoWeights {
    pub arm: Arm,
    pub weights: Vec<f64>,
}

impl IoWeights {
    pub(crate) fn from_context(ctx: &EvalContext<'_>, arm: Arm) -> Result<Self, EstimateError> {
        let mut weights = vec![0.0; ctx.ds.n()];
        for (i, row) in ctx.ds.rows.iter().enumerate() {
            if !row.in_arm(arm) {
                continue;
            }
            let p = ctx.preds.participation[i];
            let e = ctx.preds.treatment_probability(arm, i);
            if !(p > 0.0 && p < 1.0) {
                return Err(EstimateError::Positivity {
                    row: i,
                    arm,
                    detail: format!("participation probability {p}"),
                });
            }
            if !(e > 0.0) {
                return Err(EstimateError::Positivity {
                    row: i,
                    arm,
                    detail: format!("treatment probability {e}"),
                });
            }
            let w = (1.0 - p) / (p * e);
            if !w.is_finite() {
                return Err(EstimateError::Positivity {
                    row: i,
                    arm,
                    detail: format!("non-finite weight {w}"),
                });
            }
            weights[i] = w;
        }
        Ok(IoWeights { arm, weights })
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn compute_io_weights(ds: &StudyDataset, nm: &NuisanceModels, arm: Arm) -> Result<IoWeights, EstimateError> {
    IoWeights::from_context(&EvalContext::new(ds, nm)?, arm)
}

fn weights(ctx: &EvalContext<'_>, arm: Arm, options: &EstimatorOptions) -> Result<IoWeights, EstimateError> {
    let mut w = IoWeights::from_context(ctx, arm)?;
    truncate_weights(&mut w.weights, options.truncate_quantile)?;
    Ok(w)
}

fn n_target(ctx: &EvalContext<'_>) -> Result<f64, EstimateError> {
    match ctx.ds.n_target() {
        0 => Err(EstimateError::NoTargetSample),
        n0 => Ok(n0 as f64),
    }
}

/// `Σ(1 − Sᵢ)·u(a, Xᵢ)`.
fn target_bias_sum(ctx: &EvalContext<'_>, arm: Arm, bias: &BiasFunctionSpec) -> Result<f64, EstimateError> {
    let u = ctx.bias_values(bias, arm)?;
    Ok(ctx.ds.rows.iter().zip(&u).filter(|(r, _)| !r.s()).map(|(_, u)| u).sum())
}

fn outcome(ctx: &EvalContext<'_>, i: usize) -> f64 {
    ctx.ds.rows[i].outcome().unwrap_or(0.0)
}

pub(crate) fn om(ctx: &EvalContext<'_>, arm: Arm, bias: &BiasFunctionSpec) -> Result<f64, EstimateError> {
    let n0 = n_target(ctx)?;
    let u = ctx.bias_values(bias, arm)?;
    let g = &ctx.preds.outcome[arm.index()];
    let total: f64 = ctx
        .ds
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.s())
        .map(|(i, _)| g[i] - u[i])
        .sum();
    Ok(total / n0)
}

pub(crate) fn iow(
    ctx: &EvalContext<'_>,
    arm: Arm,
    normalized: bool,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<f64, EstimateError> {
    let n0 = n_target(ctx)?;
    let w = weights(ctx, arm, options)?;
    let weighted_outcome: f64 = w.weights.iter().enumerate().map(|(i, w)| w * outcome(ctx, i)).sum();
    let bias_sum = target_bias_sum(ctx, arm, bias)?;
    if normalized {
        let total = w.sum();
        if total <= 0.0 {
            return Err(EstimateError::ZeroWeightSum { arm });
        }
        Ok(weighted_outcome / total - bias_sum / n0)
    } else {
        Ok((weighted_outcome - bias_sum) / n0)
    }
}

pub(crate) fn aiow(
    ctx: &EvalContext<'_>,
    arm: Arm,
    normalized: bool,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<f64, EstimateError> {
    let n0 = n_target(ctx)?;
    let w = weights(ctx, arm, options)?;
    let g = &ctx.preds.outcome[arm.index()];
    let u = ctx.bias_values(bias, arm)?;
    let augmentation: f64 = w
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| w * (outcome(ctx, i) - g[i]))
        .sum();
    let corrected_model: f64 = ctx
        .ds
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.s())
        .map(|(i, _)| g[i] - u[i])
        .sum();
    if normalized {
        let total = w.sum();
        if total <= 0.0 {
            return Err(EstimateError::ZeroWeightSum { arm });
        }
        Ok(augmentation / total + corrected_model / n0)
    } else {
        Ok((augmentation + corrected_model) / n0)
    }
}

/// Weighted mean of the bias-corrected outcomes `Y* = Y − u(A, X)` among arm-`a`
/// participants; the arm-`a` fitted value of a weighted regression of `Y*` on treatment.
pub(crate) fn bc_outcome(
    ctx: &EvalContext<'_>,
    arm: Arm,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<f64, EstimateError> {
    let w = weights(ctx, arm, options)?;
    let total = w.sum();
    if total <= 0.0 {
        return Err(EstimateError::ZeroWeightSum { arm });
    }
    let u = ctx.bias_values(bias, arm)?;
    let weighted: f64 = w
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| w * (outcome(ctx, i) - u[i]))
        .sum();
    Ok(weighted / total)
}

pub fn estimate_om(ds: &StudyDataset, nm: &NuisanceModels, arm: Arm, bias: &BiasFunctionSpec) -> Result<f64, EstimateError> {
    om(&EvalContext::new(ds, nm)?, arm, bias)
}

pub fn estimate_iow(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    arm: Arm,
    normalized: bool,
    bias: &BiasFunctionSpec,
) -> Result<f64, EstimateError> {
    iow(&EvalContext::new(ds, nm)?, arm, normalized, bias, &EstimatorOptions::default())
}

pub fn estimate_aiow(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    arm: Arm,
    normalized: bool,
    bias: &BiasFunctionSpec,
) -> Result<f64, EstimateError> {
    aiow(&EvalContext::new(ds, nm)?, arm, normalized, bias, &EstimatorOptions::default())
}

pub fn estimate_bc_outcome_iow(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    arm: Arm,
    bias: &BiasFunctionSpec,
) -> Result<f64, EstimateError> {
    bc_outcome(&EvalContext::new(ds, nm)?, arm, bias, &EstimatorOptions::default())
}

/// `μ̂(1) − μ̂(0)` among non-participants.
pub fn estimate_ate(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    estimator: Estimator,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<f64, EstimateError> {
    if estimator.target() != Target::NonRandomized {
        return Err(EstimateError::WrongTarget {
            estimator,
            expected: Target::NonRandomized,
        });
    }
    let ctx = EvalContext::new(ds, nm)?;
    Ok(super::estimate_triple(&ctx, estimator, bias, options)?[2])
}
