//! Estimators of `E[Y^a]` in the whole target population, for trials nested in a cohort.
//! The bias correction averages `(1 − Sᵢ)·u(a, Xᵢ)` over all `n` rows.

use super::{truncate_weights, EstimateError, EstimatorOptions, EvalContext, Estimator, Target};
use crate::bias::BiasFunctionSpec;
use crate::data::{Arm, StudyDataset};
use crate::glm::NuisanceModels;

/// Inverse-probability weights `w̃_a = S·I(A=a) / (p̂(X)·ê_a(X))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IpWeights {
    pub arm: Arm,
    pub weights: Vec<f64>,
}

impl IpWeights {
    pub(crate) fn from_context(ctx: &EvalContext<'_>, arm: Arm) -> Result<Self, EstimateError> {
        let mut weights = vec![0.0; ctx.ds.n()];
        for (i, row) in ctx.ds.rows.iter().enumerate() {
            if !row.in_arm(arm) {
                continue;
            }
            let p = ctx.preds.participation[i];
            let e = ctx.preds.treatment_probability(arm, i);
            if !(p > 0.0) || !(e > 0.0) {
                return Err(EstimateError::Positivity {
                    row: i,
                    arm,
                    detail: format!("participation probability {p}, treatment probability {e}"),
                });
            }
            let w = 1.0 / (p * e);
            if !w.is_finite() {
                return Err(EstimateError::Positivity {
                    row: i,
                    arm,
                    detail: format!("non-finite weight {w}"),
                });
            }
            weights[i] = w;
        }
        Ok(IpWeights { arm, weights })
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn compute_ip_weights(ds: &StudyDataset, nm: &NuisanceModels, arm: Arm) -> Result<IpWeights, EstimateError> {
    IpWeights::from_context(&EvalContext::new(ds, nm)?, arm)
}

fn weights(ctx: &EvalContext<'_>, arm: Arm, options: &EstimatorOptions) -> Result<IpWeights, EstimateError> {
    let mut w = IpWeights::from_context(ctx, arm)?;
    truncate_weights(&mut w.weights, options.truncate_quantile)?;
    Ok(w)
}

fn n_rows(ctx: &EvalContext<'_>) -> Result<f64, EstimateError> {
    match ctx.ds.n() {
        0 => Err(EstimateError::EmptyDataset),
        n => Ok(n as f64),
    }
}

fn outcome(ctx: &EvalContext<'_>, i: usize) -> f64 {
    ctx.ds.rows[i].outcome().unwrap_or(0.0)
}

/// `Σ(1 − Sᵢ)·u(a, Xᵢ)` over all rows.
fn bias_sum(ctx: &EvalContext<'_>, arm: Arm, bias: &BiasFunctionSpec) -> Result<f64, EstimateError> {
    let u = ctx.bias_values(bias, arm)?;
    Ok(ctx.ds.rows.iter().zip(&u).filter(|(r, _)| !r.s()).map(|(_, u)| u).sum())
}

fn normalizer(w: &IpWeights) -> Result<f64, EstimateError> {
    let total = w.sum();
    if total <= 0.0 {
        return Err(EstimateError::ZeroWeightSum { arm: w.arm });
    }
    Ok(total)
}

pub(crate) fn om(ctx: &EvalContext<'_>, arm: Arm, bias: &BiasFunctionSpec) -> Result<f64, EstimateError> {
    let n = n_rows(ctx)?;
    let g: f64 = ctx.preds.outcome[arm.index()].iter().sum();
    Ok((g - bias_sum(ctx, arm, bias)?) / n)
}

pub(crate) fn ipw(
    ctx: &EvalContext<'_>,
    arm: Arm,
    normalized: bool,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<f64, EstimateError> {
    let n = n_rows(ctx)?;
    let w = weights(ctx, arm, options)?;
    let weighted: f64 = w.weights.iter().enumerate().map(|(i, w)| w * outcome(ctx, i)).sum();
    let correction = bias_sum(ctx, arm, bias)?;
    if normalized {
        Ok(weighted / normalizer(&w)? - correction / n)
    } else {
        Ok((weighted - correction) / n)
    }
}

pub(crate) fn aipw(
    ctx: &EvalContext<'_>,
    arm: Arm,
    normalized: bool,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<f64, EstimateError> {
    let n = n_rows(ctx)?;
    let w = weights(ctx, arm, options)?;
    let g = &ctx.preds.outcome[arm.index()];
    let augmentation: f64 = w
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| w * (outcome(ctx, i) - g[i]))
        .sum();
    let model_sum: f64 = g.iter().sum();
    let corrected_model = model_sum - bias_sum(ctx, arm, bias)?;
    if normalized {
        Ok(augmentation / normalizer(&w)? + corrected_model / n)
    } else {
        Ok((augmentation + corrected_model) / n)
    }
}

/// Weighted mean of `Ỹ* = Y − u(A, X)·(1 − p̂(X))` among arm-`a` participants.
pub(crate) fn bc_outcome(
    ctx: &EvalContext<'_>,
    arm: Arm,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<f64, EstimateError> {
    let w = weights(ctx, arm, options)?;
    let total = normalizer(&w)?;
    let u = ctx.bias_values(bias, arm)?;
    let weighted: f64 = w
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| w * (outcome(ctx, i) - u[i] * (1.0 - ctx.preds.participation[i])))
        .sum();
    Ok(weighted / total)
}

pub fn estimate_pop_om(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    arm: Arm,
    bias: &BiasFunctionSpec,
) -> Result<f64, EstimateError> {
    om(&EvalContext::new(ds, nm)?, arm, bias)
}

pub fn estimate_pop_ipw(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    arm: Arm,
    normalized: bool,
    bias: &BiasFunctionSpec,
) -> Result<f64, EstimateError> {
    ipw(&EvalContext::new(ds, nm)?, arm, normalized, bias, &EstimatorOptions::default())
}

pub fn estimate_pop_aipw(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    arm: Arm,
    normalized: bool,
    bias: &BiasFunctionSpec,
) -> Result<f64, EstimateError> {
    aipw(&EvalContext::new(ds, nm)?, arm, normalized, bias, &EstimatorOptions::default())
}

pub fn estimate_pop_bc_outcome(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    arm: Arm,
    bias: &BiasFunctionSpec,
) -> Result<f64, EstimateError> {
    bc_outcome(&EvalContext::new(ds, nm)?, arm, bias, &EstimatorOptions::default())
}

/// `μ̃(1) − μ̃(0)` in the whole population.
pub fn estimate_pop_ate(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    estimator: Estimator,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<f64, EstimateError> {
    if estimator.target() != Target::WholePopulation {
        return Err(EstimateError::WrongTarget {
            estimator,
            expected: Target::WholePopulation,
        });
    }
    let ctx = EvalContext::new(ds, nm)?;
    Ok(super::estimate_triple(&ctx, estimator, bias, options)?[2])
}
