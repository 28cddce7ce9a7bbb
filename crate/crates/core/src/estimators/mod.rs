//! Potential-outcome mean and treatment-effect estimators, with and without bias
//! correction.
//!
//! Non-nested estimators target `E[Y^a | S = 0]`; nested (whole-population) estimators
//! target `E[Y^a]`. Every estimator is computed arm by arm and differenced for the ATE.

mod nested;
mod nonnested;

pub use nested::{
    compute_ip_weights, estimate_pop_aipw, estimate_pop_ate, estimate_pop_bc_outcome, estimate_pop_ipw,
    estimate_pop_om, IpWeights,
};
pub use nonnested::{
    compute_io_weights, estimate_aiow, estimate_ate, estimate_bc_outcome_iow, estimate_iow, estimate_om, IoWeights,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{eval_u, BiasError, BiasFunctionSpec};
use crate::data::{Arm, Design, StudyDataset};
use crate::glm::{GlmError, NuisanceModels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "OM")]
    Om,
    #[serde(rename = "IOW1")]
    Iow1,
    #[serde(rename = "IOW2")]
    Iow2,
    #[serde(rename = "AIOW1")]
    Aiow1,
    #[serde(rename = "AIOW2")]
    Aiow2,
    #[serde(rename = "BC_OUTCOME_IOW")]
    BcOutcomeIow,
    #[serde(rename = "OM_pop")]
    OmPop,
    #[serde(rename = "IPW1")]
    Ipw1,
    #[serde(rename = "IPW2")]
    Ipw2,
    #[serde(rename = "AIPW1")]
    Aipw1,
    #[serde(rename = "AIPW2")]
    Aipw2,
    #[serde(rename = "BC_OUTCOME_IPW")]
    BcOutcomeIpw,
}

impl Estimator {
    pub const ALL: [Estimator; 12] = [
        Estimator::Om,
        Estimator::Iow1,
        Estimator::Iow2,
        Estimator::Aiow1,
        Estimator::Aiow2,
        Estimator::BcOutcomeIow,
        Estimator::OmPop,
        Estimator::Ipw1,
        Estimator::Ipw2,
        Estimator::Aipw1,
        Estimator::Aipw2,
        Estimator::BcOutcomeIpw,
    ];

    pub fn target(self) -> Target {
        match self {
            Estimator::Om
            | Estimator::Iow1
            | Estimator::Iow2
            | Estimator::Aiow1
            | Estimator::Aiow2
            | Estimator::BcOutcomeIow => Target::NonRandomized,
            _ => Target::WholePopulation,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Om => "OM",
            Estimator::Iow1 => "IOW1",
            Estimator::Iow2 => "IOW2",
            Estimator::Aiow1 => "AIOW1",
            Estimator::Aiow2 => "AIOW2",
            Estimator::BcOutcomeIow => "BC_OUTCOME_IOW",
            Estimator::OmPop => "OM_pop",
            Estimator::Ipw1 => "IPW1",
            Estimator::Ipw2 => "IPW2",
            Estimator::Aipw1 => "AIPW1",
            Estimator::Aipw2 => "AIPW2",
            Estimator::BcOutcomeIpw => "BC_OUTCOME_IPW",
        }
    }

    /// Whether the estimator uses participation/treatment weights.
    pub fn uses_weights(self) -> bool {
        !matches!(self, Estimator::Om | Estimator::OmPop)
    }

    /// The whole-population estimand is identified only under the nested design.
    pub fn check_design(self, design: Design) -> Result<(), EstimateError> {
        if self.target() == Target::WholePopulation && design != Design::Nested {
            return Err(EstimateError::DesignRestriction { estimator: self });
        }
        Ok(())
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = EstimateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EstimateError::UnknownEstimator(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimand {
    MeanA1,
    MeanA0,
    #[serde(rename = "ATE")]
    Ate,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::MeanA1, Estimand::MeanA0, Estimand::Ate];

    pub fn name(self) -> &'static str {
        match self {
            Estimand::MeanA1 => "MeanA1",
            Estimand::MeanA0 => "MeanA0",
            Estimand::Ate => "ATE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `E[Y^a | S = 0]`.
    NonRandomized,
    /// `E[Y^a]`.
    WholePopulation,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::NonRandomized => "non_randomized",
            Target::WholePopulation => "whole_population",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceTag {
    None,
    Sandwich,
    NaiveSandwich,
    Bootstrap,
}

impl InferenceTag {
    pub fn name(self) -> &'static str {
        match self {
            InferenceTag::None => "none",
            InferenceTag::Sandwich => "sandwich",
            InferenceTag::NaiveSandwich => "naive_sandwich",
            InferenceTag::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub u0: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub estimator: Estimator,
    pub estimand: Estimand,
    pub target: Target,
    pub point: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// `None` for analyses without a bias function.
    pub bias_cell: Option<BiasCell>,
    pub method: InferenceTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    /// Cap weights at this quantile of the positive weights. Off by default.
    pub truncate_quantile: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("positivity violation at row {row} ({arm}): {detail}")]
    Positivity { row: usize, arm: Arm, detail: String },
    #[error("no non-participants (n0 = 0); the S=0 estimand is undefined")]
    NoTargetSample,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("weights for {arm} sum to zero")]
    ZeroWeightSum { arm: Arm },
    #[error("{estimator} targets the whole population, which requires a nested design")]
    DesignRestriction { estimator: Estimator },
    #[error("{estimator} does not target the {expected:?} population")]
    WrongTarget { estimator: Estimator, expected: Target },
    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),
    #[error("invalid truncation quantile {0}")]
    InvalidTruncation(f64),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Bias(#[from] BiasError),
}

/// Per-row nuisance predictions `p̂(Xᵢ)`, `ê_1(Xᵢ)`, `ĝ_a(Xᵢ)` for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowPredictions {
    pub participation: Vec<f64>,
    pub treated_probability: Vec<f64>,
    /// Indexed by arm indicator.
    pub outcome: [Vec<f64>; 2],
}

impl RowPredictions {
    pub fn new(ds: &StudyDataset, nm: &NuisanceModels) -> Result<Self, GlmError> {
        let mut p = Vec::with_capacity(ds.n());
        let mut e = Vec::with_capacity(ds.n());
        let mut g0 = Vec::with_capacity(ds.n());
        let mut g1 = Vec::with_capacity(ds.n());
        for row in &ds.rows {
            p.push(nm.participation_probability(&row.x)?);
            e.push(nm.treatment_probability(Arm::Treated, &row.x)?);
            g0.push(nm.outcome_mean(Arm::Control, &row.x)?);
            g1.push(nm.outcome_mean(Arm::Treated, &row.x)?);
        }
        Ok(RowPredictions {
            participation: p,
            treated_probability: e,
            outcome: [g0, g1],
        })
    }

    pub fn treatment_probability(&self, arm: Arm, i: usize) -> f64 {
        match arm {
            Arm::Treated => self.treated_probability[i],
            Arm::Control => 1.0 - self.treated_probability[i],
        }
    }
}

/// A dataset together with its nuisance predictions; shared by every estimator.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub ds: &'a StudyDataset,
    pub preds: RowPredictions,
}

impl<'a> EvalContext<'a> {
    pub fn new(ds: &'a StudyDataset, nm: &NuisanceModels) -> Result<Self, EstimateError> {
        Ok(EvalContext {
            ds,
            preds: RowPredictions::new(ds, nm)?,
        })
    }

    /// `u(a, Xᵢ)` for every row.
    pub fn bias_values(&self, bias: &BiasFunctionSpec, arm: Arm) -> Result<Vec<f64>, EstimateError> {
        self.ds
            .rows
            .iter()
            .map(|r| eval_u(bias, arm, &r.x).map_err(EstimateError::from))
            .collect()
    }
}

pub(crate) fn truncate_weights(weights: &mut [f64], quantile: Option<f64>) -> Result<(), EstimateError> {
    let Some(q) = quantile else { return Ok(()) };
    if !(q > 0.0 && q <= 1.0) {
        return Err(EstimateError::InvalidTruncation(q));
    }
    let mut positive: Vec<f64> = weights.iter().copied().filter(|w| *w > 0.0).collect();
    if positive.is_empty() {
        return Ok(());
    }
    positive.sort_by(f64::total_cmp);
    let cap = crate::inference::quantile_sorted(&positive, q);
    for w in weights.iter_mut() {
        *w = w.min(cap);
    }
    Ok(())
}

/// Point estimate of the arm-`a` mean for any estimator.
pub fn estimate_mean(
    ctx: &EvalContext<'_>,
    estimator: Estimator,
    arm: Arm,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<f64, EstimateError> {
    use Estimator::*;
    match estimator {
        Om => nonnested::om(ctx, arm, bias),
        Iow1 => nonnested::iow(ctx, arm, false, bias, options),
        Iow2 => nonnested::iow(ctx, arm, true, bias, options),
        Aiow1 => nonnested::aiow(ctx, arm, false, bias, options),
        Aiow2 => nonnested::aiow(ctx, arm, true, bias, options),
        BcOutcomeIow => nonnested::bc_outcome(ctx, arm, bias, options),
        OmPop => nested::om(ctx, arm, bias),
        Ipw1 => nested::ipw(ctx, arm, false, bias, options),
        Ipw2 => nested::ipw(ctx, arm, true, bias, options),
        Aipw1 => nested::aipw(ctx, arm, false, bias, options),
        Aipw2 => nested::aipw(ctx, arm, true, bias, options),
        BcOutcomeIpw => nested::bc_outcome(ctx, arm, bias, options),
    }
}

/// Arm means and their difference, `[μ̂(1), μ̂(0), μ̂(1) − μ̂(0)]`.
pub fn estimate_triple(
    ctx: &EvalContext<'_>,
    estimator: Estimator,
    bias: &BiasFunctionSpec,
    options: &EstimatorOptions,
) -> Result<[f64; 3], EstimateError> {
    let m1 = estimate_mean(ctx, estimator, Arm::Treated, bias, options)?;
    let m0 = estimate_mean(ctx, estimator, Arm::Control, bias, options)?;
    Ok([m1, m0, m1 - m0])
}
