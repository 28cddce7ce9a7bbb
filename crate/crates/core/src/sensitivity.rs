//! Sensitivity analysis over a grid of bias functions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::BiasFunctionSpec;
use crate::data::{Design, StudyDataset};
use crate::estimators::{
    estimate_triple, BiasCell, EstimateError, EstimateRecord, Estimand, Estimator, EstimatorOptions, EvalContext,
    InferenceTag, Target,
};
use crate::glm::{fit_nuisance, ModelSpec, NuisanceModels};
use crate::inference::{
    bootstrap, transport_inference, BootstrapConfig, InferenceError, Interval, StackMode, DEFAULT_LEVEL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    None,
    #[default]
    Sandwich,
    /// Sandwich with nuisance parameters treated as known.
    NaiveSandwich,
    Bootstrap,
}

impl InferenceMethod {
    pub fn tag(self) -> InferenceTag {
        match self {
            InferenceMethod::None => InferenceTag::None,
            InferenceMethod::Sandwich => InferenceTag::Sandwich,
            InferenceMethod::NaiveSandwich => InferenceTag::NaiveSandwich,
            InferenceMethod::Bootstrap => InferenceTag::Bootstrap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub method: InferenceMethod,
    pub level: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Defaults to stratifying for non-nested designs.
    pub stratify_by_s: Option<bool>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            method: InferenceMethod::Sandwich,
            level: DEFAULT_LEVEL,
            replicates: 500,
            seed: 0,
            stratify_by_s: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("no estimators requested")]
    NoEstimators,
    #[error("empty bias grid")]
    EmptyGrid,
    #[error("estimators mix the {0:?} and {1:?} targets")]
    MixedTargets(Target, Target),
    #[error(transparent)]
    Design(EstimateError),
    #[error("cell (u0 = {u0}, delta = {delta}), {estimator}: {source}")]
    Cell {
        u0: f64,
        delta: f64,
        estimator: Estimator,
        #[source]
        source: InferenceError,
    },
    #[error("bootstrap: {0}")]
    Bootstrap(#[source] InferenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub u0: f64,
    pub delta: f64,
    pub modulation: String,
    /// Per estimator, in request order: MeanA1, MeanA0, ATE.
    pub records: Vec<EstimateRecord>,
}

impl GridCell {
    pub fn record(&self, estimator: Estimator, estimand: Estimand) -> Option<&EstimateRecord> {
        self.records
            .iter()
            .find(|r| r.estimator == estimator && r.estimand == estimand)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub n: usize,
    pub n_target: usize,
    pub n_trial: usize,
    pub model_spec: ModelSpec,
    pub nuisance: NuisanceModels,
    pub method: InferenceMethod,
    pub level: f64,
    pub seed: u64,
    pub replicates: Option<usize>,
    pub failed_replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGridResult {
    pub design: Design,
    pub target: Target,
    pub estimators: Vec<Estimator>,
    /// `u0` outer, `delta` inner.
    pub cells: Vec<GridCell>,
    pub metadata: GridMetadata,
}

fn records(
    estimator: Estimator,
    target: Target,
    bias: &BiasFunctionSpec,
    tag: InferenceTag,
    values: [Interval; 3],
    with_inference: bool,
) -> impl Iterator<Item = EstimateRecord> + '_ {
    Estimand::ALL.into_iter().zip(values).map(move |(estimand, v)| EstimateRecord {
        estimator,
        estimand,
        target,
        point: v.estimate,
        se: with_inference.then_some(v.se),
        ci: with_inference.then_some((v.lo, v.hi)),
        bias_cell: Some(BiasCell {
            u0: bias.u0,
            delta: bias.delta,
        }),
        method: tag,
    })
}

fn point_only(triple: [f64; 3]) -> [Interval; 3] {
    triple.map(|estimate| Interval {
        estimate,
        se: f64::NAN,
        lo: f64::NAN,
        hi: f64::NAN,
    })
}

/// Estimates for every (cell, estimator) pair, in canonical order.
pub fn run_grid(
    ds: &StudyDataset,
    model_spec: &ModelSpec,
    nm: &NuisanceModels,
    grid: &[BiasFunctionSpec],
    estimators: &[Estimator],
    inference: &InferenceConfig,
) -> Result<SensitivityGridResult, SensitivityError> {
    let (&first, rest) = estimators.split_first().ok_or(SensitivityError::NoEstimators)?;
    if grid.is_empty() {
        return Err(SensitivityError::EmptyGrid);
    }
    let target = first.target();
    if let Some(other) = rest.iter().find(|e| e.target() != target) {
        return Err(SensitivityError::MixedTargets(target, other.target()));
    }
    for e in estimators {
        e.check_design(ds.design).map_err(SensitivityError::Design)?;
    }
    let tag = inference.method.tag();
    let cell_error = |bias: &BiasFunctionSpec, estimator, source| SensitivityError::Cell {
        u0: bias.u0,
        delta: bias.delta,
        estimator,
        source,
    };
    let options = EstimatorOptions::default();
    let ctx = EvalContext::new(ds, nm).map_err(SensitivityError::Design)?;

    let mut cells: Vec<GridCell> = grid
        .par_iter()
        .map(|bias| {
            let mut out = Vec::with_capacity(estimators.len() * 3);
            for &estimator in estimators {
                let values = match inference.method {
                    InferenceMethod::Sandwich | InferenceMethod::NaiveSandwich => {
                        let mode = if inference.method == InferenceMethod::Sandwich {
                            StackMode::Full
                        } else {
                            StackMode::Naive
                        };
                        transport_inference(ds, nm, estimator, bias, mode, inference.level)
                            .map_err(|e| cell_error(bias, estimator, e))?
                    }
                    InferenceMethod::None | InferenceMethod::Bootstrap => point_only(
                        estimate_triple(&ctx, estimator, bias, &options)
                            .map_err(|e| cell_error(bias, estimator, e.into()))?,
                    ),
                };
                let with_inference = matches!(inference.method, InferenceMethod::Sandwich | InferenceMethod::NaiveSandwich);
                out.extend(records(estimator, target, bias, tag, values, with_inference));
            }
            Ok(GridCell {
                u0: bias.u0,
                delta: bias.delta,
                modulation: bias.modulation_id(),
                records: out,
            })
        })
        .collect::<Result<_, SensitivityError>>()?;

    let mut replicates = None;
    let mut failed = None;
    if inference.method == InferenceMethod::Bootstrap {
        let config = BootstrapConfig {
            replicates: inference.replicates,
            seed: inference.seed,
            stratify_by_s: inference.stratify_by_s.unwrap_or(ds.design == Design::NonNested),
            level: inference.level,
        };
        let statistic = |resampled: &StudyDataset| -> Result<Vec<f64>, String> {
            let refit = fit_nuisance(resampled, model_spec).map_err(|e| e.to_string())?;
            let ctx = EvalContext::new(resampled, &refit).map_err(|e| e.to_string())?;
            let mut values = Vec::with_capacity(grid.len() * estimators.len() * 3);
            for bias in grid {
                for &estimator in estimators {
                    let triple = estimate_triple(&ctx, estimator, bias, &options).map_err(|e| e.to_string())?;
                    values.extend(triple);
                }
            }
            Ok(values)
        };
        let boot = bootstrap(ds, &config, statistic).map_err(SensitivityError::Bootstrap)?;
        for (record, (se, ci)) in cells
            .iter_mut()
            .flat_map(|c| c.records.iter_mut())
            .zip(boot.se.iter().zip(&boot.ci))
        {
            record.se = Some(*se);
            record.ci = Some(*ci);
        }
        replicates = Some(inference.replicates);
        failed = Some(boot.failed);
    }

    Ok(SensitivityGridResult {
        design: ds.design,
        target,
        estimators: estimators.to_vec(),
        cells,
        metadata: GridMetadata {
            n: ds.n(),
            n_target: ds.n_target(),
            n_trial: ds.n_trial(),
            model_spec: model_spec.clone(),
            nuisance: nm.clone(),
            method: inference.method,
            level: inference.level,
            seed: inference.seed,
            replicates,
            failed_replicates: failed,
        },
    })
}

/// Where the ATE changes sign along one `u0` row of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub u0: f64,
    /// First `δ` at which the interpolated ATE point estimate reaches zero.
    pub delta_star: Option<f64>,
    /// Grid `δ` values whose ATE interval excludes zero.
    pub ci_excludes_zero: Vec<f64>,
}

/// First zero of the piecewise-linear interpolation through `(x, y)`, `x` ascending.
pub fn interpolate_zero(points: &[(f64, f64)]) -> Option<f64> {
    if let Some(&(x, _)) = points.iter().find(|(_, y)| *y == 0.0) {
        let first_sign_change = points.windows(2).find(|w| w[0].1 * w[1].1 < 0.0).map(|w| w[0].0);
        if first_sign_change.is_none_or(|xc| x <= xc) {
            return Some(x);
        }
    }
    points.windows(2).find(|w| w[0].1 * w[1].1 < 0.0).map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        x0 + (x1 - x0) * y0 / (y0 - y1)
    })
}

/// ATE sign changes per `u0` row, in order of first appearance.
pub fn find_crossing(result: &SensitivityGridResult, estimator: Estimator) -> Vec<Crossing> {
    let mut u0s: Vec<f64> = Vec::new();
    for c in &result.cells {
        if !u0s.contains(&c.u0) {
            u0s.push(c.u0);
        }
    }
    u0s.into_iter()
        .map(|u0| {
            let mut row: Vec<(f64, &EstimateRecord)> = result
                .cells
                .iter()
                .filter(|c| c.u0 == u0)
                .filter_map(|c| c.record(estimator, Estimand::Ate).map(|r| (c.delta, r)))
                .collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0));
            let points: Vec<(f64, f64)> = row.iter().map(|(d, r)| (*d, r.point)).collect();
            let delta_star = if points.len() >= 2 { interpolate_zero(&points) } else { None };
            let ci_excludes_zero = row
                .iter()
                .filter(|(_, r)| r.ci.is_some_and(|(lo, hi)| lo > 0.0 || hi < 0.0))
                .map(|(d, _)| *d)
                .collect();
            Crossing {
                u0,
                delta_star,
                ci_excludes_zero,
            }
        })
        .collect()
}
