use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{fit_linear_terms, fit_logistic_terms, DesignSpec, FittedGlm, GlmError, TermSet};
use crate::data::{Arm, Row, StudyDataset};

/// A probability that is either modeled or known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityModel {
    Fitted(FittedGlm),
    Fixed(f64),
}

impl ProbabilityModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64, GlmError> {
        match self {
            ProbabilityModel::Fitted(glm) => glm.predict(x),
            ProbabilityModel::Fixed(p) => Ok(*p),
        }
    }

    pub fn fitted(&self) -> Option<&FittedGlm> {
        match self {
            ProbabilityModel::Fitted(glm) => Some(glm),
            ProbabilityModel::Fixed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentSpec {
    /// Logistic model for `Pr[A = 1 | X, S = 1]`.
    Estimated(DesignSpec),
    /// Known randomization probability `Pr[A = 1]`.
    Known(f64),
}

impl Default for TreatmentSpec {
    fn default() -> Self {
        TreatmentSpec::Estimated(DesignSpec::all())
    }
}

/// Designs for the three working-model roles. Defaults to main effects of every covariate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub participation: DesignSpec,
    pub treatment: TreatmentSpec,
    /// Shared by both arms; each arm gets its own fit.
    pub outcome: DesignSpec,
}

impl ModelSpec {
    pub fn intercept_only() -> Self {
        ModelSpec {
            participation: DesignSpec::intercept_only(),
            treatment: TreatmentSpec::Estimated(DesignSpec::intercept_only()),
            outcome: DesignSpec::intercept_only(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Participation,
    Treatment,
    Outcome(Arm),
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelRole::Participation => write!(f, "participation model"),
            ModelRole::Treatment => write!(f, "treatment model"),
            ModelRole::Outcome(arm) => write!(f, "outcome model ({arm})"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{role}: {source}")]
pub struct NuisanceError {
    pub role: ModelRole,
    #[source]
    pub source: GlmError,
}

/// Fitted participation `p̂(X)`, treatment `ê_a(X)` and outcome `ĝ_a(X)` models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceModels {
    pub participation: ProbabilityModel,
    /// Models `Pr[A = 1 | X, S = 1]`.
    pub treatment: ProbabilityModel,
    /// Indexed by arm indicator: `[control, treated]`.
    pub outcome: [FittedGlm; 2],
}

impl NuisanceModels {
    pub fn participation_probability(&self, x: &[f64]) -> Result<f64, GlmError> {
        self.participation.predict(x)
    }

    pub fn treatment_probability(&self, arm: Arm, x: &[f64]) -> Result<f64, GlmError> {
        let p1 = self.treatment.predict(x)?;
        Ok(match arm {
            Arm::Treated => p1,
            Arm::Control => 1.0 - p1,
        })
    }

    pub fn outcome_model(&self, arm: Arm) -> &FittedGlm {
        &self.outcome[arm.index()]
    }

    pub fn outcome_mean(&self, arm: Arm, x: &[f64]) -> Result<f64, GlmError> {
        self.outcome_model(arm).predict(x)
    }
}

fn fit_role(
    role: ModelRole,
    design: TermSet,
    rows: &[&Row],
    y: &[f64],
    logistic: bool,
) -> Result<FittedGlm, NuisanceError> {
    let x = design.design_matrix(rows.iter().map(|r| r.x.as_slice()));
    let fit = if logistic {
        fit_logistic_terms(design, &x, y, None)
    } else {
        fit_linear_terms(design, &x, y, None)
    };
    fit.map_err(|source| NuisanceError { role, source })
}

/// Fits participation on all rows, treatment on trial rows, and outcome per arm.
pub fn fit_nuisance(ds: &StudyDataset, spec: &ModelSpec) -> Result<NuisanceModels, NuisanceError> {
    let names = &ds.covariate_names;
    let resolve = |role, d: &DesignSpec| d.resolve(names).map_err(|source| NuisanceError { role, source });

    let participation = if ds.n_target() == 0 {
        log::info!("no non-participants; participation probability fixed at 1");
        ProbabilityModel::Fixed(1.0)
    } else {
        let design = resolve(ModelRole::Participation, &spec.participation)?;
        let rows: Vec<&Row> = ds.rows.iter().collect();
        let s: Vec<f64> = rows.iter().map(|r| if r.s() { 1.0 } else { 0.0 }).collect();
        ProbabilityModel::Fitted(fit_role(ModelRole::Participation, design, &rows, &s, true)?)
    };

    let trial: Vec<&Row> = ds.rows.iter().filter(|r| r.s()).collect();
    let treatment = match &spec.treatment {
        TreatmentSpec::Known(p) => {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(NuisanceError {
                    role: ModelRole::Treatment,
                    source: GlmError::InvalidResponse(format!("known treatment probability {p} outside (0, 1)")),
                });
            }
            ProbabilityModel::Fixed(*p)
        }
        TreatmentSpec::Estimated(d) => {
            let design = resolve(ModelRole::Treatment, d)?;
            let a: Vec<f64> = trial.iter().map(|r| if r.in_arm(Arm::Treated) { 1.0 } else { 0.0 }).collect();
            ProbabilityModel::Fitted(fit_role(ModelRole::Treatment, design, &trial, &a, true)?)
        }
    };

    let fit_outcome = |arm: Arm| {
        let role = ModelRole::Outcome(arm);
        let design = resolve(role, &spec.outcome)?;
        let rows: Vec<&Row> = trial.iter().copied().filter(|r| r.in_arm(arm)).collect();
        let y: Vec<f64> = rows.iter().filter_map(|r| r.outcome()).collect();
        fit_role(role, design, &rows, &y, false)
    };
    let outcome = [fit_outcome(Arm::Control)?, fit_outcome(Arm::Treated)?];

    Ok(NuisanceModels {
        participation,
        treatment,
        outcome,
    })
}
