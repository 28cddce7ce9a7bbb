//! Parametric working models: logistic regression for participation and
//! treatment probabilities, linear regression for arm-specific outcome means.

mod linear;
mod logistic;
mod nuisance;

pub use linear::fit_linear;
pub use logistic::fit_logistic;
pub use nuisance::{fit_nuisance, ModelRole, ModelSpec, NuisanceError, NuisanceModels, ProbabilityModel, TreatmentSpec};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use logistic::fit_logistic_terms;
pub(crate) use linear::fit_linear_terms;

pub const MAX_IRLS_ITERATIONS: usize = 100;
pub const DEVIANCE_TOLERANCE: f64 = 1e-10;
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("IRLS did not converge after {iterations} iterations (last relative deviance change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },
    #[error("perfect separation detected along `{direction}`")]
    Separation { direction: String },
    #[error("rank-deficient design; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("fewer rows ({rows}) than columns ({columns})")]
    TooFewRows { rows: usize, columns: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Logistic,
    Linear,
}

/// One column of a model design, expressed over the raw covariate vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Main(usize),
    Interaction(usize, usize),
}

/// Model design over covariate vectors of a fixed length. The intercept is implicit
/// and always comes first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSet {
    pub n_inputs: usize,
    pub terms: Vec<Term>,
    /// Column names, intercept included.
    pub names: Vec<String>,
}

impl TermSet {
    pub fn intercept_only(n_inputs: usize) -> Self {
        TermSet {
            n_inputs,
            terms: Vec::new(),
            names: vec!["(intercept)".into()],
        }
    }

    pub fn main_effects(n_inputs: usize) -> Self {
        let mut names = vec!["(intercept)".to_string()];
        names.extend((1..=n_inputs).map(|j| format!("x{j}")));
        TermSet {
            n_inputs,
            terms: (0..n_inputs).map(Term::Main).collect(),
            names,
        }
    }

    /// Number of coefficients.
    pub fn width(&self) -> usize {
        1 + self.terms.len()
    }

    pub fn expand_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        for term in &self.terms {
            out.push(match *term {
                Term::Main(j) => x[j],
                Term::Interaction(j, k) => x[j] * x[k],
            });
        }
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        self.expand_into(x, &mut out);
        out
    }

    pub(crate) fn design_matrix<'a>(&self, xs: impl ExactSizeIterator<Item = &'a [f64]>) -> DMatrix<f64> {
        let n = xs.len();
        let mut m = DMatrix::zeros(n, self.width());
        let mut buf = Vec::with_capacity(self.width());
        for (i, x) in xs.enumerate() {
            self.expand_into(x, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

/// Covariates and interactions for one model role, by name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSpec {
    /// `None` uses every covariate as a main effect; an empty list is intercept-only.
    pub covariates: Option<Vec<String>>,
    pub interactions: Vec<[String; 2]>,
}

impl DesignSpec {
    pub fn all() -> Self {
        DesignSpec::default()
    }

    pub fn intercept_only() -> Self {
        DesignSpec {
            covariates: Some(Vec::new()),
            interactions: Vec::new(),
        }
    }

    pub fn covariates<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        DesignSpec {
            covariates: Some(names.into_iter().map(Into::into).collect()),
            interactions: Vec::new(),
        }
    }

    pub fn resolve(&self, covariate_names: &[String]) -> Result<TermSet, GlmError> {
        let index = |name: &str| {
            covariate_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| GlmError::UnknownCovariate(name.to_string()))
        };
        let mut terms = Vec::new();
        let mut names = vec!["(intercept)".to_string()];
        match &self.covariates {
            None => {
                for (j, name) in covariate_names.iter().enumerate() {
                    terms.push(Term::Main(j));
                    names.push(name.clone());
                }
            }
            Some(list) => {
                for name in list {
                    terms.push(Term::Main(index(name)?));
                    names.push(name.clone());
                }
            }
        }
        for [a, b] in &self.interactions {
            terms.push(Term::Interaction(index(a)?, index(b)?));
            names.push(format!("{a}:{b}"));
        }
        Ok(TermSet {
            n_inputs: covariate_names.len(),
            terms,
            names,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    /// Relative deviance change at the last iteration (0 for closed-form fits).
    pub final_change: f64,
    pub ridge_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGlm {
    pub family: Family,
    /// Intercept first, then one coefficient per term.
    pub coefficients: Vec<f64>,
    pub design: TermSet,
    pub convergence: Convergence,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl FittedGlm {
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64, GlmError> {
        if x.len() != self.design.n_inputs {
            return Err(GlmError::DimensionMismatch {
                expected: self.design.n_inputs,
                found: x.len(),
            });
        }
        Ok(dot(&self.design.expand(x), &self.coefficients))
    }

    /// Inverse-logit of the linear predictor for logistic fits; the linear predictor otherwise.
    pub fn predict(&self, x: &[f64]) -> Result<f64, GlmError> {
        let eta = self.linear_predictor(x)?;
        Ok(match self.family {
            Family::Logistic => inv_logit(eta),
            Family::Linear => eta,
        })
    }
}

pub(crate) fn check_inputs(rows: usize, columns: usize, y: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>, GlmError> {
    if y.len() != rows {
        return Err(GlmError::DimensionMismatch {
            expected: rows,
            found: y.len(),
        });
    }
    if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
        return Err(GlmError::InvalidResponse(format!("non-finite response at row {bad}")));
    }
    let w = match weights {
        Some(w) => {
            if w.len() != rows {
                return Err(GlmError::DimensionMismatch {
                    expected: rows,
                    found: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(GlmError::InvalidWeights("weights must be finite and non-negative".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; rows],
    };
    let effective = w.iter().filter(|v| **v > 0.0).count();
    if effective == 0 {
        return Err(GlmError::InvalidWeights("all weights are zero".into()));
    }
    if effective < columns {
        return Err(GlmError::TooFewRows { rows: effective, columns });
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_spec_resolution() {
        let names: Vec<String> = ["age", "sex", "bmi"].iter().map(|s| s.to_string()).collect();
        let spec = DesignSpec {
            covariates: Some(vec!["age".into(), "bmi".into()]),
            interactions: vec![["age".into(), "sex".into()]],
        };
        let terms = spec.resolve(&names).unwrap();
        assert_eq!(terms.terms, vec![Term::Main(0), Term::Main(2), Term::Interaction(0, 1)]);
        assert_eq!(terms.names, vec!["(intercept)", "age", "bmi", "age:sex"]);
        assert_eq!(terms.expand(&[2.0, 3.0, 5.0]), vec![1.0, 2.0, 5.0, 6.0]);

        assert_eq!(DesignSpec::all().resolve(&names).unwrap().width(), 4);
        assert_eq!(DesignSpec::intercept_only().resolve(&names).unwrap().width(), 1);
        assert_eq!(
            DesignSpec::covariates(["height"]).resolve(&names).unwrap_err(),
            GlmError::UnknownCovariate("height".into())
        );
    }

    #[test]
    fn predict_checks_dimension() {
        let glm = FittedGlm {
            family: Family::Linear,
            coefficients: vec![12.0],
            design: TermSet::intercept_only(2),
            convergence: Convergence {
                iterations: 0,
                final_change: 0.0,
                ridge_used: false,
            },
        };
        assert_eq!(glm.predict(&[0.3, 9.0]).unwrap(), 12.0);
        assert_eq!(
            glm.predict(&[1.0]).unwrap_err(),
            GlmError::DimensionMismatch { expected: 2, found: 1 }
        );
    }

    #[test]
    fn inv_logit_is_stable() {
        assert_eq!(inv_logit(0.0), 0.5);
        assert!((inv_logit(2f64.ln()) - 2.0 / 3.0).abs() < 1e-15);
        assert!(inv_logit(-800.0) >= 0.0);
        assert_eq!(inv_logit(800.0), 1.0);
    }
}
