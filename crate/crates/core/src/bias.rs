//! Bias functions `u(a, X) = E[Y^a | X, S=1] − E[Y^a | X, S=0]`.
//!
//! A spec is parameterized by `u(0, ·)` and `δ(·) = u(1, ·) − u(0, ·)`, both scaled by a
//! shared covariate-dependent multiplier `m(x)` (identically 1 when absent). Values are
//! in outcome units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Arm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiasError {
    #[error("modulation covariate `{covariate}` (index {index}) missing from covariate vector of length {len}")]
    MissingCovariate { covariate: String, index: usize, len: usize },
    #[error("unknown modulation covariate `{0}`")]
    UnknownCovariate(String),
    #[error("value {value} of `{covariate}` matches no modulation level")]
    UnmatchedLevel { covariate: String, value: f64 },
    #[error("invalid modulation rule: {0}")]
    InvalidRule(String),
    #[error("sensitivity grid needs at least one u0 and one delta value")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelMultiplier {
    pub value: f64,
    pub multiplier: f64,
}

/// Piecewise-constant multiplier over a single covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationRule {
    /// Exact covariate levels (e.g. a 0/1 indicator).
    Levels(Vec<LevelMultiplier>),
    /// `multipliers[k]` applies on `[cutpoints[k-1], cutpoints[k])`, open-ended at both extremes.
    Piecewise { cutpoints: Vec<f64>, multipliers: Vec<f64> },
}

impl ModulationRule {
    fn validate(&self) -> Result<(), BiasError> {
        match self {
            ModulationRule::Levels(levels) => {
                if levels.is_empty() {
                    return Err(BiasError::InvalidRule("no levels".into()));
                }
                if levels.iter().any(|l| !l.value.is_finite() || !l.multiplier.is_finite()) {
                    return Err(BiasError::InvalidRule("non-finite level or multiplier".into()));
                }
            }
            ModulationRule::Piecewise { cutpoints, multipliers } => {
                if multipliers.len() != cutpoints.len() + 1 {
                    return Err(BiasError::InvalidRule(format!(
                        "{} cutpoints need {} multipliers, got {}",
                        cutpoints.len(),
                        cutpoints.len() + 1,
                        multipliers.len()
                    )));
                }
                if cutpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(BiasError::InvalidRule("cutpoints must be strictly increasing".into()));
                }
                if multipliers.iter().chain(cutpoints).any(|v| !v.is_finite()) {
                    return Err(BiasError::InvalidRule("non-finite cutpoint or multiplier".into()));
                }
            }
        }
        Ok(())
    }
}

/// A modulation rule as written in configuration, by covariate name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationConfig {
    pub covariate: String,
    pub rule: ModulationRule,
}

impl ModulationConfig {
    pub fn resolve(&self, covariate_names: &[String]) -> Result<Modulation, BiasError> {
        Modulation::new(&self.covariate, covariate_names, self.rule.clone())
    }
}

/// A modulation rule bound to a covariate position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub covariate: String,
    pub index: usize,
    pub rule: ModulationRule,
}

impl Modulation {
    pub fn new(covariate: &str, covariate_names: &[String], rule: ModulationRule) -> Result<Self, BiasError> {
        let index = covariate_names
            .iter()
            .position(|c| c == covariate)
            .ok_or_else(|| BiasError::UnknownCovariate(covariate.to_string()))?;
        rule.validate()?;
        Ok(Modulation {
            covariate: covariate.to_string(),
            index,
            rule,
        })
    }

    pub fn multiplier(&self, x: &[f64]) -> Result<f64, BiasError> {
        let value = *x.get(self.index).ok_or_else(|| BiasError::MissingCovariate {
            covariate: self.covariate.clone(),
            index: self.index,
            len: x.len(),
        })?;
        match &self.rule {
            ModulationRule::Levels(levels) => levels
                .iter()
                .find(|l| l.value == value)
                .map(|l| l.multiplier)
                .ok_or_else(|| BiasError::UnmatchedLevel {
                    covariate: self.covariate.clone(),
                    value,
                }),
            ModulationRule::Piecewise { cutpoints, multipliers } => {
                let k = cutpoints.iter().take_while(|c| **c <= value).count();
                Ok(multipliers[k])
            }
        }
    }

    /// Short label identifying the rule in reports.
    pub fn id(&self) -> String {
        match &self.rule {
            ModulationRule::Levels(levels) => {
                let parts: Vec<String> = levels.iter().map(|l| format!("{}:{}", l.value, l.multiplier)).collect();
                format!("{}[{}]", self.covariate, parts.join(","))
            }
            ModulationRule::Piecewise { cutpoints, multipliers } => {
                format!("{}[cuts={:?};mult={:?}]", self.covariate, cutpoints, multipliers)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFunctionSpec {
    pub u0: f64,
    pub delta: f64,
    pub modulation: Option<Modulation>,
}

impl BiasFunctionSpec {
    pub fn zero() -> Self {
        Self::constant(0.0, 0.0)
    }

    pub fn constant(u0: f64, delta: f64) -> Self {
        BiasFunctionSpec {
            u0,
            delta,
            modulation: None,
        }
    }

    pub fn modulated(u0: f64, delta: f64, modulation: Modulation) -> Self {
        BiasFunctionSpec {
            u0,
            delta,
            modulation: Some(modulation),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.u0 == 0.0 && self.delta == 0.0
    }

    pub fn is_constant(&self) -> bool {
        self.modulation.is_none()
    }

    pub fn modulation_id(&self) -> String {
        self.modulation.as_ref().map_or_else(|| "none".to_string(), Modulation::id)
    }

    fn multiplier(&self, x: &[f64]) -> Result<f64, BiasError> {
        self.modulation.as_ref().map_or(Ok(1.0), |m| m.multiplier(x))
    }
}

/// `u(a, x)`: `m(x)·u0` for `a = 0`, `m(x)·(u0 + δ)` for `a = 1`.
pub fn eval_u(spec: &BiasFunctionSpec, arm: Arm, x: &[f64]) -> Result<f64, BiasError> {
    let m = spec.multiplier(x)?;
    Ok(match arm {
        Arm::Control => m * spec.u0,
        Arm::Treated => m * (spec.u0 + spec.delta),
    })
}

/// `δ(x) = u(1, x) − u(0, x)`.
pub fn eval_delta(spec: &BiasFunctionSpec, x: &[f64]) -> Result<f64, BiasError> {
    Ok(eval_u(spec, Arm::Treated, x)? - eval_u(spec, Arm::Control, x)?)
}

/// Cartesian product of `u0` and `delta` values, `u0` varying slowest.
pub fn make_grid(
    u0_values: &[f64],
    delta_values: &[f64],
    modulation: Option<&Modulation>,
) -> Result<Vec<BiasFunctionSpec>, BiasError> {
    if u0_values.is_empty() || delta_values.is_empty() {
        return Err(BiasError::EmptyGrid);
    }
    Ok(u0_values
        .iter()
        .flat_map(|&u0| {
            delta_values.iter().map(move |&delta| BiasFunctionSpec {
                u0,
                delta,
                modulation: modulation.cloned(),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sex_modulation() -> Modulation {
        let names = vec!["male".to_string(), "age".to_string()];
        Modulation::new(
            "male",
            &names,
            ModulationRule::Levels(vec![
                LevelMultiplier {
                    value: 1.0,
                    multiplier: 1.0,
                },
                LevelMultiplier {
                    value: 0.0,
                    multiplier: 0.8,
                },
            ]),
        )
        .unwrap()
    }

    #[test]
    fn u1_is_u0_plus_delta() {
        let spec = BiasFunctionSpec::constant(-40.0, 60.0);
        assert_eq!(eval_u(&spec, Arm::Treated, &[]).unwrap(), 20.0);
        assert_eq!(eval_u(&spec, Arm::Control, &[]).unwrap(), -40.0);
        assert_eq!(eval_delta(&spec, &[3.0]).unwrap(), 60.0);
    }

    #[test]
    fn female_violation_is_twenty_percent_smaller() {
        let spec = BiasFunctionSpec::modulated(-40.0, 0.0, sex_modulation());
        assert_eq!(eval_u(&spec, Arm::Control, &[0.0, 50.0]).unwrap(), -32.0);
        assert_eq!(eval_u(&spec, Arm::Control, &[1.0, 50.0]).unwrap(), -40.0);

        let spec = BiasFunctionSpec::modulated(-40.0, 20.0, sex_modulation());
        assert_eq!(eval_delta(&spec, &[0.0, 50.0]).unwrap(), 16.0);
        assert_eq!(eval_delta(&spec, &[1.0, 50.0]).unwrap(), 20.0);
    }

    #[test]
    fn zero_spec_is_zero() {
        let spec = BiasFunctionSpec::zero();
        for arm in Arm::BOTH {
            assert_eq!(eval_u(&spec, arm, &[1.0, 2.0]).unwrap(), 0.0);
        }
        assert_eq!(eval_delta(&spec, &[]).unwrap(), 0.0);
    }

    #[test]
    fn modulation_errors() {
        let spec = BiasFunctionSpec::modulated(1.0, 0.0, sex_modulation());
        assert!(matches!(
            eval_u(&spec, Arm::Control, &[]),
            Err(BiasError::MissingCovariate { index: 0, len: 0, .. })
        ));
        assert!(matches!(
            eval_u(&spec, Arm::Control, &[0.5, 1.0]),
            Err(BiasError::UnmatchedLevel { .. })
        ));
        assert_eq!(
            Modulation::new("sex", &["male".to_string()], ModulationRule::Levels(vec![])).unwrap_err(),
            BiasError::UnknownCovariate("sex".into())
        );
    }

    #[test]
    fn piecewise_rule() {
        let names = vec!["age".to_string()];
        let m = Modulation::new(
            "age",
            &names,
            ModulationRule::Piecewise {
                cutpoints: vec![40.0, 60.0],
                multipliers: vec![0.5, 1.0, 1.5],
            },
        )
        .unwrap();
        assert_eq!(m.multiplier(&[39.9]).unwrap(), 0.5);
        assert_eq!(m.multiplier(&[40.0]).unwrap(), 1.0);
        assert_eq!(m.multiplier(&[75.0]).unwrap(), 1.5);
        let bad = Modulation::new(
            "age",
            &names,
            ModulationRule::Piecewise {
                cutpoints: vec![40.0],
                multipliers: vec![1.0],
            },
        );
        assert!(matches!(bad, Err(BiasError::InvalidRule(_))));
    }

    #[test]
    fn paper_grid_has_21_cells() {
        let u0 = [-40.0, 0.0, 40.0];
        let delta: Vec<f64> = (-3..=3).map(|k| 20.0 * k as f64).collect();
        let grid = make_grid(&u0, &delta, None).unwrap();
        assert_eq!(grid.len(), 21);
        assert_eq!((grid[0].u0, grid[0].delta), (-40.0, -60.0));
        assert_eq!((grid[20].u0, grid[20].delta), (40.0, 60.0));
    }

    #[test]
    fn grid_ordering_and_edge_cases() {
        let grid = make_grid(&[0.0], &[0.0], None).unwrap();
        assert_eq!(grid, vec![BiasFunctionSpec::zero()]);
        let grid = make_grid(&[1.0, 2.0], &[3.0], None).unwrap();
        let cells: Vec<_> = grid.iter().map(|s| (s.u0, s.delta)).collect();
        assert_eq!(cells, vec![(1.0, 3.0), (2.0, 3.0)]);
        assert_eq!(make_grid(&[], &[1.0], None).unwrap_err(), BiasError::EmptyGrid);
        let m = sex_modulation();
        assert!(make_grid(&[1.0], &[1.0, 2.0], Some(&m)).unwrap().iter().all(|s| s.modulation.as_ref() == Some(&m)));
    }

    #[test]
    fn modulation_config_serde() {
        let cfg: ModulationConfig = serde_json::from_str(
            r#"{"covariate": "male", "rule": {"levels": [{"value": 1, "multiplier": 1.0}, {"value": 0, "multiplier": 0.8}]}}"#,
        )
        .unwrap();
        let m = cfg.resolve(&["age".to_string(), "male".to_string()]).unwrap();
        assert_eq!(m.index, 1);
        assert_eq!(m.multiplier(&[30.0, 0.0]).unwrap(), 0.8);
    }

    proptest! {
        #[test]
        fn delta_identity(u0 in -100.0..100.0f64, delta in -100.0..100.0f64, male in proptest::bool::ANY, constant in proptest::bool::ANY) {
            let spec = if constant {
                BiasFunctionSpec::constant(u0, delta)
            } else {
                BiasFunctionSpec::modulated(u0, delta, sex_modulation())
            };
            let x = [if male { 1.0 } else { 0.0 }, 40.0];
            let d = eval_u(&spec, Arm::Treated, &x).unwrap() - eval_u(&spec, Arm::Control, &x).unwrap();
            prop_assert_eq!(d, eval_delta(&spec, &x).unwrap());
        }

        #[test]
        fn linear_in_parameters(a0 in -50.0..50.0f64, d0 in -50.0..50.0f64, a1 in -50.0..50.0f64, d1 in -50.0..50.0f64, male in proptest::bool::ANY) {
            let x = [if male { 1.0 } else { 0.0 }, 40.0];
            let m = sex_modulation();
            for arm in Arm::BOTH {
                let lhs = eval_u(&BiasFunctionSpec::modulated(a0 + a1, d0 + d1, m.clone()), arm, &x).unwrap();
                let rhs = eval_u(&BiasFunctionSpec::modulated(a0, d0, m.clone()), arm, &x).unwrap()
                    + eval_u(&BiasFunctionSpec::modulated(a1, d1, m.clone()), arm, &x).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }
}
