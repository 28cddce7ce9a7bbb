//! Synthetic data with known truths.
//!
//! Covariates are independent normals and Bernoullis, participation is logistic in `X`,
//! treatment among participants is a coin flip with fixed probability, and outcomes are
//! linear in `X` with Gaussian noise. A violation `u*(a, X)` is added to the participants'
//! conditional mean, so it is exactly the bias function of the generated data.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{BiasError, Modulation, ModulationConfig, ModulationRule};
use crate::data::{Arm, Design, Row, StudyDataset};
use crate::glm::inv_logit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDistribution {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub distribution: CovariateDistribution,
}

impl CovariateSpec {
    pub fn normal(name: &str, mean: f64, sd: f64) -> Self {
        CovariateSpec {
            name: name.to_string(),
            distribution: CovariateDistribution::Normal { mean, sd },
        }
    }

    pub fn bernoulli(name: &str, p: f64) -> Self {
        CovariateSpec {
            name: name.to_string(),
            distribution: CovariateDistribution::Bernoulli { p },
        }
    }
}

/// `intercept + coefficients·x`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearIndex {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearIndex {
    pub fn new(intercept: f64, coefficients: Vec<f64>) -> Self {
        LinearIndex { intercept, coefficients }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Injected `u*(a, X) = m(X)·u*_a`, with `m ≡ 1` unless modulated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Violation {
    pub treated: f64,
    pub control: f64,
    pub modulation: Option<ModulationConfig>,
}

impl Violation {
    pub fn constant(treated: f64, control: f64) -> Self {
        Violation {
            treated,
            control,
            modulation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub covariates: Vec<CovariateSpec>,
    /// Logit of `Pr[S = 1 | X]`.
    pub participation: LinearIndex,
    /// `Pr[A = 1 | S = 1]`.
    pub treatment_probability: f64,
    pub outcome_treated: LinearIndex,
    pub outcome_control: LinearIndex,
    pub noise_sd: f64,
    #[serde(default)]
    pub violation: Violation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub design: Design,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("sample size must be positive")]
    EmptySample,
    #[error("noise SD must be positive and finite, got {0}")]
    NoiseSd(f64),
    #[error("treatment probability {0} outside (0, 1)")]
    TreatmentProbability(f64),
    #[error("covariate `{name}`: {detail}")]
    Covariate { name: String, detail: String },
    #[error("{model} has {found} coefficients for {expected} covariates")]
    CoefficientCount {
        model: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("participation probability is identically {0}")]
    DegenerateParticipation(f64),
    #[error("non-finite parameter in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Bias(#[from] BiasError),
}

/// A validated configuration, ready to draw from.
#[derive(Debug, Clone)]
struct Dgp<'a> {
    cfg: &'a DgpConfig,
    modulation: Option<Modulation>,
}

impl<'a> Dgp<'a> {
    fn new(cfg: &'a DgpConfig) -> Result<Self, SimulateError> {
        if cfg.n == 0 {
            return Err(SimulateError::EmptySample);
        }
        if !(cfg.noise_sd > 0.0 && cfg.noise_sd.is_finite()) {
            return Err(SimulateError::NoiseSd(cfg.noise_sd));
        }
        if !(cfg.treatment_probability > 0.0 && cfg.treatment_probability < 1.0) {
            return Err(SimulateError::TreatmentProbability(cfg.treatment_probability));
        }
        for c in &cfg.covariates {
            let bad = |detail: String| SimulateError::Covariate {
                name: c.name.clone(),
                detail,
            };
            match c.distribution {
                CovariateDistribution::Normal { mean, sd } => {
                    if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
                        return Err(bad(format!("invalid normal parameters ({mean}, {sd})")));
                    }
                }
                CovariateDistribution::Bernoulli { p } => {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(bad(format!("Bernoulli probability {p} outside (0, 1)")));
                    }
                }
            }
        }
        let k = cfg.covariates.len();
        for (model, index) in [
            ("participation", &cfg.participation),
            ("outcome_treated", &cfg.outcome_treated),
            ("outcome_control", &cfg.outcome_control),
        ] {
            if index.coefficients.len() != k {
                return Err(SimulateError::CoefficientCount {
                    model,
                    expected: k,
                    found: index.coefficients.len(),
                });
            }
            if !index.intercept.is_finite() || index.coefficients.iter().any(|b| !b.is_finite()) {
                return Err(SimulateError::NonFinite(model));
            }
        }
        if !cfg.violation.treated.is_finite() || !cfg.violation.control.is_finite() {
            return Err(SimulateError::NonFinite("violation"));
        }
        if cfg.participation.coefficients.iter().all(|b| *b == 0.0) {
            let p = inv_logit(cfg.participation.intercept);
            if !(p > 1e-12 && p < 1.0 - 1e-12) {
                return Err(SimulateError::DegenerateParticipation(p.round()));
            }
        }
        let names = cfg.names();
        let modulation = cfg.violation.modulation.as_ref().map(|m| m.resolve(&names)).transpose()?;
        if let Some(m) = &modulation {
            let support: &[f64] = match cfg.covariates[m.index].distribution {
                CovariateDistribution::Bernoulli { .. } => &[0.0, 1.0],
                CovariateDistribution::Normal { .. } => &[],
            };
            if let ModulationRule::Levels(_) = m.rule {
                if support.is_empty() {
                    return Err(BiasError::InvalidRule(format!("level rule on continuous covariate `{}`", m.covariate)).into());
                }
                for v in support {
                    let mut x = vec![0.0; k];
                    x[m.index] = *v;
                    m.multiplier(&x)?;
                }
            }
        }
        Ok(Dgp { cfg, modulation })
    }

    fn violation(&self, arm: Arm, x: &[f64]) -> f64 {
        let m = self
            .modulation
            .as_ref()
            .map_or(1.0, |m| m.multiplier(x).expect("validated modulation"));
        m * match arm {
            Arm::Treated => self.cfg.violation.treated,
            Arm::Control => self.cfg.violation.control,
        }
    }

    fn mean(&self, arm: Arm, x: &[f64]) -> f64 {
        match arm {
            Arm::Treated => self.cfg.outcome_treated.eval(x),
            Arm::Control => self.cfg.outcome_control.eval(x),
        }
    }

    fn participation(&self, x: &[f64]) -> f64 {
        inv_logit(self.cfg.participation.eval(x))
    }

    fn draw_x(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.cfg
            .covariates
            .iter()
            .map(|c| match c.distribution {
                CovariateDistribution::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
                CovariateDistribution::Bernoulli { p } => {
                    if Bernoulli::new(p).expect("validated").sample(rng) {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }
}

impl DgpConfig {
    pub fn names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        Dgp::new(self).map(|_| ())
    }
}

/// Draws the dataset for `cfg.seed`.
pub fn generate(cfg: &DgpConfig) -> Result<StudyDataset, SimulateError> {
    generate_replicate(cfg, 0)
}

/// Draws replication `r`; depends only on `(cfg.seed, r)`.
pub fn generate_replicate(cfg: &DgpConfig, replicate: u64) -> Result<StudyDataset, SimulateError> {
    let dgp = Dgp::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate);
    let noise = Normal::new(0.0, cfg.noise_sd).expect("validated");
    let rows = (0..cfg.n)
        .map(|_| {
            let x = dgp.draw_x(&mut rng);
            if rng.random::<f64>() < dgp.participation(&x) {
                let arm = if rng.random::<f64>() < cfg.treatment_probability {
                    Arm::Treated
                } else {
                    Arm::Control
                };
                let y = dgp.mean(arm, &x) + dgp.violation(arm, &x) + noise.sample(&mut rng);
                Row::participant(x, arm, y)
            } else {
                Row::non_participant(x)
            }
        })
        .collect();
    Ok(StudyDataset::new(rows, cfg.design, cfg.names()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmValues {
    pub treated: f64,
    pub control: f64,
}

impl ArmValues {
    pub fn get(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Treated => self.treated,
            Arm::Control => self.control,
        }
    }

    pub fn difference(&self) -> f64 {
        self.treated - self.control
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMethod {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truths {
    /// `E[Y^a | S = 0]`.
    pub target_mean: ArmValues,
    /// `E[Y^a]`.
    pub population_mean: ArmValues,
    pub target_ate: f64,
    pub population_ate: f64,
    /// `E[u*(a, X) | S = 0]`: the limit bias of zero-bias non-nested estimators.
    pub target_gap: ArmValues,
    /// `E[(1 − p(X))·u*(a, X)]`: the limit bias of zero-bias whole-population estimators.
    pub population_gap: ArmValues,
    /// `E[u*(a, X) | S = 1]`.
    pub trial_violation: ArmValues,
    /// `Pr[S = 1]`.
    pub participation_rate: f64,
    pub method: TruthMethod,
    /// Largest Monte Carlo standard error among the reported values.
    pub monte_carlo_se: Option<f64>,
}

/// Above this many grid points the truths fall back to Monte Carlo.
const MAX_QUADRATURE_POINTS: usize = 2_000_000;
const HERMITE_NODES: usize = 60;
const MONTE_CARLO_DRAWS: usize = 10_000_000;

/// Nodes and probability weights of Gauss–Hermite quadrature for `N(0, 1)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Per-point quantities whose expectations define the truths.
const Q: usize = 10;

fn integrand(dgp: &Dgp<'_>, x: &[f64], out: &mut [f64; Q]) {
    let p = dgp.participation(x);
    let q = 1.0 - p;
    let (m1, m0) = (dgp.mean(Arm::Treated, x), dgp.mean(Arm::Control, x));
    let (u1, u0) = (dgp.violation(Arm::Treated, x), dgp.violation(Arm::Control, x));
    *out = [q, q * m1, q * m0, m1 + p * u1, m0 + p * u0, q * u1, q * u0, p, p * u1, p * u0];
}

fn assemble(e: &[f64; Q], method: TruthMethod, monte_carlo_se: Option<f64>) -> Truths {
    let [q, qm1, qm0, pm1, pm0, qu1, qu0, p, pu1, pu0] = *e;
    let target_mean = ArmValues {
        treated: qm1 / q,
        control: qm0 / q,
    };
    let population_mean = ArmValues {
        treated: pm1,
        control: pm0,
    };
    Truths {
        target_ate: target_mean.difference(),
        population_ate: population_mean.difference(),
        target_mean,
        population_mean,
        target_gap: ArmValues {
            treated: qu1 / q,
            control: qu0 / q,
        },
        population_gap: ArmValues {
            treated: qu1,
            control: qu0,
        },
        trial_violation: ArmValues {
            treated: pu1 / p,
            control: pu0 / p,
        },
        participation_rate: p,
        method,
        monte_carlo_se,
    }
}

fn quadrature(dgp: &Dgp<'_>) -> Truths {
    let (nodes, weights) = gauss_hermite(HERMITE_NODES);
    let axes: Vec<Vec<(f64, f64)>> = dgp
        .cfg
        .covariates
        .iter()
        .map(|c| match c.distribution {
            CovariateDistribution::Normal { mean, sd } => {
                nodes.iter().zip(&weights).map(|(z, w)| (mean + sd * z, *w)).collect()
            }
            CovariateDistribution::Bernoulli { p } => vec![(0.0, 1.0 - p), (1.0, p)],
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let sums = (0..total)
        .into_par_iter()
        .fold(
            || [0.0; Q],
            |mut acc, mut k| {
                let mut x = Vec::with_capacity(axes.len());
                let mut w = 1.0;
                for axis in &axes {
                    let (v, wk) = axis[k % axis.len()];
                    k /= axis.len();
                    x.push(v);
                    w *= wk;
                }
                let mut f = [0.0; Q];
                integrand(dgp, &x, &mut f);
                for (a, v) in acc.iter_mut().zip(f) {
                    *a += w * v;
                }
                acc
            },
        )
        .reduce(|| [0.0; Q], |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        });
    assemble(&sums, TruthMethod::Quadrature, None)
}

fn monte_carlo(dgp: &Dgp<'_>, draws: usize) -> Truths {
    const CHUNK: usize = 100_000;
    let chunks = draws.div_ceil(CHUNK);
    let (sums, squares) = (0..chunks as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(dgp.cfg.seed ^ 0x005e_ed0f_7a11);
            rng.set_stream(c);
            let mut s = [0.0; Q];
            let mut s2 = [0.0; Q];
            let mut f = [0.0; Q];
            let len = CHUNK.min(draws - c as usize * CHUNK);
            for _ in 0..len {
                let x = dgp.draw_x(&mut rng);
                integrand(dgp, &x, &mut f);
                for j in 0..Q {
                    s[j] += f[j];
                    s2[j] += f[j] * f[j];
                }
            }
            (s, s2)
        })
        .reduce(
            || ([0.0; Q], [0.0; Q]),
            |mut a, b| {
                for j in 0..Q {
                    a.0[j] += b.0[j];
                    a.1[j] += b.1[j];
                }
                a
            },
        );
    let n = draws as f64;
    let mean: [f64; Q] = sums.map(|s| s / n);
    let mut se = 0.0_f64;
    for j in 0..Q {
        let var = (squares[j] / n - mean[j] * mean[j]).max(0.0);
        // Ratios are reported relative to E[1 − p] or E[p]; scale their SEs accordingly.
        let scale = match j {
            1 | 2 | 5 | 6 => 1.0 / mean[0],
            8 | 9 => 1.0 / mean[7],
            _ => 1.0,
        };
        se = se.max(scale.abs() * (var / n).sqrt());
    }
    assemble(&mean, TruthMethod::MonteCarlo, Some(se))
}

/// Oracle values of the estimands and of the zero-bias limits.
pub fn true_values(cfg: &DgpConfig) -> Result<Truths, SimulateError> {
    let dgp = Dgp::new(cfg)?;
    let points = cfg.covariates.iter().try_fold(1usize, |acc, c| {
        acc.checked_mul(match c.distribution {
            CovariateDistribution::Normal { .. } => HERMITE_NODES,
            CovariateDistribution::Bernoulli { .. } => 2,
        })
    });
    Ok(match points {
        Some(p) if p <= MAX_QUADRATURE_POINTS => quadrature(&dgp),
        _ => monte_carlo(&dgp, MONTE_CARLO_DRAWS),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::LevelMultiplier;

    pub(crate) fn base() -> DgpConfig {
        DgpConfig {
            n: 500,
            covariates: vec![CovariateSpec::normal("x1", 0.0, 1.0), CovariateSpec::bernoulli("x2", 0.4)],
            participation: LinearIndex::new(-0.3, vec![0.7, -0.5]),
            treatment_probability: 0.5,
            outcome_treated: LinearIndex::new(10.0, vec![2.0, 1.0]),
            outcome_control: LinearIndex::new(4.0, vec![1.0, 0.5]),
            noise_sd: 1.0,
            violation: Violation::default(),
            seed: 17,
            design: Design::NonNested,
        }
    }

    #[test]
    fn deterministic() {
        let cfg = base();
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        assert_ne!(generate_replicate(&cfg, 1).unwrap(), generate_replicate(&cfg, 2).unwrap());
    }

    #[test]
    fn symmetric_participation() {
        let cfg = DgpConfig {
            n: 10_000,
            participation: LinearIndex::new(0.0, vec![0.0, 0.0]),
            ..base()
        };
        let ds = generate(&cfg).unwrap();
        let rate = ds.n_trial() as f64 / ds.n() as f64;
        assert!((rate - 0.5).abs() < 3.0 * (0.25f64 / 10_000.0).sqrt() * 1.5);
    }

    #[test]
    fn invalid_configs() {
        assert_eq!(
            DgpConfig { noise_sd: 0.0, ..base() }.validate(),
            Err(SimulateError::NoiseSd(0.0))
        );
        assert!(matches!(
            DgpConfig {
                participation: LinearIndex::new(50.0, vec![0.0, 0.0]),
                ..base()
            }
            .validate(),
            Err(SimulateError::DegenerateParticipation(_))
        ));
        assert!(matches!(
            DgpConfig {
                outcome_control: LinearIndex::new(0.0, vec![1.0]),
                ..base()
            }
            .validate(),
            Err(SimulateError::CoefficientCount { .. })
        ));
        assert!(DgpConfig { n: 0, ..base() }.validate().is_err());
    }

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite(HERMITE_NODES);
        let moment = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((moment(0) - 1.0).abs() < 1e-12);
        assert!(moment(1).abs() < 1e-12);
        assert!((moment(2) - 1.0).abs() < 1e-10);
        assert!((moment(4) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn no_effect_truths() {
        let cfg = DgpConfig {
            outcome_treated: base().outcome_control,
            ..base()
        };
        let t = true_values(&cfg).unwrap();
        assert!(t.target_ate.abs() < 1e-12);
        assert!(t.population_ate.abs() < 1e-12);
    }

    #[test]
    fn constant_violation_truths() {
        let cfg = DgpConfig {
            violation: Violation::constant(3.0, -2.0),
            ..base()
        };
        let t = true_values(&cfg).unwrap();
        assert!((t.target_gap.treated - 3.0).abs() < 1e-12);
        assert!((t.target_gap.control + 2.0).abs() < 1e-12);
        assert!((t.trial_violation.difference() - 5.0).abs() < 1e-12);
        let zero = true_values(&base()).unwrap();
        assert_eq!(zero.target_mean, t.target_mean);
        assert!((t.population_gap.treated - 3.0 * (1.0 - t.participation_rate)).abs() < 1e-12);
    }

    #[test]
    fn quadrature_agrees_with_monte_carlo() {
        let cfg = DgpConfig {
            violation: Violation {
                treated: 2.0,
                control: 1.0,
                modulation: Some(ModulationConfig {
                    covariate: "x2".into(),
                    rule: ModulationRule::Levels(vec![
                        LevelMultiplier { value: 0.0, multiplier: 0.8 },
                        LevelMultiplier { value: 1.0, multiplier: 1.0 },
                    ]),
                }),
            },
            ..base()
        };
        let dgp = Dgp::new(&cfg).unwrap();
        let q = quadrature(&dgp);
        let mc = monte_carlo(&dgp, 400_000);
        let tol = 5.0 * mc.monte_carlo_se.unwrap();
        for arm in Arm::BOTH {
            assert!((q.target_mean.get(arm) - mc.target_mean.get(arm)).abs() < tol);
            assert!((q.population_mean.get(arm) - mc.population_mean.get(arm)).abs() < tol);
            assert!((q.target_gap.get(arm) - mc.target_gap.get(arm)).abs() < tol);
        }
    }

    #[test]
    fn non_participants_have_no_trial_values() {
        let ds = generate(&base()).unwrap();
        assert!(ds.rows.iter().filter(|r| !r.s()).all(|r| r.arm().is_none() && r.outcome().is_none()));
        assert!(ds.n_target() > 0 && ds.n_arm(Arm::Treated) > 0 && ds.n_arm(Arm::Control) > 0);
    }
}
