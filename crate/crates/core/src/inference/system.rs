//! The stacked estimating equations behind every transport estimator.
//!
//! Each arm mean is a sum of ratio terms `θₖ = Σ numₖ / Σ denₖ`, with target equations
//! `numₖ − denₖ·θₖ = 0`. Nuisance blocks are the score equations of the participation,
//! treatment and outcome working models, so their estimation error propagates into the
//! target variances.

use serde::{Deserialize, Serialize};

use super::sandwich::{sandwich, EstimatingFunction, ParamBlock, SandwichResult};
use super::{InferenceError, Interval};
use crate::bias::BiasFunctionSpec;
use crate::data::{Arm, StudyDataset};
use crate::estimators::{estimate_triple, EstimateError, Estimator, EstimatorOptions, EvalContext, Target};
use crate::glm::{dot, inv_logit, FittedGlm, NuisanceModels, ProbabilityModel};

/// Whether nuisance blocks are stacked (`Full`) or held fixed (`Naive`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMode {
    #[default]
    Full,
    Naive,
}

#[derive(Debug, Clone)]
enum Coefs {
    Free(usize),
    Fixed(Vec<f64>),
}

/// A working model evaluated on expanded covariate rows.
#[derive(Debug, Clone)]
struct Component {
    x: Vec<f64>,
    width: usize,
    coefs: Coefs,
}

impl Component {
    fn new(ds: &StudyDataset, glm: &FittedGlm, free: Option<usize>) -> Self {
        let width = glm.design.width();
        let mut x = Vec::with_capacity(ds.n() * width);
        for row in &ds.rows {
            x.extend(glm.design.expand(&row.x));
        }
        let coefs = match free {
            Some(offset) => Coefs::Free(offset),
            None => Coefs::Fixed(glm.coefficients.clone()),
        };
        Component { x, width, coefs }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.width..(i + 1) * self.width]
    }

    fn eta(&self, i: usize, theta: &[f64]) -> f64 {
        match &self.coefs {
            Coefs::Free(off) => dot(self.row(i), &theta[*off..*off + self.width]),
            Coefs::Fixed(c) => dot(self.row(i), c),
        }
    }

    /// Writes `r·x̃ᵢ` into the component's block when its coefficients are free.
    fn score(&self, i: usize, r: f64, out: &mut [f64]) {
        if let Coefs::Free(off) = self.coefs {
            for (o, x) in out[off..off + self.width].iter_mut().zip(self.row(i)) {
                *o = r * x;
            }
        }
    }

    fn initial(&self, glm: &FittedGlm, theta: &mut [f64]) {
        if let Coefs::Free(off) = self.coefs {
            theta[off..off + self.width].copy_from_slice(&glm.coefficients);
        }
    }
}

#[derive(Debug, Clone)]
enum Probability {
    Model(Component),
    Known(f64),
}

impl Probability {
    fn value(&self, i: usize, theta: &[f64]) -> f64 {
        match self {
            Probability::Model(c) => inv_logit(c.eta(i, theta)),
            Probability::Known(p) => *p,
        }
    }
}

/// Stacked system for one estimator and one bias specification, both arms at once.
#[derive(Debug, Clone)]
pub struct TransportSystem<'a> {
    ds: &'a StudyDataset,
    nm: &'a NuisanceModels,
    estimator: Estimator,
    blocks: Vec<ParamBlock>,
    participation: Option<Probability>,
    treatment: Option<Probability>,
    outcome: Option<[Component; 2]>,
    /// `u(a, Xᵢ)`, indexed by arm.
    bias: [Vec<f64>; 2],
    /// Offset of the first target parameter.
    target_offset: usize,
    terms: usize,
    direct: [f64; 3],
}

fn n_terms(estimator: Estimator) -> usize {
    use Estimator::*;
    match estimator {
        Iow2 | Aiow2 | Ipw2 | Aipw2 => 2,
        _ => 1,
    }
}

fn needs_outcome(estimator: Estimator) -> bool {
    use Estimator::*;
    matches!(estimator, Om | Aiow1 | Aiow2 | OmPop | Aipw1 | Aipw2)
}

/// Target arms in parameter order.
const ARMS: [Arm; 2] = [Arm::Treated, Arm::Control];

impl<'a> TransportSystem<'a> {
    pub fn new(
        ds: &'a StudyDataset,
        nm: &'a NuisanceModels,
        estimator: Estimator,
        bias: &BiasFunctionSpec,
        mode: StackMode,
    ) -> Result<Self, InferenceError> {
        Self::with_options(ds, nm, estimator, bias, mode, &EstimatorOptions::default())
    }

    pub fn with_options(
        ds: &'a StudyDataset,
        nm: &'a NuisanceModels,
        estimator: Estimator,
        bias: &BiasFunctionSpec,
        mode: StackMode,
        options: &EstimatorOptions,
    ) -> Result<Self, InferenceError> {
        if options.truncate_quantile.is_some() && estimator.uses_weights() {
            return Err(InferenceError::TruncationUnsupported(estimator));
        }
        if estimator.target() == Target::NonRandomized && ds.n_target() == 0 {
            return Err(EstimateError::NoTargetSample.into());
        }
        let ctx = EvalContext::new(ds, nm)?;
        let direct = estimate_triple(&ctx, estimator, bias, options)?;
        let bias_values = [ctx.bias_values(bias, Arm::Control)?, ctx.bias_values(bias, Arm::Treated)?];

        let full = mode == StackMode::Full;
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut free = |name: &str, dim: usize, blocks: &mut Vec<ParamBlock>| {
            if !full {
                return None;
            }
            blocks.push(ParamBlock::new(name, dim));
            let at = offset;
            offset += dim;
            Some(at)
        };

        let weighted = estimator.uses_weights();
        let participation = match (&nm.participation, weighted) {
            (_, false) => None,
            (ProbabilityModel::Fixed(p), true) => Some(Probability::Known(*p)),
            (ProbabilityModel::Fitted(glm), true) => {
                let at = free("participation", glm.coefficients.len(), &mut blocks);
                Some(Probability::Model(Component::new(ds, glm, at)))
            }
        };
        let treatment = match (&nm.treatment, weighted) {
            (_, false) => None,
            (ProbabilityModel::Fixed(p), true) => Some(Probability::Known(*p)),
            (ProbabilityModel::Fitted(glm), true) => {
                let at = free("treatment", glm.coefficients.len(), &mut blocks);
                Some(Probability::Model(Component::new(ds, glm, at)))
            }
        };
        let outcome = if needs_outcome(estimator) {
            let [g0, g1] = &nm.outcome;
            let at0 = free("outcome_a0", g0.coefficients.len(), &mut blocks);
            let at1 = free("outcome_a1", g1.coefficients.len(), &mut blocks);
            Some([Component::new(ds, g0, at0), Component::new(ds, g1, at1)])
        } else {
            None
        };

        let terms = n_terms(estimator);
        let target_offset = blocks.iter().map(|b| b.dim).sum();
        blocks.push(ParamBlock::new("target_a1", terms));
        blocks.push(ParamBlock::new("target_a0", terms));

        Ok(TransportSystem {
            ds,
            nm,
            estimator,
            blocks,
            participation,
            treatment,
            outcome,
            bias: bias_values,
            target_offset,
            terms,
            direct,
        })
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    /// The closed-form estimates `[μ̂(1), μ̂(0), μ̂(1) − μ̂(0)]`.
    pub fn direct_estimates(&self) -> [f64; 3] {
        self.direct
    }

    /// Ratio terms `(numₖ, denₖ)` for row `i` and arm `arm`.
    fn row_terms(&self, i: usize, arm: Arm, theta: &[f64], out: &mut [(f64, f64); 2]) {
        use Estimator::*;
        let row = &self.ds.rows[i];
        let t = if row.s() { 0.0 } else { 1.0 };
        let u = self.bias[arm.index()][i];
        let y = row.outcome().unwrap_or(0.0);
        let g = self.outcome.as_ref().map_or(0.0, |c| c[arm.index()].eta(i, theta));

        let (p, w) = if row.in_arm(arm) && self.estimator.uses_weights() {
            let p = self.participation.as_ref().map_or(1.0, |m| m.value(i, theta));
            let e1 = self.treatment.as_ref().map_or(0.5, |m| m.value(i, theta));
            let e = match arm {
                Arm::Treated => e1,
                Arm::Control => 1.0 - e1,
            };
            let w = match self.estimator.target() {
                Target::NonRandomized => (1.0 - p) / (p * e),
                Target::WholePopulation => 1.0 / (p * e),
            };
            (p, w)
        } else {
            (1.0, 0.0)
        };

        *out = match self.estimator {
            Om => [(t * (g - u), t), (0.0, 0.0)],
            Iow1 => [(w * y - t * u, t), (0.0, 0.0)],
            Iow2 => [(w * y, w), (-t * u, t)],
            Aiow1 => [(w * (y - g) + t * (g - u), t), (0.0, 0.0)],
            Aiow2 => [(w * (y - g), w), (t * (g - u), t)],
            BcOutcomeIow => [(w * (y - u), w), (0.0, 0.0)],
            OmPop => [(g - t * u, 1.0), (0.0, 0.0)],
            Ipw1 => [(w * y - t * u, 1.0), (0.0, 0.0)],
            Ipw2 => [(w * y, w), (-t * u, 1.0)],
            Aipw1 => [(w * (y - g) + g - t * u, 1.0), (0.0, 0.0)],
            Aipw2 => [(w * (y - g), w), (g - t * u, 1.0)],
            BcOutcomeIpw => [(w * (y - u * (1.0 - p)), w), (0.0, 0.0)],
        };
    }

    fn target_index(&self, arm: Arm, k: usize) -> usize {
        let arm_pos = ARMS.iter().position(|a| *a == arm).expect("arm");
        self.target_offset + arm_pos * self.terms + k
    }

    /// Nuisance values at the shared fit, target terms in closed form.
    pub fn solve(&self) -> Result<Vec<f64>, InferenceError> {
        let mut theta = vec![0.0; self.dim()];
        if let Some(Probability::Model(c)) = &self.participation {
            c.initial(self.nm.participation.fitted().expect("fitted"), &mut theta);
        }
        if let Some(Probability::Model(c)) = &self.treatment {
            c.initial(self.nm.treatment.fitted().expect("fitted"), &mut theta);
        }
        if let Some(outcome) = &self.outcome {
            outcome[0].initial(&self.nm.outcome[0], &mut theta);
            outcome[1].initial(&self.nm.outcome[1], &mut theta);
        }
        for arm in ARMS {
            let mut sums = [(0.0, 0.0); 2];
            let mut buf = [(0.0, 0.0); 2];
            for i in 0..self.ds.n() {
                self.row_terms(i, arm, &theta, &mut buf);
                for (s, b) in sums.iter_mut().zip(&buf) {
                    s.0 += b.0;
                    s.1 += b.1;
                }
            }
            for (k, (num, den)) in sums.iter().take(self.terms).enumerate() {
                if *den <= 0.0 {
                    return Err(EstimateError::ZeroWeightSum { arm }.into());
                }
                theta[self.target_index(arm, k)] = num / den;
            }
        }
        Ok(theta)
    }

    /// Contrast vectors selecting `μ(1)`, `μ(0)` and `μ(1) − μ(0)`.
    pub fn contrasts(&self) -> [Vec<f64>; 3] {
        let mut c1 = vec![0.0; self.dim()];
        let mut c0 = vec![0.0; self.dim()];
        for k in 0..self.terms {
            c1[self.target_index(Arm::Treated, k)] = 1.0;
            c0[self.target_index(Arm::Control, k)] = 1.0;
        }
        let ate = c1.iter().zip(&c0).map(|(a, b)| a - b).collect();
        [c1, c0, ate]
    }

    pub fn means(&self, theta: &[f64]) -> [f64; 3] {
        let [c1, c0, _] = self.contrasts();
        let m1 = dot(&c1, theta);
        let m0 = dot(&c0, theta);
        [m1, m0, m1 - m0]
    }
}

impl EstimatingFunction for TransportSystem<'_> {
    fn n_obs(&self) -> usize {
        self.ds.n()
    }

    fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    fn psi(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let row = &self.ds.rows[i];
        let s = if row.s() { 1.0 } else { 0.0 };
        if let Some(Probability::Model(c)) = &self.participation {
            c.score(i, s - inv_logit(c.eta(i, theta)), out);
        }
        if row.s() {
            if let Some(Probability::Model(c)) = &self.treatment {
                let a = if row.in_arm(Arm::Treated) { 1.0 } else { 0.0 };
                c.score(i, a - inv_logit(c.eta(i, theta)), out);
            }
            if let (Some(outcome), Some(arm), Some(y)) = (&self.outcome, row.arm(), row.outcome()) {
                let c = &outcome[arm.index()];
                c.score(i, y - c.eta(i, theta), out);
            }
        }
        let mut buf = [(0.0, 0.0); 2];
        for arm in ARMS {
            self.row_terms(i, arm, theta, &mut buf);
            for (k, (num, den)) in buf.iter().take(self.terms).enumerate() {
                let j = self.target_index(arm, k);
                out[j] = num - den * theta[j];
            }
        }
    }
}

/// Sandwich estimates and Wald intervals for `[μ(1), μ(0), ATE]`.
pub fn transport_inference(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    estimator: Estimator,
    bias: &BiasFunctionSpec,
    mode: StackMode,
    level: f64,
) -> Result<[Interval; 3], InferenceError> {
    let sys = TransportSystem::new(ds, nm, estimator, bias, mode)?;
    let theta = sys.solve()?;
    let result: SandwichResult = sandwich(&sys, &theta, level)?;
    let [c1, c0, ate] = sys.contrasts();
    Ok([result.contrast(&c1)?, result.contrast(&c0)?, result.contrast(&ate)?])
}
