use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{wald, InferenceError, Interval};

/// Named slice of the stacked parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub dim: usize,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        ParamBlock { name: name.into(), dim }
    }
}

/// Per-observation estimating function `ψ(Oᵢ; η)` of a stacked M-estimator.
pub trait EstimatingFunction: Sync {
    fn n_obs(&self) -> usize;

    fn blocks(&self) -> &[ParamBlock];

    /// Writes `ψ(Oᵢ; θ)` into `out`, whose length is the total parameter dimension.
    fn psi(&self, i: usize, theta: &[f64], out: &mut [f64]);

    fn dim(&self) -> usize {
        self.blocks().iter().map(|b| b.dim).sum()
    }
}

/// `(1/n) Σᵢ ψ(Oᵢ; θ)`.
pub fn mean_psi<F: EstimatingFunction + ?Sized>(f: &F, theta: &[f64]) -> Vec<f64> {
    let p = f.dim();
    let mut total = vec![0.0; p];
    let mut buf = vec![0.0; p];
    for i in 0..f.n_obs() {
        f.psi(i, theta, &mut buf);
        for (t, v) in total.iter_mut().zip(&buf) {
            *t += v;
        }
    }
    let n = f.n_obs() as f64;
    total.iter_mut().for_each(|t| *t /= n);
    total
}

/// Central-difference Jacobian of the averaged estimating function.
fn jacobian<F: EstimatingFunction + ?Sized>(f: &F, theta: &[f64], step_scale: f64) -> DMatrix<f64> {
    let p = theta.len();
    let columns: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let h = step_scale * theta[j].abs().max(1.0);
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let up = mean_psi(f, &plus);
            let down = mean_psi(f, &minus);
            up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect()
        })
        .collect();
    DMatrix::from_fn(p, p, |r, c| columns[c][r])
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !max.is_finite() || !min.is_finite() || min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

const MAX_CONDITION: f64 = 1e12;

fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, InferenceError> {
    let condition = condition_number(m);
    if condition > MAX_CONDITION {
        return Err(InferenceError::Singular { condition });
    }
    m.clone()
        .try_inverse()
        .ok_or(InferenceError::Singular { condition })
}

/// Solves `(1/n) Σ ψ(Oᵢ; θ) = 0` by Newton's method with a finite-difference Jacobian.
pub fn solve_newton<F: EstimatingFunction + ?Sized>(
    f: &F,
    init: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<Vec<f64>, InferenceError> {
    let mut theta = init.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iterations {
        let m = mean_psi(f, &theta);
        residual = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if residual <= tolerance {
            return Ok(theta);
        }
        let j = jacobian(f, &theta, 1e-6);
        let step = checked_inverse(&j)? * DVector::from_vec(m);
        for (t, s) in theta.iter_mut().zip(step.iter()) {
            *t -= s;
        }
    }
    Err(InferenceError::NonConvergence {
        iterations: max_iterations,
        residual,
    })
}

/// Solved stack with covariance `A⁻¹ B A⁻ᵀ / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichResult {
    pub estimates: Vec<f64>,
    pub blocks: Vec<ParamBlock>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
    pub level: f64,
}

impl SandwichResult {
    pub fn se(&self, j: usize) -> f64 {
        self.covariance[(j, j)].max(0.0).sqrt()
    }

    /// Offset of a named block in the parameter vector.
    pub fn block_offset(&self, name: &str) -> Option<usize> {
        let mut offset = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(offset);
            }
            offset += b.dim;
        }
        None
    }

    /// Estimate, SE and Wald interval of `cᵀθ`.
    pub fn contrast(&self, c: &[f64]) -> Result<Interval, InferenceError> {
        let cv = DVector::from_column_slice(c);
        let estimate = cv.dot(&DVector::from_column_slice(&self.estimates));
        let var = (cv.transpose() * &self.covariance * &cv)[(0, 0)];
        wald(estimate, var.max(0.0).sqrt(), self.level)
    }
}

/// Sandwich covariance of the solved stack at `theta`.
pub fn sandwich<F: EstimatingFunction + ?Sized>(f: &F, theta: &[f64], level: f64) -> Result<SandwichResult, InferenceError> {
    sandwich_with_step(f, theta, level, 1e-6)
}

pub(crate) fn sandwich_with_step<F: EstimatingFunction + ?Sized>(
    f: &F,
    theta: &[f64],
    level: f64,
    step_scale: f64,
) -> Result<SandwichResult, InferenceError> {
    super::normal_quantile(level)?;
    let p = theta.len();
    let n = f.n_obs();
    let a = -jacobian(f, theta, step_scale);
    let a_inv = checked_inverse(&a)?;

    let mut b = DMatrix::<f64>::zeros(p, p);
    let mut buf = vec![0.0; p];
    for i in 0..n {
        f.psi(i, theta, &mut buf);
        for r in 0..p {
            if buf[r] == 0.0 {
                continue;
            }
            for c in 0..p {
                b[(r, c)] += buf[r] * buf[c];
            }
        }
    }
    b /= n as f64;

    let cov = &a_inv * b * a_inv.transpose() / n as f64;
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(SandwichResult {
        estimates: theta.to_vec(),
        blocks: f.blocks().to_vec(),
        covariance,
        n,
        level,
    })
}
