use nalgebra::{DMatrix, DVector};

use super::{check_inputs, Convergence, Family, FittedGlm, GlmError, TermSet};

/// Relative residual norm below which a column counts as a combination of earlier ones.
const COLLINEARITY_TOLERANCE: f64 = 1e-9;

/// Columns of `sqrt(w)·X` that lie (numerically) in the span of the preceding columns.
pub(crate) fn collinear_columns(x: &DMatrix<f64>, w: &[f64]) -> Vec<usize> {
    let n = x.nrows();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut collinear = Vec::new();
    for j in 0..x.ncols() {
        let mut v = DVector::from_fn(n, |i, _| x[(i, j)] * sw[i]);
        let original = v.norm();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let residual = v.norm();
        if original == 0.0 || residual <= COLLINEARITY_TOLERANCE * original {
            collinear.push(j);
        } else {
            basis.push(v / residual);
        }
    }
    collinear
}

/// Weighted least squares through a thin QR of `sqrt(w)·X`. Returns `None` when `R` is
/// numerically singular.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let (n, p) = x.shape();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * sw[i]);
    let yw = DVector::from_fn(n, |i, _| y[i] * sw[i]);
    let qr = xw.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..p).any(|j| r[(j, j)].abs() <= 1e-13 * max_diag.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let qty = qr.q().transpose() * yw;
    r.solve_upper_triangular(&qty).map(|b| b.iter().copied().collect())
}

/// Ridge-stabilized normal equations, used only after QR has failed.
pub(crate) fn ridge_least_squares(x: &DMatrix<f64>, y: &[f64], w: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let (n, p) = x.shape();
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    for i in 0..n {
        for j in 0..p {
            let a = w[i] * x[(i, j)];
            xtwy[j] += a * y[i];
            for k in 0..p {
                xtwx[(j, k)] += a * x[(i, k)];
            }
        }
    }
    for j in 0..p {
        xtwx[(j, j)] += ridge;
    }
    xtwx.cholesky().map(|c| c.solve(&xtwy).iter().copied().collect())
}

pub(crate) fn rank_check(design: &TermSet, x: &DMatrix<f64>, w: &[f64]) -> Result<(), GlmError> {
    let bad = collinear_columns(x, w);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(GlmError::RankDeficient {
            columns: bad.iter().map(|&j| design.names[j].clone()).collect(),
        })
    }
}

pub(crate) fn fit_linear_terms(
    design: TermSet,
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<FittedGlm, GlmError> {
    if x.nrows() < x.ncols() {
        return Err(GlmError::TooFewRows {
            rows: x.nrows(),
            columns: x.ncols(),
        });
    }
    let w = check_inputs(x.nrows(), x.ncols(), y, weights)?;
    rank_check(&design, x, &w)?;
    let coefficients = least_squares(x, y, &w).ok_or_else(|| GlmError::RankDeficient {
        columns: design.names.clone(),
    })?;
    Ok(FittedGlm {
        family: Family::Linear,
        coefficients,
        design,
        convergence: Convergence {
            iterations: 1,
            final_change: 0.0,
            ridge_used: false,
        },
    })
}

/// Weighted least squares of `y` on an intercept plus the columns of `x`.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<FittedGlm, GlmError> {
    let design = TermSet::main_effects(x.ncols());
    let full = x.clone().insert_column(0, 1.0);
    fit_linear_terms(design, &full, y, weights)
}
