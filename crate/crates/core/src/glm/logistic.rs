use nalgebra::DMatrix;

use super::linear::{least_squares, rank_check, ridge_least_squares};
use super::{
    check_inputs, inv_logit, Convergence, Family, FittedGlm, GlmError, TermSet, DEVIANCE_TOLERANCE,
    MAX_IRLS_ITERATIONS, RIDGE,
};

/// Fitted probabilities closer than this to 0 or 1 indicate separation.
const SEPARATION_EPS: f64 = 1e-10;

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn deviance(eta: &[f64], y: &[f64], w: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &y), &w)| 2.0 * w * (y * softplus(-e) + (1.0 - y) * softplus(e)))
        .sum()
}

fn linear_predictor(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum())
        .collect()
}

fn separation_direction(design: &TermSet, beta: &[f64]) -> String {
    let start = if beta.len() > 1 { 1 } else { 0 };
    let j = (start..beta.len())
        .max_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()))
        .unwrap_or(0);
    design.names[j].clone()
}

pub(crate) fn fit_logistic_terms(
    design: TermSet,
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<FittedGlm, GlmError> {
    let (n, p) = x.shape();
    let w = check_inputs(n, p, y, weights)?;
    if let Some(i) = y.iter().position(|v| *v != 0.0 && *v != 1.0) {
        return Err(GlmError::InvalidResponse(format!("non-binary response {} at row {i}", y[i])));
    }
    let total: f64 = w.iter().sum();
    let ybar = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / total;
    if ybar == 0.0 || ybar == 1.0 {
        return Err(GlmError::Separation {
            direction: design.names[0].clone(),
        });
    }
    rank_check(&design, x, &w)?;

    let mut beta = vec![0.0; p];
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut eta = linear_predictor(x, &beta);
    let mut dev = deviance(&eta, y, &w);
    let mut ridge_used = false;
    let mut working_y = vec![0.0; n];
    let mut working_w = vec![0.0; n];

    for iteration in 1..=MAX_IRLS_ITERATIONS {
        for i in 0..n {
            let mu = inv_logit(eta[i]);
            let v = mu * (1.0 - mu);
            working_w[i] = w[i] * v;
            working_y[i] = if v > 0.0 { eta[i] + (y[i] - mu) / v } else { eta[i] };
        }
        let proposal = match least_squares(x, &working_y, &working_w) {
            Some(b) => b,
            None => {
                log::warn!("singular IRLS step at iteration {iteration}; retrying with ridge {RIDGE:e}");
                ridge_used = true;
                ridge_least_squares(x, &working_y, &working_w, RIDGE).ok_or_else(|| GlmError::Separation {
                    direction: separation_direction(&design, &beta),
                })?
            }
        };
        if proposal.iter().any(|b| !b.is_finite()) {
            return Err(GlmError::Separation {
                direction: separation_direction(&design, &beta),
            });
        }

        // Step halving guards against overshooting from poor starting values.
        let mut step = 1.0;
        let (new_beta, new_eta, new_dev) = loop {
            let candidate: Vec<f64> = beta.iter().zip(&proposal).map(|(b, p)| b + step * (p - b)).collect();
            let cand_eta = linear_predictor(x, &candidate);
            let cand_dev = deviance(&cand_eta, y, &w);
            if cand_dev <= dev * (1.0 + 1e-12) + 1e-12 || step < 1e-6 {
                break (candidate, cand_eta, cand_dev);
            }
            step *= 0.5;
        };

        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        beta = new_beta;
        eta = new_eta;
        dev = new_dev;

        if change < DEVIANCE_TOLERANCE {
            let separated = (0..n).any(|i| {
                let mu = inv_logit(eta[i]);
                w[i] > 0.0 && mu.min(1.0 - mu) < SEPARATION_EPS
            });
            if separated {
                return Err(GlmError::Separation {
                    direction: separation_direction(&design, &beta),
                });
            }
            return Ok(FittedGlm {
                family: Family::Logistic,
                coefficients: beta,
                design,
                convergence: Convergence {
                    iterations: iteration,
                    final_change: change,
                    ridge_used,
                },
            });
        }
        if iteration == MAX_IRLS_ITERATIONS {
            let exploding = eta.iter().any(|e| e.abs() > 30.0);
            if exploding {
                return Err(GlmError::Separation {
                    direction: separation_direction(&design, &beta),
                });
            }
            return Err(GlmError::NonConvergence {
                iterations: iteration,
                last_change: change,
            });
        }
    }
    unreachable!("loop returns on the final iteration")
}

/// Maximum-likelihood logistic regression of `y` on an intercept plus the columns of `x`,
/// by iteratively reweighted least squares.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<FittedGlm, GlmError> {
    let design = TermSet::main_effects(x.ncols());
    let full = x.clone().insert_column(0, 1.0);
    fit_logistic_terms(design, &full, y, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn score(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &[f64]) -> Vec<f64> {
        let full = x.clone().insert_column(0, 1.0);
        let eta = linear_predictor(&full, beta);
        (0..full.ncols())
            .map(|j| (0..full.nrows()).map(|i| w[i] * (y[i] - inv_logit(eta[i])) * full[(i, j)]).sum())
            .collect()
    }

    #[test]
    fn intercept_only_matches_proportion() {
        let x = DMatrix::<f64>::zeros(6, 0);
        let fit = fit_logistic(&x, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0], None).unwrap();
        assert!((fit.coefficients[0] - 2f64.ln()).abs() < 1e-12);
        assert!((fit.predict(&[]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_two_by_two_matches_closed_form() {
        // Group 0: Pr = 0.2 (1 of 5); group 1: Pr = 0.8 (4 of 5).
        let groups = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let y = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        let x = DMatrix::from_column_slice(10, 1, &groups);
        let fit = fit_logistic(&x, &y, None).unwrap();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        assert!((fit.coefficients[0] - logit(0.2)).abs() < 1e-10);
        assert!((fit.coefficients[1] - (logit(0.8) - logit(0.2))).abs() < 1e-10);
    }

    #[test]
    fn constant_response_is_separation() {
        let x = DMatrix::<f64>::zeros(3, 0);
        assert!(matches!(fit_logistic(&x, &[1.0, 1.0, 1.0], None), Err(GlmError::Separation { .. })));
    }

    #[test]
    fn complete_separation_names_the_direction() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        match fit_logistic(&x, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], None) {
            Err(GlmError::Separation { direction }) => assert_eq!(direction, "x1"),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_binary_response() {
        let x = DMatrix::<f64>::zeros(2, 0);
        assert!(matches!(fit_logistic(&x, &[0.5, 1.0], None), Err(GlmError::InvalidResponse(_))));
    }

    #[test]
    fn rank_deficient_design() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 0.0, 0.0, 1.0, 2.0, 3.0, 6.0]);
        assert!(matches!(
            fit_logistic(&x, &[1.0, 0.0, 0.0, 1.0], None),
            Err(GlmError::RankDeficient { .. })
        ));
    }

    fn data() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (40usize..120).prop_flat_map(|n| {
            (
                proptest::collection::vec(-2.0..2.0f64, n),
                proptest::collection::vec(0.0..1.0f64, n),
                proptest::collection::vec(0.2..3.0f64, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn score_equations_hold((xs, u, w) in data()) {
            // Overlapping classes so the MLE exists.
            let y: Vec<f64> = xs.iter().zip(&u).map(|(x, u)| if *u < inv_logit(0.3 + 0.8 * x) { 1.0 } else { 0.0 }).collect();
            let ones = y.iter().filter(|v| **v == 1.0).count();
            prop_assume!(ones > 5 && ones < y.len() - 5);
            let x = DMatrix::from_column_slice(xs.len(), 1, &xs);
            let fit = match fit_logistic(&x, &y, Some(&w)) {
                Ok(f) => f,
                Err(GlmError::Separation { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            let s = score(&x, &y, &w, &fit.coefficients);
            prop_assert!(s.iter().all(|v| v.abs() <= 1e-8), "score {s:?}");

            let scaled: Vec<f64> = w.iter().map(|v| 7.5 * v).collect();
            let refit = fit_logistic(&x, &y, Some(&scaled)).unwrap();
            for (a, b) in fit.coefficients.iter().zip(&refit.coefficients) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn weighted_intercept_only_equals_weighted_proportion(
            y in proptest::collection::vec(proptest::bool::ANY, 4..50),
            w in proptest::collection::vec(0.1..4.0f64, 50),
        ) {
            let y: Vec<f64> = y.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
            let w = &w[..y.len()];
            let total: f64 = w.iter().sum();
            let prop = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
            prop_assume!(prop > 0.0 && prop < 1.0);
            let x = DMatrix::<f64>::zeros(y.len(), 0);
            let fit = fit_logistic(&x, &y, Some(w)).unwrap();
            prop_assert!((fit.predict(&[]).unwrap() - prop).abs() < 1e-12);
        }
    }
}
