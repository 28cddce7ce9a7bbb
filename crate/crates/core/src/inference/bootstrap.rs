use std::fmt::Display;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{normal_quantile, quantile_sorted, InferenceError, MAX_FAILED_FRACTION};
use crate::data::StudyDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Resample participants and non-participants separately, preserving `n₁` and `n₀`.
    pub stratify_by_s: bool,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 500,
            seed: 0,
            stratify_by_s: true,
            level: super::DEFAULT_LEVEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Statistic vectors of the successful replicates, in replicate order.
    pub replicates: Vec<Vec<f64>>,
    pub failed: usize,
    /// Standard deviation of each statistic across replicates.
    pub se: Vec<f64>,
    /// Percentile interval of each statistic.
    pub ci: Vec<(f64, f64)>,
}

/// Row indices of replicate `r`; depends only on `(seed, r)`.
pub fn resample_indices(ds: &StudyDataset, seed: u64, replicate: u64, stratify_by_s: bool) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let draw = |pool: &[usize], rng: &mut ChaCha8Rng, out: &mut Vec<usize>| {
        for _ in 0..pool.len() {
            out.push(pool[rng.random_range(0..pool.len())]);
        }
    };
    let mut out = Vec::with_capacity(ds.n());
    if stratify_by_s {
        let (trial, target): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| ds.rows[i].s());
        draw(&trial, &mut rng, &mut out);
        draw(&target, &mut rng, &mut out);
    } else {
        let all: Vec<usize> = (0..ds.n()).collect();
        draw(&all, &mut rng, &mut out);
    }
    out
}

/// Nonparametric bootstrap of a vector-valued statistic.
///
/// `statistic` must recompute the whole pipeline, nuisance fits included, on the
/// resampled dataset. Failed replicates are excluded and counted.
pub fn bootstrap<F, E>(ds: &StudyDataset, config: &BootstrapConfig, statistic: F) -> Result<BootstrapResult, InferenceError>
where
    F: Fn(&StudyDataset) -> Result<Vec<f64>, E> + Sync,
    E: Display,
{
    if config.replicates < 2 {
        return Err(InferenceError::TooFewReplicates(config.replicates));
    }
    let alpha = 1.0 - config.level;
    normal_quantile(config.level)?;

    let outcomes: Vec<Result<Vec<f64>, String>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let idx = resample_indices(ds, config.seed, r, config.stratify_by_s);
            let resampled = ds.with_rows(idx.iter().map(|&i| ds.rows[i].clone()).collect());
            statistic(&resampled)
                .map_err(|e| e.to_string())
                .and_then(|v| {
                    if v.iter().all(|x| x.is_finite()) {
                        Ok(v)
                    } else {
                        Err("non-finite statistic".to_string())
                    }
                })
        })
        .collect();

    let mut replicates = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    let mut last_error = String::new();
    for outcome in outcomes {
        match outcome {
            Ok(v) => replicates.push(v),
            Err(e) => {
                failed += 1;
                last_error = e;
            }
        }
    }
    if failed as f64 > MAX_FAILED_FRACTION * config.replicates as f64 || replicates.len() < 2 {
        return Err(InferenceError::TooManyFailures {
            failed,
            total: config.replicates,
            last_error,
        });
    }
    if failed > 0 {
        log::warn!("bootstrap: {failed} of {} replicates failed ({last_error})", config.replicates);
    }

    let k = replicates[0].len();
    if let Some(bad) = replicates.iter().find(|v| v.len() != k) {
        return Err(InferenceError::StatisticLength {
            expected: k,
            found: bad.len(),
        });
    }
    let mut se = Vec::with_capacity(k);
    let mut ci = Vec::with_capacity(k);
    let m = replicates.len() as f64;
    for j in 0..k {
        let shift = replicates[0][j];
        let centered: Vec<f64> = replicates.iter().map(|v| v[j] - shift).collect();
        let mean = centered.iter().sum::<f64>() / m;
        let var = centered.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0);
        se.push(var.sqrt());
        let mut sorted: Vec<f64> = replicates.iter().map(|v| v[j]).collect();
        sorted.sort_by(f64::total_cmp);
        ci.push((quantile_sorted(&sorted, alpha / 2.0), quantile_sorted(&sorted, 1.0 - alpha / 2.0)));
    }
    Ok(BootstrapResult {
        replicates,
        failed,
        se,
        ci,
    })
}
