//! Empirical checks of the participation and treatment positivity conditions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Arm, StudyDataset};
use crate::glm::{GlmError, NuisanceModels};

pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PositivityError {
    #[error("positivity threshold {0} must lie in (0, 0.5)")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Glm(#[from] GlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub threshold: f64,
    pub n: usize,
    pub participation_min: f64,
    pub participation_max: f64,
    /// Rows with `p̂(X)` outside `[threshold, 1 − threshold]`.
    pub participation_flagged: usize,
    /// Minimum `ê_a(X)` among trial rows, `[control, treated]`.
    pub treatment_min: [f64; 2],
    /// Trial rows with `ê_a(X) < threshold` for either arm.
    pub treatment_flagged: usize,
    /// Sorted indices of every flagged row.
    pub flagged_rows: Vec<usize>,
}

impl PositivityReport {
    pub fn flagged(&self) -> usize {
        self.flagged_rows.len()
    }
}

pub fn positivity_diagnostics(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    threshold: f64,
) -> Result<PositivityReport, PositivityError> {
    if !(threshold > 0.0 && threshold < 0.5) {
        return Err(PositivityError::InvalidThreshold(threshold));
    }
    let mut report = PositivityReport {
        threshold,
        n: ds.n(),
        participation_min: f64::INFINITY,
        participation_max: f64::NEG_INFINITY,
        participation_flagged: 0,
        treatment_min: [f64::INFINITY; 2],
        treatment_flagged: 0,
        flagged_rows: Vec::new(),
    };
    for (i, row) in ds.rows.iter().enumerate() {
        let p = nm.participation_probability(&row.x)?;
        report.participation_min = report.participation_min.min(p);
        report.participation_max = report.participation_max.max(p);
        let mut flagged = false;
        if p < threshold || p > 1.0 - threshold {
            report.participation_flagged += 1;
            flagged = true;
        }
        if row.s() {
            let mut low = false;
            for arm in Arm::BOTH {
                let e = nm.treatment_probability(arm, &row.x)?;
                report.treatment_min[arm.index()] = report.treatment_min[arm.index()].min(e);
                low |= e < threshold;
            }
            if low {
                report.treatment_flagged += 1;
                flagged = true;
            }
        }
        if flagged {
            report.flagged_rows.push(i);
        }
    }
    if report.flagged_rows.is_empty() {
        log::debug!("positivity: no rows flagged at threshold {threshold}");
    } else {
        log::warn!(
            "positivity: {} of {} rows flagged at threshold {threshold}",
            report.flagged_rows.len(),
            ds.n()
        );
    }
    Ok(report)
}
