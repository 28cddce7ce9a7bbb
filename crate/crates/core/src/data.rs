//! Study datasets: trial participants with treatment and outcome, plus
//! non-participants with covariates only.
//!
//! The participation indicator `S` is encoded structurally: a row carries a
//! [`TrialRecord`] if and only if `S = 1`. Treatment and outcome of
//! non-participants are never stored, so no arithmetic can touch them.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Treatment arm `a ∈ {0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    /// Both arms, treated first (the order used for contrasts).
    pub const BOTH: [Arm; 2] = [Arm::Treated, Arm::Control];

    pub fn from_indicator(a: u8) -> Option<Arm> {
        match a {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }

    pub fn indicator(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn index(self) -> usize {
        self.indicator() as usize
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a={}", self.indicator())
    }
}

/// How the trial and the non-randomized individuals were sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Trial data combined with a separately sampled group of non-participants.
    /// Identifies effects among non-participants only.
    #[default]
    NonNested,
    /// Trial embedded in a cohort sampled from the target population.
    Nested,
}

/// Treatment and outcome of a trial participant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub arm: Arm,
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub x: Vec<f64>,
    pub trial: Option<TrialRecord>,
}

impl Row {
    pub fn participant(x: Vec<f64>, arm: Arm, outcome: f64) -> Self {
        Row {
            x,
            trial: Some(TrialRecord { arm, outcome }),
        }
    }

    pub fn non_participant(x: Vec<f64>) -> Self {
        Row { x, trial: None }
    }

    /// Participation indicator `S`.
    pub fn s(&self) -> bool {
        self.trial.is_some()
    }

    pub fn arm(&self) -> Option<Arm> {
        self.trial.map(|t| t.arm)
    }

    pub fn outcome(&self) -> Option<f64> {
        self.trial.map(|t| t.outcome)
    }

    /// `S·I(A = a)`.
    pub fn in_arm(&self, arm: Arm) -> bool {
        self.arm() == Some(arm)
    }
}

/// Rows dropped or altered while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub rows_read: usize,
    /// Rows removed by complete-case filtering.
    pub dropped: usize,
    /// Non-participant rows whose treatment/outcome cells were present and ignored.
    pub ignored_trial_values: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyDataset {
    pub rows: Vec<Row>,
    pub design: Design,
    pub covariate_names: Vec<String>,
    pub load_summary: LoadSummary,
}

impl StudyDataset {
    pub fn new(rows: Vec<Row>, design: Design, covariate_names: Vec<String>) -> Self {
        StudyDataset {
            rows,
            design,
            covariate_names,
            load_summary: LoadSummary::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Number of non-participants, `n₀ = Σ(1 − Sᵢ)`.
    pub fn n_target(&self) -> usize {
        self.rows.iter().filter(|r| !r.s()).count()
    }

    pub fn n_trial(&self) -> usize {
        self.n() - self.n_target()
    }

    pub fn n_arm(&self, arm: Arm) -> usize {
        self.rows.iter().filter(|r| r.in_arm(arm)).count()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Same design and covariates, different rows.
    pub fn with_rows(&self, rows: Vec<Row>) -> StudyDataset {
        StudyDataset {
            rows,
            design: self.design,
            covariate_names: self.covariate_names.clone(),
            load_summary: LoadSummary::default(),
        }
    }

    /// True when every observed outcome is 0 or 1.
    pub fn has_binary_outcome(&self) -> bool {
        let mut any = false;
        for y in self.rows.iter().filter_map(Row::outcome) {
            any = true;
            if y != 0.0 && y != 1.0 {
                return false;
            }
        }
        any
    }

    /// Writes the dataset in the standard CSV schema (`s,a,y,<covariates>`).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["s".to_string(), "a".to_string(), "y".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = Vec::with_capacity(header.len());
            match row.trial {
                Some(t) => {
                    record.push("1".to_string());
                    record.push(t.arm.indicator().to_string());
                    record.push(t.outcome.to_string());
                }
                None => {
                    record.push("0".to_string());
                    record.push(String::new());
                    record.push(String::new());
                }
            }
            record.extend(row.x.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read data file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing schema column `{0}`")]
    MissingColumn(String),
    #[error("non-binary participation indicator at data line {line}: `{value}`")]
    NonBinaryParticipation { line: usize, value: String },
    #[error("non-binary treatment indicator at data line {line}: `{value}`")]
    NonBinaryTreatment { line: usize, value: String },
    #[error("missing participation indicator at data line {line}")]
    MissingParticipation { line: usize },
    #[error("non-numeric value `{value}` in column `{column}` at data line {line}")]
    NonNumeric {
        column: String,
        line: usize,
        value: String,
    },
    #[error("dataset is empty after complete-case filtering")]
    Empty,
}

/// Column-name mapping for CSV ingestion. Names match case-insensitively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub s: String,
    pub a: String,
    pub y: String,
    /// Covariate columns. `None` takes every remaining numeric column.
    pub covariates: Option<Vec<String>>,
    pub exclude: Vec<String>,
    /// Categorical columns expanded into indicator columns (first sorted level is the reference).
    pub one_hot: Vec<String>,
    pub delimiter: char,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            s: "s".into(),
            a: "a".into(),
            y: "y".into(),
            covariates: None,
            exclude: Vec::new(),
            one_hot: Vec::new(),
            delimiter: ',',
        }
    }
}

pub fn load_dataset(path: &Path, schema: &Schema, design: Design) -> Result<StudyDataset, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(file, schema, design)
}

fn find_column(headers: &[String], name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name.trim()))
}

fn parse_number(cell: &str) -> Option<Option<f64>> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        return Some(None);
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
}

enum CovariateSource {
    Numeric(usize),
    Indicator { column: usize, level: String },
}

/// Reads a dataset from any CSV source, applying complete-case filtering.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema, design: Design) -> Result<StudyDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;

    let col = |name: &str| find_column(&headers, name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let s_col = col(&schema.s)?;
    let a_col = col(&schema.a)?;
    let y_col = col(&schema.y)?;

    let is_one_hot = |name: &str| schema.one_hot.iter().any(|c| c.eq_ignore_ascii_case(name));
    let mut warnings = Vec::new();

    let candidate_columns: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| col(n)).collect::<Result<_, _>>()?,
        None => (0..headers.len())
            .filter(|&i| i != s_col && i != a_col && i != y_col)
            .filter(|&i| !schema.exclude.iter().any(|e| e.eq_ignore_ascii_case(&headers[i])))
            .collect(),
    };
    for name in &schema.one_hot {
        col(name)?;
    }

    let mut sources = Vec::new();
    let mut covariate_names = Vec::new();
    for &c in &candidate_columns {
        if is_one_hot(&headers[c]) {
            let levels: BTreeSet<String> = records
                .iter()
                .map(|r| r.get(c).unwrap_or("").trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            for level in levels.into_iter().skip(1) {
                covariate_names.push(format!("{}={}", headers[c], level));
                sources.push(CovariateSource::Indicator { column: c, level });
            }
            continue;
        }
        let non_numeric = records.iter().enumerate().find_map(|(line, r)| {
            let cell = r.get(c).unwrap_or("");
            parse_number(cell).is_none().then(|| (line + 2, cell.to_string()))
        });
        match (non_numeric, &schema.covariates) {
            (None, _) => {
                covariate_names.push(headers[c].clone());
                sources.push(CovariateSource::Numeric(c));
            }
            (Some((line, value)), Some(_)) => {
                return Err(DataError::NonNumeric {
                    column: headers[c].clone(),
                    line,
                    value,
                })
            }
            (Some(_), None) => {
                let msg = format!("column `{}` is not numeric and was not used as a covariate", headers[c]);
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }

    let mut summary = LoadSummary {
        rows_read: records.len(),
        ..LoadSummary::default()
    };
    let mut rows = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let line = i + 2;
        let cell = |c: usize| record.get(c).unwrap_or("").trim();

        let s = match cell(s_col) {
            "" => return Err(DataError::MissingParticipation { line }),
            v => match v.parse::<f64>() {
                Ok(0.0) => false,
                Ok(1.0) => true,
                _ => {
                    return Err(DataError::NonBinaryParticipation {
                        line,
                        value: v.to_string(),
                    })
                }
            },
        };

        let mut x = Vec::with_capacity(sources.len());
        let mut complete = true;
        for source in &sources {
            match source {
                CovariateSource::Numeric(c) => match parse_number(cell(*c)) {
                    Some(Some(v)) => x.push(v),
                    _ => complete = false,
                },
                CovariateSource::Indicator { column, level } => {
                    let v = cell(*column);
                    if v.is_empty() {
                        complete = false;
                    } else {
                        x.push(if v == level { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        if !complete {
            summary.dropped += 1;
            continue;
        }

        if !s {
            if !cell(a_col).is_empty() || !cell(y_col).is_empty() {
                summary.ignored_trial_values += 1;
            }
            rows.push(Row::non_participant(x));
            continue;
        }

        let arm = match cell(a_col) {
            "" => None,
            v => match v.parse::<f64>() {
                Ok(0.0) => Some(Arm::Control),
                Ok(1.0) => Some(Arm::Treated),
                _ => {
                    return Err(DataError::NonBinaryTreatment {
                        line,
                        value: v.to_string(),
                    })
                }
            },
        };
        let outcome = match parse_number(cell(y_col)) {
            Some(v) => v,
            None => {
                return Err(DataError::NonNumeric {
                    column: headers[y_col].clone(),
                    line,
                    value: cell(y_col).to_string(),
                })
            }
        };
        match (arm, outcome) {
            (Some(arm), Some(y)) => rows.push(Row::participant(x, arm, y)),
            _ => summary.dropped += 1,
        }
    }

    if summary.ignored_trial_values > 0 {
        let msg = format!(
            "ignored treatment/outcome values on {} non-participant rows",
            summary.ignored_trial_values
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if summary.dropped > 0 {
        log::info!("complete-case filtering dropped {} rows", summary.dropped);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    summary.warnings = warnings;
    Ok(StudyDataset {
        rows,
        design,
        covariate_names,
        load_summary: summary,
    })
}

/// Row counts by participation and arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub treated: usize,
    pub control: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub name: String,
    pub mean_trial: Option<f64>,
    pub mean_target: Option<f64>,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoTargetSample,
    EmptyTreatedArm,
    EmptyControlArm,
    CovariateLength { row: usize, expected: usize, found: usize },
    NonFiniteCovariate { row: usize, column: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoTargetSample => write!(f, "no target sample"),
            Violation::EmptyTreatedArm => write!(f, "empty treated arm"),
            Violation::EmptyControlArm => write!(f, "empty control arm"),
            Violation::CovariateLength { row, expected, found } => {
                write!(f, "row {row} has {found} covariates, expected {expected}")
            }
            Violation::NonFiniteCovariate { row, column } => {
                write!(f, "row {row} has a non-finite value in covariate {column}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub counts: ArmCounts,
    pub covariates: Vec<CovariateSummary>,
    pub violations: Vec<Violation>,
    /// Conditions worth knowing about that are not invariant violations.
    pub warnings: Vec<String>,
}

impl StructureReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_structure(ds: &StudyDataset) -> StructureReport {
    let counts = ArmCounts {
        treated: ds.n_arm(Arm::Treated),
        control: ds.n_arm(Arm::Control),
        target: ds.n_target(),
    };
    let mut violations = Vec::new();
    if counts.target == 0 {
        violations.push(Violation::NoTargetSample);
    }
    if counts.treated == 0 {
        violations.push(Violation::EmptyTreatedArm);
    }
    if counts.control == 0 {
        violations.push(Violation::EmptyControlArm);
    }
    let p = ds.covariate_names.len();
    for (i, row) in ds.rows.iter().enumerate() {
        if row.x.len() != p {
            violations.push(Violation::CovariateLength {
                row: i,
                expected: p,
                found: row.x.len(),
            });
        } else if let Some(column) = row.x.iter().position(|v| !v.is_finite()) {
            violations.push(Violation::NonFiniteCovariate { row: i, column });
        }
    }

    let covariates = ds
        .covariate_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut trial = (0.0, 0usize);
            let mut target = (0.0, 0usize);
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for row in ds.rows.iter().filter(|r| r.x.len() == p) {
                let v = row.x[j];
                min = min.min(v);
                max = max.max(v);
                let acc = if row.s() { &mut trial } else { &mut target };
                acc.0 += v;
                acc.1 += 1;
            }
            let mean = |(sum, k): (f64, usize)| (k > 0).then(|| sum / k as f64);
            CovariateSummary {
                name: name.clone(),
                mean_trial: mean(trial),
                mean_target: mean(target),
                min,
                max,
            }
        })
        .collect();

    let mut warnings = ds.load_summary.warnings.clone();
    if ds.has_binary_outcome() {
        warnings.push(
            "outcome is binary; additive bias corrections suit continuous outcomes with unbounded support".into(),
        );
    }

    StructureReport {
        counts,
        covariates,
        violations,
        warnings,
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub const D6_CSV: &str = "s,a,y\n1,1,10\n1,1,14\n1,0,6\n1,0,8\n0,,\n0,,\n";

    /// Six rows, no covariates: two treated (10, 14), two controls (6, 8), two non-participants.
    pub fn d6(design: Design) -> StudyDataset {
        let rows = vec![
            Row::participant(vec![], Arm::Treated, 10.0),
            Row::participant(vec![], Arm::Treated, 14.0),
            Row::participant(vec![], Arm::Control, 6.0),
            Row::participant(vec![], Arm::Control, 8.0),
            Row::non_participant(vec![]),
            Row::non_participant(vec![]),
        ];
        StudyDataset::new(rows, design, vec![])
    }

    /// Eighty deterministic rows with covariates `x1` (continuous) and `x2` (three levels).
    pub fn sample(design: Design) -> StudyDataset {
        let mut rows = Vec::new();
        for i in 0..80 {
            let x1 = ((i * 7) % 13) as f64 / 6.0 - 1.0;
            let x2 = ((i * 7 + i / 3) % 3) as f64;
            let x = vec![x1, x2];
            if i % 3 == 0 {
                rows.push(Row::non_participant(x));
            } else {
                let arm = if (i * 11) % 4 < 2 { Arm::Treated } else { Arm::Control };
                let shift = if arm == Arm::Treated { 2.0 } else { 0.0 };
                let y = 1.0 + x1 - 0.5 * x2 + shift + ((i * 3) % 5) as f64 * 0.3;
                rows.push(Row::participant(x, arm, y));
            }
        }
        StudyDataset::new(rows, design, vec!["x1".into(), "x2".into()])
    }
}
