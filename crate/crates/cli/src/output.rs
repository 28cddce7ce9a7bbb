use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;
use transport_core::sensitivity::GridMetadata;
use transport_core::{Crossing, Design, SensitivityGridResult, Target};

use crate::error::CliError;

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub estimator: String,
    pub target: String,
    pub estimand: String,
    pub u0: f64,
    pub delta: f64,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub method: String,
}

#[cfg(test)]
const CSV_COLUMNS: [&str; 10] = [
    "estimator", "target", "estimand", "u0", "delta", "estimate", "se", "ci_lo", "ci_hi", "method",
];

pub fn rows(result: &SensitivityGridResult) -> Vec<ResultRow> {
    result
        .cells
        .iter()
        .flat_map(|cell| {
            cell.records.iter().map(move |r| ResultRow {
                estimator: r.estimator.name().to_string(),
                target: r.target.name().to_string(),
                estimand: r.estimand.name().to_string(),
                u0: cell.u0,
                delta: cell.delta,
                estimate: r.point,
                se: r.se,
                ci_lo: r.ci.map(|c| c.0),
                ci_hi: r.ci.map(|c| c.1),
                method: r.method.name().to_string(),
            })
        })
        .collect()
}

pub fn csv_bytes(rows: &[ResultRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::usage("output", e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::usage("output", e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub command: String,
    pub design: Design,
    pub target: Target,
    pub rows: Vec<ResultRow>,
    /// Per estimator, one entry per `u0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossings: Option<BTreeMap<String, Vec<Crossing>>>,
    pub modulation: Vec<String>,
    pub metadata: GridMetadata,
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::usage("output", e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Files staged in memory and written together once computation is done.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    /// Writes every file to a temporary sibling, then renames them into place.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(dir);
            let mut tmp = NamedTempFile::new_in(parent).map_err(|e| CliError::io(parent, e))?;
            tmp.write_all(&bytes).map_err(|e| CliError::io(tmp.path(), e))?;
            tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
            staged.push((tmp, path));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, path) in staged {
            tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(se: Option<f64>) -> ResultRow {
        ResultRow {
            estimator: "OM".into(),
            target: "non_randomized".into(),
            estimand: "ATE".into(),
            u0: -40.0,
            delta: 20.0,
            estimate: 0.1 + 0.2,
            se,
            ci_lo: se.map(|s| -s),
            ci_hi: se,
            method: "sandwich".into(),
        }
    }

    #[test]
    fn csv_header_and_empty_fields() {
        let bytes = csv_bytes(&[row(None)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "OM,non_randomized,ATE,-40.0,20.0,0.30000000000000004,,,,sandwich");
    }

    #[test]
    fn csv_round_trips_exactly() {
        let original = vec![row(Some(1.0 / 3.0)), row(None)];
        let bytes = csv_bytes(&original).unwrap();
        let back: Vec<ResultRow> = csv::Reader::from_reader(bytes.as_slice())
            .deserialize()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, original);
    }

    #[test]
    fn commit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::default();
        out.add(dir.path().join("a.txt"), b"one".to_vec());
        out.add(dir.path().join("b.txt"), b"two".to_vec());
        let written = out.commit(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(std::fs::read(dir.path().join("b.txt")).unwrap(), b"two");
        let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 2);
    }
}
