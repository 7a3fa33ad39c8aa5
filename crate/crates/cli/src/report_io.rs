//! Report CSV and summary JSON.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rbm_gradlab::{aggregate, AggregateRow, ReportRow, Strategy};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const REPORT_COLUMNS: [&str; 8] = [
    "dataset",
    "init_seed",
    "epoch",
    "strategy",
    "k",
    "mean_variance",
    "baseline_mean_variance",
    "ratio",
];

pub fn report_csv_bytes(rows: &[ReportRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::Data(format!("cannot encode report row: {e}")))?;
    }
    if rows.is_empty() {
        w.write_record(REPORT_COLUMNS)
            .map_err(|e| CliError::Data(format!("cannot encode report header: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Data(format!("cannot encode report: {e}")))
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), CliError> {
    fs::write(path, report_csv_bytes(rows)?).map_err(|e| CliError::io(path, e))
}

/// Reads a report CSV, rejecting any header that differs from
/// [`REPORT_COLUMNS`].
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != REPORT_COLUMNS {
        let missing: Vec<&str> = REPORT_COLUMNS
            .iter()
            .copied()
            .filter(|c| !header.iter().any(|h| h == c))
            .collect();
        let extra: Vec<&str> = header
            .iter()
            .map(String::as_str)
            .filter(|h| !REPORT_COLUMNS.contains(h))
            .collect();
        return Err(CliError::Data(format!(
            "{}: report header does not match the schema; expected [{}], found [{}]; missing {missing:?}, unexpected {extra:?}",
            path.display(),
            REPORT_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<ReportRow>().enumerate() {
        let row = rec
            .map_err(|e| CliError::Data(format!("{}: data row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<AggregateRow>,
    pub warnings: Vec<String>,
}

/// Aggregates `rows`, keeping only `strategies` unless it is empty. With
/// `n_inits` unset, the number of distinct init seeds is expected.
pub fn summarize(
    rows: &[ReportRow],
    strategies: &[Strategy],
    n_inits: Option<usize>,
) -> Result<Summary, CliError> {
    let kept: Vec<ReportRow> = rows
        .iter()
        .filter(|r| strategies.is_empty() || strategies.contains(&r.strategy))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(CliError::Data(
            "no report rows match the requested strategies".into(),
        ));
    }
    let n_inits = n_inits.unwrap_or_else(|| {
        kept.iter()
            .map(|r| r.init_seed)
            .collect::<BTreeSet<_>>()
            .len()
    });
    let cells = aggregate(&kept, n_inits)?;
    let mut warnings = Vec::new();
    if cells.iter().any(|c| c.single_init) {
        warnings.push("only one init per cell; std_ratio is reported as 0".to_string());
    }
    Ok(Summary { cells, warnings })
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, strategy: Strategy, k: usize, ratio: f64) -> ReportRow {
        ReportRow {
            dataset: "d".into(),
            init_seed: seed,
            epoch: 10,
            strategy,
            k,
            mean_variance: ratio * 2.0,
            baseline_mean_variance: 2.0,
            ratio,
        }
    }

    #[test]
    fn header_is_exact_and_rows_round_trip() {
        let rows = vec![row(1, Strategy::Cd, 1, 0.5), row(2, Strategy::Icd, 3, 1.25)];
        let bytes = report_csv_bytes(&rows).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with(
            "dataset,init_seed,epoch,strategy,k,mean_variance,baseline_mean_variance,ratio\n"
        ));
        assert!(text.contains("d,2,10,icd,3,2.5,2.0,1.25\n"), "{text}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report(&path, &rows).unwrap();
        assert_eq!(read_report(&path).unwrap(), rows);
    }

    #[test]
    fn empty_report_still_has_header() {
        let text = String::from_utf8(report_csv_bytes(&[]).unwrap()).unwrap();
        assert_eq!(text.trim_end(), REPORT_COLUMNS.join(","));
    }

    #[test]
    fn schema_violation_names_the_difference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(
            &path,
            "dataset,init_seed,epoch,strategy,k,variance,ratio\nd,1,10,cd,1,0.1,0.5\n",
        )
        .unwrap();
        let err = read_report(&path).unwrap_err().to_string();
        assert!(
            err.contains("mean_variance") && err.contains("\"variance\""),
            "{err}"
        );
    }

    #[test]
    fn strategy_filter() {
        let rows = vec![row(1, Strategy::Cd, 1, 0.5), row(1, Strategy::Pcd, 1, 2.0)];
        let all = summarize(&rows, &[], None).unwrap();
        assert_eq!(all.cells.len(), 2);
        assert_eq!(all.warnings.len(), 1);
        let pcd = summarize(&rows, &[Strategy::Pcd], None).unwrap();
        assert_eq!(pcd.cells.len(), 1);
        assert_eq!(pcd.cells[0].strategy, Strategy::Pcd);
        assert!(summarize(&rows, &[Strategy::Icd], None).is_err());
    }
}
