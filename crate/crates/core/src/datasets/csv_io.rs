//! Headerless numeric CSV: one row per example, one column holds the 1-based label.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelColumn {
    /// 0-based column index.
    Index(usize),
    Last,
}

fn csv_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Csv { path: path.into(), detail: detail.into() }
}

pub fn load_csv(path: &Path, label_column: LabelColumn, k: Option<usize>) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e.to_string()))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e.to_string()))?;
        let cols = record.len();
        if cols < 2 {
            return Err(csv_err(path, format!("row {}: need a label and at least one feature", line + 1)));
        }
        if *width.get_or_insert(cols) != cols {
            return Err(csv_err(path, format!("row {}: {cols} columns, expected {}", line + 1, width.unwrap())));
        }
        let label_at = match label_column {
            LabelColumn::Last => cols - 1,
            LabelColumn::Index(i) if i < cols => i,
            LabelColumn::Index(i) => return Err(csv_err(path, format!("label column {i} out of range"))),
        };
        for (j, field) in record.iter().enumerate() {
            if j == label_at {
                let y: usize = field
                    .parse()
                    .map_err(|_| csv_err(path, format!("row {}: label '{field}' is not a positive integer", line + 1)))?;
                labels.push(y);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| csv_err(path, format!("row {}: '{field}' is not a number", line + 1)))?;
                features.push(v);
            }
        }
    }
    let width = width.ok_or_else(|| csv_err(path, "no rows"))?;
    let max = labels.iter().copied().max().unwrap_or(1).max(2);
    let k = k.unwrap_or(max);
    let source = path.file_name().map_or("csv".into(), |f| f.to_string_lossy().into_owned());
    LabeledDataset::new(features, labels, k, width - 1, source)
}

/// Writes features followed by the label in the last column.
pub fn save_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_err(path, e.to_string()))?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.label(i).to_string());
        writer.write_record(&row).map_err(|e| csv_err(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = LabeledDataset::new(vec![0.1, -2.5, 3.0, 1e-7], vec![2, 1], 3, 2, "x").unwrap();
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, LabelColumn::Last, Some(3)).unwrap();
        assert_eq!(back.features(), ds.features());
        assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn label_in_first_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "3, 0.5, 1\n1, 2, 3\n").unwrap();
        let ds = load_csv(&path, LabelColumn::Index(0), None).unwrap();
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(ds.k(), 3);
        assert_eq!(ds.row(1), &[2.0, 3.0]);
    }

    #[test]
    fn malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "0.5,1\n1,2,3\n").unwrap();
        assert!(matches!(load_csv(&path, LabelColumn::Last, None), Err(Error::Csv { .. })));
        std::fs::write(&path, "0.5,abc\n").unwrap();
        assert!(matches!(load_csv(&path, LabelColumn::Last, None), Err(Error::Csv { .. })));
        std::fs::write(&path, "abc,1\n").unwrap();
        assert!(matches!(load_csv(&path, LabelColumn::Last, None), Err(Error::Csv { .. })));
        std::fs::write(&path, "0.5,0\n").unwrap();
        assert!(matches!(load_csv(&path, LabelColumn::Last, None), Err(Error::Invariant(_))));
    }
}
