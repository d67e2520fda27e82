use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{csv_err, ensure_parent, fmt_float, read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TransferAccuracy,
    NormDrop,
    PwccaDistance,
}

/// Where a cell's number came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CellProvenance {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probe: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub projector: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slice: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// A labeled matrix of per-task quantities. Undefined cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMatrix {
    pub metric: Metric,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub provenance: Vec<Vec<CellProvenance>>,
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    metric: Metric,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    /// `null` marks an undefined cell.
    values: Vec<Vec<Option<f64>>>,
    provenance: Vec<Vec<CellProvenance>>,
}

impl TaskMatrix {
    /// Builds from row-major cells.
    pub fn from_cells(
        metric: Metric,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        cells: Vec<(f64, CellProvenance)>,
    ) -> Result<Self> {
        for labels in [&row_labels, &col_labels] {
            let set: BTreeSet<&String> = labels.iter().collect();
            if set.len() != labels.len() {
                return Err(Error::InvalidArgument(format!("duplicate matrix labels in {labels:?}")));
            }
        }
        let (r, c) = (row_labels.len(), col_labels.len());
        if cells.len() != r * c {
            return Err(Error::dims(r * c, cells.len(), "matrix cells"));
        }
        let mut values = vec![Vec::with_capacity(c); r];
        let mut provenance = vec![Vec::with_capacity(c); r];
        for (k, (v, p)) in cells.into_iter().enumerate() {
            values[k / c].push(v);
            provenance[k / c].push(p);
        }
        Ok(TaskMatrix {
            metric,
            row_labels,
            col_labels,
            values,
            provenance,
        })
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.row_labels.iter().position(|l| l == row)?;
        let j = self.col_labels.iter().position(|l| l == col)?;
        Some(self.values[i][j])
    }

    /// `row_label,<col labels...>` header, then one line per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let corner = match self.metric {
            Metric::TransferAccuracy => "data_task\\probe",
            Metric::NormDrop => "probe_task\\ablated_by",
            Metric::PwccaDistance => "task",
        };
        let header = std::iter::once(corner.to_string()).chain(self.col_labels.iter().cloned());
        w.write_record(header).map_err(|e| csv_err(path, e))?;
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            let rec = std::iter::once(label.clone()).chain(row.iter().map(|v| fmt_float(*v)));
            w.write_record(rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| crate::error::Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let j = MatrixJson {
            metric: self.metric,
            row_labels: self.row_labels.clone(),
            col_labels: self.col_labels.clone(),
            values: self
                .values
                .iter()
                .map(|r| r.iter().map(|v| (!v.is_nan()).then_some(*v)).collect())
                .collect(),
            provenance: self.provenance.clone(),
        };
        write_json(path, &j)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let j: MatrixJson = read_json(path, "task matrix")?;
        Ok(TaskMatrix {
            metric: j.metric,
            row_labels: j.row_labels,
            col_labels: j.col_labels,
            values: j
                .values
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
                .collect(),
            provenance: j.provenance,
        })
    }
}
