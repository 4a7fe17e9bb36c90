//! File formats: dataset CSV, prior JSON, design JSON and report CSV.
//!
//! Dataset CSV: first row holds the dimension labels, each following row is
//! one sample, so a file with N samples of an n-dimensional configuration
//! has N + 1 rows of n comma-separated fields.
//!
//! Prior JSON: `{"labels": [...], "mean": [...], "cov": [[...], ...]}` with
//! a row-major nested covariance. Extra fields (such as the config echo the
//! CLI adds) are ignored on import.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{DesignMode, MeasurementDesign};
use crate::flow::DesignResult;
use crate::harness::{CurveReport, ErrorReport};
use crate::prior::{AngleUnits, PoseDataset, PriorModel};

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

/// Read a dataset CSV (labels row, then one sample per row) into a dataset
/// with one dimension per row.
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<PoseDataset> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let labels: Vec<String> = csv_reader
        .headers()
        .map_err(|e| parse_error(1, 1, e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let n = labels.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in csv_reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| parse_error(line, 1, e.to_string()))?;
        if record.len() != n {
            return Err(parse_error(line, record.len(), format!("expected {n} fields, found {}", record.len())));
        }
        let mut row = Vec::with_capacity(n);
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field
                .parse()
                .map_err(|_| parse_error(line, col + 1, format!("invalid number '{field}'")))?;
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(2, 1, "no sample rows"));
    }
    // The file is samples x dimensions; the dataset stores dimensions x samples.
    let samples = DMatrix::from_fn(n, rows.len(), |dim, sample| rows[sample][dim]);
    PoseDataset::new(labels, samples, AngleUnits::Degrees)
}

pub fn read_dataset_csv_path(path: &Path) -> Result<PoseDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidData(format!("cannot open {}: {e}", path.display())))?;
    read_dataset_csv(std::io::BufReader::new(file))
}

/// Write poses (one per column) in the dataset CSV layout.
pub fn write_poses_csv<W: Write>(writer: W, labels: &[String], poses: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(labels).map_err(|e| Error::InvalidData(e.to_string()))?;
    for col in 0..poses.ncols() {
        let record: Vec<String> = (0..poses.nrows()).map(|row| poses[(row, col)].to_string()).collect();
        w.write_record(&record).map_err(|e| Error::InvalidData(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::InvalidData(e.to_string()))?;
    Ok(())
}

/// Read a headerless numeric CSV of measurement rows; every row must have
/// `m` fields.
pub fn read_measurements_csv<R: Read>(reader: R, m: usize) -> Result<DMatrix<f64>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in csv_reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| parse_error(line, 1, e.to_string()))?;
        if record.len() != m {
            return Err(parse_error(line, record.len(), format!("expected {m} fields, found {}", record.len())));
        }
        let mut row = Vec::with_capacity(m);
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field
                .parse()
                .map_err(|_| parse_error(line, col + 1, format!("invalid number '{field}'")))?;
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(1, 1, "no measurement rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]))
}

/// JSON schema of a prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorJson {
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl PriorJson {
    pub fn from_model(prior: &PriorModel) -> Self {
        let n = prior.dims();
        Self {
            labels: prior.labels().to_vec(),
            mean: prior.mean().iter().copied().collect(),
            cov: (0..n).map(|i| (0..n).map(|j| prior.cov()[(i, j)]).collect()).collect(),
            config: None,
        }
    }

    pub fn into_model(self) -> Result<PriorModel> {
        let n = self.mean.len();
        if self.cov.len() != n || self.cov.iter().any(|row| row.len() != n) {
            return Err(Error::ShapeError(format!("covariance rows do not form an {n}x{n} matrix")));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| self.cov[i][j]);
        PriorModel::new(self.labels, DVector::from_vec(self.mean), cov)
    }
}

/// Row-major matrix payload with explicit dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { rows, cols, data }
    }

    pub fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::ShapeError(format!(
                "matrix payload has {} entries for {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Solver diagnostics embedded in a design file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsJson {
    pub iterations: usize,
    pub starts: usize,
    pub k_final: f64,
    pub constraint_violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounding_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<String>,
}

/// JSON schema of a computed design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignJson {
    pub mode: String,
    pub m: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub md: Option<usize>,
    #[serde(rename = "H")]
    pub h: MatrixJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_indices: Option<Vec<usize>>,
    pub v1: f64,
    pub diagnostics: DiagnosticsJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl DesignJson {
    pub fn new(design: &MeasurementDesign, v1: f64, diagnostics: DiagnosticsJson) -> Self {
        let measured = design.measured_coordinates();
        Self {
            mode: design.mode().as_str().into(),
            m: design.rows(),
            mc: design.split().map(|(mc, _)| mc),
            md: design.split().map(|(_, md)| md),
            h: MatrixJson::from_matrix(design.matrix()),
            selected_indices: (!measured.is_empty()).then_some(measured),
            v1,
            diagnostics,
            config: None,
        }
    }

    pub fn from_result(result: &DesignResult, starts: usize) -> Self {
        Self::new(
            &result.design,
            result.v1,
            DiagnosticsJson {
                iterations: result.iterations,
                starts,
                k_final: result.k_final,
                constraint_violation: result.constraint_violation,
                rounding_residual: result.rounding_residual,
                termination: Some(result.termination.as_str().into()),
            },
        )
    }

    pub fn into_design(self) -> Result<MeasurementDesign> {
        let mode = match self.mode.as_str() {
            "continuous" => DesignMode::Continuous,
            "discrete" => DesignMode::Discrete,
            "hybrid" => DesignMode::Hybrid,
            other => return Err(Error::ModeError(format!("unknown design mode '{other}'"))),
        };
        let split = match (mode, self.mc, self.md) {
            (DesignMode::Hybrid, Some(mc), Some(md)) => Some((mc, md)),
            (DesignMode::Hybrid, _, _) => {
                return Err(Error::ModeError("hybrid design file is missing its mc/md split".into()))
            }
            _ => None,
        };
        MeasurementDesign::new(self.h.into_matrix()?, mode, split)
    }
}

/// Write the per-coordinate table of a report in the layout used by the
/// result tables: one row per coordinate with mean, std and max columns and
/// `--` marking directly measured coordinates.
pub fn write_report_csv<W: Write>(writer: W, report: &ErrorReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dof", "mean_abs_error", "std", "max_abs_error"])
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    for dof in &report.per_dof {
        let fmt = |v: Option<f64>| v.map_or("--".to_string(), |x| x.to_string());
        w.write_record([dof.label.as_str(), &fmt(dof.mean_abs), &fmt(dof.std), &fmt(dof.max_abs)])
            .map_err(|e| Error::InvalidData(e.to_string()))?;
    }
    w.write_record([
        "aggregate",
        &report.aggregate.mean.to_string(),
        &report.aggregate.std.to_string(),
        &report.aggregate.max.to_string(),
    ])
    .map_err(|e| Error::InvalidData(e.to_string()))?;
    w.flush().map_err(|e| Error::InvalidData(e.to_string()))?;
    Ok(())
}

/// Write a curve report as plot-ready CSV: one row per sensor count, one
/// column per mode (plus the reduction column when present).
pub fn write_curve_csv<W: Write>(writer: W, report: &CurveReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["m".to_string()];
    header.extend(report.curves.iter().map(|c| format!("v1_{}", c.mode)));
    if report.reduction.is_some() {
        header.push("reduction_continuous".into());
    }
    w.write_record(&header).map_err(|e| Error::InvalidData(e.to_string()))?;
    for (j, &m) in report.m_values.iter().enumerate() {
        let mut record = vec![m.to_string()];
        record.extend(report.curves.iter().map(|c| c.v1[j].to_string()));
        if let Some(reduction) = &report.reduction {
            record.push(reduction[j].to_string());
        }
        w.write_record(&record).map_err(|e| Error::InvalidData(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::InvalidData(e.to_string()))?;
    Ok(())
}
