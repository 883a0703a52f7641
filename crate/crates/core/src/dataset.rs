//! The Big Dataset: `N` rows of covariates plus an optional response.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{OdbError, Result};

/// An `N × p` covariate table with an optional response column.
///
/// Covariates are shared behind an `Arc`, so attaching a fresh response
/// (as the simulation harness does once per replication) does not copy
/// the table.
#[derive(Debug, Clone)]
pub struct Dataset {
    n_rows: usize,
    dim: usize,
    covariates: Arc<[f64]>,
    response: Option<Arc<[f64]>>,
    covariate_names: Vec<String>,
    response_name: Option<String>,
}

impl Dataset {
    /// Builds a dataset from row-major covariates.
    pub fn from_flat(
        n_rows: usize,
        dim: usize,
        covariates: Vec<f64>,
        response: Option<Vec<f64>>,
    ) -> Result<Self> {
        if n_rows == 0 {
            return Err(OdbError::InvalidInput("dataset has no rows".into()));
        }
        if dim == 0 {
            return Err(OdbError::InvalidInput("dataset has no covariates".into()));
        }
        if covariates.len() != n_rows * dim {
            return Err(OdbError::DimensionMismatch {
                expected: n_rows * dim,
                got: covariates.len(),
            });
        }
        if let Some(i) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(OdbError::InvalidInput(format!(
                "non-finite covariate at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        if let Some(y) = &response {
            if y.len() != n_rows {
                return Err(OdbError::DimensionMismatch {
                    expected: n_rows,
                    got: y.len(),
                });
            }
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(OdbError::InvalidInput(format!(
                    "non-finite response at row {i}"
                )));
            }
        }
        Ok(Dataset {
            n_rows,
            dim,
            covariates: covariates.into(),
            response_name: response.as_ref().map(|_| "y".to_string()),
            response: response.map(Into::into),
            covariate_names: (1..=dim).map(|j| format!("x{j}")).collect(),
        })
    }

    /// Builds a dataset from a slice of covariate rows.
    pub fn from_rows(rows: &[Vec<f64>], response: Option<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(OdbError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::from_flat(rows.len(), dim, flat, response)
    }

    pub fn with_names(mut self, covariates: Vec<String>, response: Option<String>) -> Result<Self> {
        if covariates.len() != self.dim {
            return Err(OdbError::DimensionMismatch {
                expected: self.dim,
                got: covariates.len(),
            });
        }
        self.covariate_names = covariates;
        if self.response.is_some() {
            self.response_name = response.or(self.response_name);
        }
        Ok(self)
    }

    /// Same covariates, new response vector.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Self> {
        if response.len() != self.n_rows {
            return Err(OdbError::DimensionMismatch {
                expected: self.n_rows,
                got: response.len(),
            });
        }
        Ok(Dataset {
            response: Some(response.into()),
            response_name: self.response_name.clone().or_else(|| Some("y".into())),
            ..self.clone()
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Number of covariates `p`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.covariates.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    pub fn response(&self) -> Option<&[f64]> {
        self.response.as_deref()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn response_name(&self) -> Option<&str> {
        self.response_name.as_deref()
    }

    /// All `p + 1` column labels, response first when present.
    pub fn column_names(&self) -> Vec<String> {
        self.response_name
            .iter()
            .cloned()
            .chain(self.covariate_names.iter().cloned())
            .collect()
    }

    /// The rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_rows) {
            return Err(OdbError::InvalidInput(format!(
                "row index {bad} out of range for {} rows",
                self.n_rows
            )));
        }
        let flat = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        let response = self
            .response
            .as_ref()
            .map(|y| indices.iter().map(|&i| y[i]).collect());
        Self::from_flat(indices.len(), self.dim, flat, response)?
            .with_names(self.covariate_names.clone(), self.response_name.clone())
    }

    /// Reads a CSV file with a mandatory header row. `response` names the
    /// response column; every other column is a covariate.
    pub fn read_csv(path: &Path, response: Option<&str>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
        })?;
        Self::read_csv_from(file, path, response)
    }

    pub fn read_csv_from<R: Read>(reader: R, path: &Path, response: Option<&str>) -> Result<Self> {
        let csv_err = |line: usize, message: String| OdbError::Csv {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| csv_err(1, e.to_string()))?
            .clone();
        let names: Vec<String> = headers.iter().map(str::to_string).collect();
        let response_col = match response {
            Some(name) => Some(
                names
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| csv_err(1, format!("no column named `{name}`")))?,
            ),
            None => None,
        };
        let covariate_cols: Vec<usize> =
            (0..names.len()).filter(|&c| Some(c) != response_col).collect();
        if covariate_cols.is_empty() {
            return Err(csv_err(1, "no covariate columns".into()));
        }

        let mut flat = Vec::new();
        let mut y = Vec::new();
        let mut n_rows = 0;
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| csv_err(line, e.to_string()))?;
            if record.len() != names.len() {
                return Err(csv_err(
                    line,
                    format!("expected {} fields, found {}", names.len(), record.len()),
                ));
            }
            let parse = |c: usize| -> Result<f64> {
                let cell = &record[c];
                let v: f64 = cell.parse().map_err(|_| {
                    csv_err(line, format!("column `{}`: cannot parse `{cell}`", names[c]))
                })?;
                if !v.is_finite() {
                    return Err(csv_err(line, format!("column `{}`: non-finite value", names[c])));
                }
                Ok(v)
            };
            for &c in &covariate_cols {
                flat.push(parse(c)?);
            }
            if let Some(c) = response_col {
                y.push(parse(c)?);
            }
            n_rows += 1;
        }
        if n_rows == 0 {
            return Err(csv_err(2, "no data rows".into()));
        }
        let ds = Self::from_flat(n_rows, covariate_cols.len(), flat, response_col.map(|_| y))?;
        ds.with_names(
            covariate_cols.iter().map(|&c| names[c].clone()).collect(),
            response_col.map(|c| names[c].clone()),
        )
    }

    /// Writes the dataset (response first, when present) as CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.column_names())
            .map_err(|e| OdbError::Io(e.into()))?;
        for i in 0..self.n_rows {
            let mut rec: Vec<String> = Vec::with_capacity(self.dim + 1);
            if let Some(y) = &self.response {
                rec.push(y[i].to_string());
            }
            rec.extend(self.row(i).iter().map(f64::to_string));
            wtr.write_record(&rec).map_err(|e| OdbError::Io(e.into()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}
