//! Observation samples and CSV ingestion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GelError, Result};
use crate::model::MomentModel;

/// n observations of dimension q, stored row-major. P_n is the uniform
/// measure over the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    q: usize,
}

impl Sample {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let q = rows.first().map(Vec::len).unwrap_or(0);
        if n == 0 || q == 0 {
            return Err(GelError::Data("sample is empty".into()));
        }
        let mut data = Vec::with_capacity(n * q);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != q {
                return Err(GelError::Data(format!(
                    "row {i} has {} columns, expected {q}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Self::from_flat(data, q)
    }

    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::from_flat(values.to_vec(), 1)
    }

    pub fn from_flat(data: Vec<f64>, q: usize) -> Result<Self> {
        if q == 0 || data.is_empty() || data.len() % q != 0 {
            return Err(GelError::Data(format!(
                "{} values cannot be split into rows of {q}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GelError::Data(format!(
                "non-finite entry at row {}, column {}",
                pos / q,
                pos % q
            )));
        }
        let n = data.len() / q;
        Ok(Sample { data, n, q })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.q)
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        self.rows().map(|r| r[j]).sum::<f64>() / self.n as f64
    }

    /// Reorders rows by `perm` (row i of the result is row perm[i]).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in perm {
            data.extend_from_slice(self.row(i));
        }
        Sample {
            data,
            n: self.n,
            q: self.q,
        }
    }

    /// Checks the sample against a model: matching observation dimension
    /// and n ≥ k + 1.
    pub fn check_for(&self, model: &MomentModel) -> Result<()> {
        let dims = model.dims();
        if self.q != dims.q {
            return Err(GelError::Data(format!(
                "model '{}' expects {} columns per observation, sample has {}",
                model.name(),
                dims.q,
                self.q
            )));
        }
        if self.n < dims.k + 1 {
            return Err(GelError::Data(format!(
                "sample size {} is below k + 1 = {}",
                self.n,
                dims.k + 1
            )));
        }
        Ok(())
    }
}

/// A column selected by header name or zero-based index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvOptions {
    /// `None` detects a header when the first record has a non-numeric cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<bool>,
    /// Columns forming an observation, in order; all columns when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<ColumnRef>,
}

/// Reads a comma-separated file, one observation per row.
pub fn read_csv(path: &Path, opts: &CsvOptions) -> Result<Sample> {
    let file = std::fs::File::open(path)
        .map_err(|e| GelError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv_from(file, opts).map_err(|e| match e {
        GelError::Data(m) => GelError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_csv_from<R: std::io::Read>(reader: R, opts: &CsvOptions) -> Result<Sample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(false)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| GelError::Data(format!("record {}: {e}", i + 1)))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(GelError::Data("no records".into()));
    }
    let numeric = |s: &str| s.parse::<f64>().is_ok();
    let has_header = opts
        .header
        .unwrap_or_else(|| !records[0].iter().all(numeric));
    let names: Vec<String> = if has_header {
        records[0].iter().map(str::to_owned).collect()
    } else {
        Vec::new()
    };
    let width = records[0].len();
    let selected: Vec<usize> = if opts.columns.is_empty() {
        (0..width).collect()
    } else {
        opts.columns
            .iter()
            .map(|c| match c {
                ColumnRef::Index(j) if *j < width => Ok(*j),
                ColumnRef::Index(j) => Err(GelError::Data(format!(
                    "column index {j} out of range (file has {width} columns)"
                ))),
                ColumnRef::Name(name) => names
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| GelError::Data(format!("no column named '{name}'"))),
            })
            .collect::<Result<_>>()?
    };

    let first = usize::from(has_header);
    let mut data = Vec::with_capacity((records.len() - first) * selected.len());
    for (r, rec) in records.iter().enumerate().skip(first) {
        for &j in &selected {
            let cell = rec.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                GelError::Data(format!(
                    "row {}, column {}: cannot parse '{cell}' as a number",
                    r + 1,
                    j + 1
                ))
            })?;
            data.push(v);
        }
    }
    if data.is_empty() {
        return Err(GelError::Data("no data rows".into()));
    }
    Sample::from_flat(data, selected.len())
}
