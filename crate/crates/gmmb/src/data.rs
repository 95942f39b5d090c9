//! Dataset representation, per-variable bounds, and strict-interiority validation.
//!
//! Every bounded variable must lie strictly inside its declared open support:
//! the transform derivatives diverge at the bounds, so boundary values are
//! rejected unless the caller opts into the boundary nudge.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Declared support of a single variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bound {
    Unbounded,
    /// Open support (lower, +inf).
    LowerBounded { lower: f64 },
    /// Open support (lower, upper).
    DoublyBounded { lower: f64, upper: f64 },
}

impl Bound {
    pub fn check(&self) -> Result<()> {
        match *self {
            Bound::Unbounded => Ok(()),
            Bound::LowerBounded { lower } => {
                if lower.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("lower bound must be finite".into()))
                }
            }
            Bound::DoublyBounded { lower, upper } => {
                if !lower.is_finite() || !upper.is_finite() {
                    Err(Error::InvalidArgument("bounds must be finite".into()))
                } else if lower >= upper {
                    Err(Error::InvalidArgument(format!(
                        "doubly bounded support requires lower < upper, got [{lower}, {upper}]"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Strict interiority test.
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Bound::Unbounded => x.is_finite(),
            Bound::LowerBounded { lower } => x > lower,
            Bound::DoublyBounded { lower, upper } => x > lower && x < upper,
        }
    }
}

/// Per-variable bounds declarations for a d-dimensional dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSpec {
    bounds: Vec<Bound>,
}

impl BoundsSpec {
    pub fn new(bounds: Vec<Bound>) -> Result<Self> {
        for b in &bounds {
            b.check()?;
        }
        Ok(Self { bounds })
    }

    /// All variables unbounded.
    pub fn unbounded(d: usize) -> Self {
        Self {
            bounds: vec![Bound::Unbounded; d],
        }
    }

    /// All variables share the same lower bound.
    pub fn all_lower(d: usize, lower: f64) -> Result<Self> {
        Self::new(vec![Bound::LowerBounded { lower }; d])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn get(&self, j: usize) -> Bound {
        self.bounds[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Bound> {
        self.bounds.iter()
    }
}

/// A single strict-interiority violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Outcome of validating a dataset against its declared bounds.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if let Some(first) = self.violations.first() {
            Err(Error::ValidationFailed {
                n_violations: self.violations.len(),
                first_row: first.row,
                first_col: first.col,
            })
        } else {
            Ok(())
        }
    }
}

/// Immutable n x d matrix of finite observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    column_names: Vec<String>,
}

impl Dataset {
    pub fn new(values: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "dataset must have at least one row and one column".into(),
            ));
        }
        if column_names.len() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} columns",
                column_names.len(),
                values.ncols()
            )));
        }
        if let Some((i, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column {} (missing values are unsupported)",
                i % values.nrows(),
                i / values.nrows()
            )));
        }
        Ok(Self {
            values,
            column_names,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let values = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Self::new(values, column_names)
    }

    /// Univariate dataset from a flat slice.
    pub fn univariate(values: &[f64], name: &str) -> Result<Self> {
        Self::new(
            DMatrix::from_column_slice(values.len(), 1, values),
            vec![name.to_string()],
        )
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Moves observations sitting exactly on a declared bound strictly inside
    /// the support. The offset is 1e-8 * (upper - lower) for doubly bounded
    /// variables and 1e-8 for half-open supports. Returns the nudged cells.
    pub fn nudge_boundary(&mut self, bounds: &BoundsSpec) -> Result<Vec<(usize, usize)>> {
        if bounds.dim() != self.d() {
            return Err(Error::DimensionMismatch(format!(
                "bounds declare {} variables, dataset has {}",
                bounds.dim(),
                self.d()
            )));
        }
        let mut nudged = Vec::new();
        for j in 0..self.d() {
            let (lower, upper, eps) = match bounds.get(j) {
                Bound::Unbounded => continue,
                Bound::LowerBounded { lower } => (lower, f64::INFINITY, 1e-8),
                Bound::DoublyBounded { lower, upper } => (lower, upper, 1e-8 * (upper - lower)),
            };
            for i in 0..self.n() {
                let x = self.values[(i, j)];
                if x == lower {
                    self.values[(i, j)] = lower + eps;
                    nudged.push((i, j));
                } else if x == upper {
                    self.values[(i, j)] = upper - eps;
                    nudged.push((i, j));
                }
            }
        }
        Ok(nudged)
    }
}

/// Lists every cell violating strict interiority with respect to `bounds`.
pub fn validate(data: &Dataset, bounds: &BoundsSpec) -> Result<ValidationReport> {
    if bounds.dim() != data.d() {
        return Err(Error::DimensionMismatch(format!(
            "bounds declare {} variables, dataset has {}",
            bounds.dim(),
            data.d()
        )));
    }
    let mut report = ValidationReport::default();
    for i in 0..data.n() {
        for j in 0..data.d() {
            let x = data.get(i, j);
            if !bounds.get(j).contains(x) {
                report.violations.push(Violation {
                    row: i,
                    col: j,
                    value: x,
                });
            }
        }
    }
    Ok(report)
}

/// Which columns of a CSV file hold the variables to cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSelection {
    /// Every column is numeric and selected.
    All,
    ByName(Vec<String>),
    ByIndex(Vec<usize>),
}

/// A non-selected column kept as raw strings, e.g. class labels used for
/// external evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalColumn {
    pub name: String,
    pub values: Vec<String>,
}

impl CategoricalColumn {
    /// Integer codes for the distinct values, in first-appearance order.
    pub fn codes(&self) -> Vec<usize> {
        let mut levels: Vec<&str> = Vec::new();
        self.values
            .iter()
            .map(|v| {
                if let Some(pos) = levels.iter().position(|l| l == v) {
                    pos
                } else {
                    levels.push(v);
                    levels.len() - 1
                }
            })
            .collect()
    }
}

/// Result of loading a CSV file: the selected numeric variables plus any
/// remaining columns retained as categorical vectors.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub dataset: Dataset,
    pub extra: Vec<CategoricalColumn>,
}

/// Loads a CSV file ('.' decimal separator, `#`-prefixed comment lines
/// skipped), selects the numeric variables, and validates them against
/// `bounds`. Non-selected columns are retained as categorical vectors.
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    has_header: bool,
    bounds: &BoundsSpec,
    selection: &ColumnSelection,
) -> Result<CsvData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path.as_ref())?;

    let headers: Vec<String> = if has_header {
        reader.headers()?.iter().map(|s| s.to_string()).collect()
    } else {
        Vec::new()
    };

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        records.push(rec?);
    }
    if records.is_empty() {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            message: "no data rows".into(),
        });
    }
    let ncols = records[0].len();
    let names: Vec<String> = if has_header {
        headers
    } else {
        (0..ncols).map(|j| format!("V{}", j + 1)).collect()
    };

    let selected: Vec<usize> = match selection {
        ColumnSelection::All => (0..ncols).collect(),
        ColumnSelection::ByIndex(idx) => {
            for &j in idx {
                if j >= ncols {
                    return Err(Error::InvalidArgument(format!(
                        "column index {j} out of range (file has {ncols} columns)"
                    )));
                }
            }
            idx.clone()
        }
        ColumnSelection::ByName(wanted) => {
            let mut idx = Vec::with_capacity(wanted.len());
            for w in wanted {
                match names.iter().position(|n| n == w) {
                    Some(j) => idx.push(j),
                    None => {
                        return Err(Error::InvalidArgument(format!(
                            "column '{w}' not found; available: {}",
                            names.join(", ")
                        )))
                    }
                }
            }
            idx
        }
    };

    let n = records.len();
    let d = selected.len();
    let mut values = DMatrix::zeros(n, d);
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != ncols {
            return Err(Error::Parse {
                row: i,
                col: 0,
                message: format!("expected {ncols} fields, found {}", rec.len()),
            });
        }
        for (jj, &j) in selected.iter().enumerate() {
            let field = &rec[j];
            values[(i, jj)] = field.parse::<f64>().map_err(|e| Error::Parse {
                row: i,
                col: j,
                message: format!("'{field}': {e}"),
            })?;
        }
    }

    let column_names: Vec<String> = selected.iter().map(|&j| names[j].clone()).collect();
    let dataset = Dataset::new(values, column_names)?;
    validate(&dataset, bounds)?;

    let extra = (0..ncols)
        .filter(|j| !selected.contains(j))
        .map(|j| CategoricalColumn {
            name: names[j].clone(),
            values: records.iter().map(|r| r[j].to_string()).collect(),
        })
        .collect();

    Ok(CsvData { dataset, extra })
}
