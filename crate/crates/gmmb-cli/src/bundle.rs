//! Serialized fit artifacts: the machine-readable summary and the
//! per-observation table. Numbers are written with Rust's shortest
//! round-trip formatting, so files re-parse to the in-memory values exactly.

use gmmb::data::Bound;
use gmmb::mixture::CovarianceFactors;
use gmmb::{BoundsSpec, Dataset, FitResult, MixtureParams, ModelCode, TransformParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundOut {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl From<Bound> for BoundOut {
    fn from(b: Bound) -> Self {
        match b {
            Bound::Unbounded => BoundOut {
                lower: None,
                upper: None,
            },
            Bound::LowerBounded { lower } => BoundOut {
                lower: Some(lower),
                upper: None,
            },
            Bound::DoublyBounded { lower, upper } => BoundOut {
                lower: Some(lower),
                upper: Some(upper),
            },
        }
    }
}

impl BoundOut {
    pub fn to_bound(&self) -> Bound {
        match (self.lower, self.upper) {
            (Some(l), Some(u)) => Bound::DoublyBounded { lower: l, upper: u },
            (Some(l), None) => Bound::LowerBounded { lower: l },
            _ => Bound::Unbounded,
        }
    }
}

/// Everything needed to report a fit and to re-evaluate the fitted model
/// (density grids, profiles, classification of new rows).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub model: String,
    pub g: usize,
    pub n: usize,
    pub columns: Vec<String>,
    pub bounds: Vec<BoundOut>,
    pub lambda: Vec<f64>,
    pub lambda_fixed: Vec<bool>,
    pub weights: Vec<f64>,
    /// per-component mean vectors on the transformed scale
    pub means: Vec<Vec<f64>>,
    /// per-component covariance matrices on the transformed scale (row-major)
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub df: usize,
    pub bic: f64,
    pub icl: f64,
    pub nec: f64,
    pub entropy_total: f64,
    pub converged: bool,
    pub n_iter: usize,
    pub seed: u64,
    /// marginal data means on the original scale
    pub data_means: Vec<f64>,
}

impl Summary {
    pub fn build(
        r: &FitResult,
        data: &Dataset,
        bounds: &BoundsSpec,
        seed: u64,
    ) -> Self {
        let d = data.d();
        let data_means = (0..d).map(|j| data.values().column(j).mean()).collect();
        Summary {
            model: r.params.model.to_string(),
            g: r.params.g(),
            n: data.n(),
            columns: data.column_names().to_vec(),
            bounds: bounds.iter().map(|&b| BoundOut::from(b)).collect(),
            lambda: r.tparams.lambda.clone(),
            lambda_fixed: r.tparams.fixed.clone(),
            weights: r.params.weights.clone(),
            means: r.params.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: (0..r.params.g())
                .map(|k| {
                    let s = r.params.cov.sigma(k);
                    (0..d)
                        .map(|i| (0..d).map(|j| s[(i, j)]).collect())
                        .collect()
                })
                .collect(),
            loglik: r.loglik,
            df: r.df,
            bic: r.bic,
            icl: r.icl,
            nec: r.nec,
            entropy_total: r.entropy_total,
            converged: r.converged,
            n_iter: r.n_iter,
            seed,
            data_means,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn bounds_spec(&self) -> Result<BoundsSpec, CliError> {
        BoundsSpec::new(self.bounds.iter().map(|b| b.to_bound()).collect()).map_err(CliError::from)
    }

    pub fn transform_params(&self) -> TransformParams {
        TransformParams {
            lambda: self.lambda.clone(),
            fixed: self.lambda_fixed.clone(),
        }
    }

    pub fn mixture_params(&self) -> Result<MixtureParams, CliError> {
        let d = self.columns.len();
        let model = ModelCode::from_str(&self.model)
            .map_err(|_| CliError::config(format!("summary names unknown model {:?}", self.model)))?;
        let sigmas = self
            .covariances
            .iter()
            .map(|m| DMatrix::from_fn(d, d, |i, j| m[i][j]))
            .collect();
        let cov = CovarianceFactors::from_covariances(sigmas)?;
        let means = self
            .means
            .iter()
            .map(|m| DVector::from_column_slice(m))
            .collect();
        Ok(MixtureParams::new(self.weights.clone(), means, cov, model)?)
    }
}

/// Writes via a temporary file in the destination directory followed by an
/// atomic rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .map_err(|e| CliError::config(format!("cannot write in {}: {e}", dir.display())))?;
    tmp.write_all(contents.as_bytes())
        .and_then(|_| tmp.flush())
        .map_err(|e| CliError::config(format!("write failed: {e}")))?;
    tmp.persist(path)
        .map_err(|e| CliError::config(format!("cannot rename into {}: {e}", path.display())))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::config(format!("serialization failed: {e}")))?;
    text.push('\n');
    write_atomic(path, &text)
}
