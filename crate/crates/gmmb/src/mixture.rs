//! Gaussian mixture density evaluation on the transformed scale, parsimonious
//! covariance parameterizations via the volume/shape/orientation
//! eigen-decomposition, and free-parameter counting.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::data::BoundsSpec;
use crate::error::{Error, Result};
use crate::transform::{self, TransformParams};

/// Relative eigenvalue ratio above which a covariance is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Covariance parameterization codes, mclust-style: the three letters state
/// whether volume, shape, and orientation are Equal or Varying across
/// components (I = identity / axis-aligned).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelCode {
    /// d = 1, equal variance.
    E,
    /// d = 1, varying variance.
    V,
    EII,
    VII,
    EEI,
    VEI,
    EVI,
    VVI,
    EEE,
    VVE,
    VVV,
}

impl ModelCode {
    pub const ALL: [ModelCode; 11] = [
        ModelCode::E,
        ModelCode::V,
        ModelCode::EII,
        ModelCode::VII,
        ModelCode::EEI,
        ModelCode::VEI,
        ModelCode::EVI,
        ModelCode::VVI,
        ModelCode::EEE,
        ModelCode::VVE,
        ModelCode::VVV,
    ];

    pub fn is_univariate(self) -> bool {
        matches!(self, ModelCode::E | ModelCode::V)
    }

    pub fn valid_for(self, d: usize) -> bool {
        if d == 1 {
            self.is_univariate()
        } else {
            !self.is_univariate()
        }
    }

    /// Number of free covariance parameters for this code.
    pub fn cov_params(self, d: usize, g: usize) -> Result<usize> {
        if !self.valid_for(d) {
            return Err(Error::InvalidArgument(format!(
                "model {self} is not valid for d = {d}"
            )));
        }
        let shape = d - 1;
        let orient = d * (d - 1) / 2;
        Ok(match self {
            ModelCode::E | ModelCode::EII => 1,
            ModelCode::V | ModelCode::VII => g,
            ModelCode::EEI => 1 + shape,
            ModelCode::VEI => g + shape,
            ModelCode::EVI => 1 + g * shape,
            ModelCode::VVI => g * (1 + shape),
            ModelCode::EEE => 1 + shape + orient,
            ModelCode::VVE => g * (1 + shape) + orient,
            ModelCode::VVV => g * (1 + shape + orient),
        })
    }
}

impl fmt::Display for ModelCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ModelCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelCode::ALL
            .iter()
            .copied()
            .find(|m| m.to_string() == s.to_uppercase())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown model code '{s}'; valid codes: E V EII VII EEI VEI EVI VVI EEE VVE VVV"
                ))
            })
    }
}

/// Total free-parameter count: mixing weights, means, covariance factors, and
/// free transformation powers.
pub fn count_free_parameters(
    model: ModelCode,
    d: usize,
    g: usize,
    n_free_lambda: usize,
) -> Result<usize> {
    Ok((g - 1) + g * d + model.cov_params(d, g)? + n_free_lambda)
}

/// Volume/shape/orientation factors of one component covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFactors {
    /// |Sigma|^(1/d), the volume scalar.
    pub volume: f64,
    /// Normalized eigenvalues, determinant one, decreasing.
    pub shape: Vec<f64>,
    /// Orthogonal eigenvector matrix, column-major, one column per eigenvalue.
    pub orientation: Vec<Vec<f64>>,
}

/// Per-component covariance matrices together with their eigen-decomposition
/// factors. The sharing pattern across components is dictated by the model
/// code that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactors {
    sigmas: Vec<DMatrix<f64>>,
    factors: Vec<ComponentFactors>,
}

impl CovarianceFactors {
    /// Decomposes each covariance matrix; errors if any is not symmetric
    /// positive definite within the condition limit.
    pub fn from_covariances(sigmas: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut factors = Vec::with_capacity(sigmas.len());
        for (k, s) in sigmas.iter().enumerate() {
            factors.push(decompose(s, k)?);
        }
        Ok(Self { sigmas, factors })
    }

    pub fn g(&self) -> usize {
        self.sigmas.len()
    }

    pub fn d(&self) -> usize {
        self.sigmas[0].nrows()
    }

    pub fn sigma(&self, k: usize) -> &DMatrix<f64> {
        &self.sigmas[k]
    }

    pub fn factors(&self, k: usize) -> &ComponentFactors {
        &self.factors[k]
    }

    /// Rebuilds volume_k * U_k Delta_k U_k^T.
    pub fn reconstruct(&self, k: usize) -> DMatrix<f64> {
        let f = &self.factors[k];
        let d = self.d();
        let u = DMatrix::from_fn(d, d, |i, j| f.orientation[j][i]);
        let delta = DMatrix::from_diagonal(&DVector::from_iterator(
            d,
            f.shape.iter().map(|&s| s * f.volume),
        ));
        &u * delta * u.transpose()
    }
}

fn decompose(sigma: &DMatrix<f64>, component: usize) -> Result<ComponentFactors> {
    let d = sigma.nrows();
    let eig = sigma.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let evals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let min = evals[d - 1];
    let max = evals[0];
    if min <= 0.0 || max / min > CONDITION_LIMIT {
        return Err(Error::SingularCovariance { component });
    }
    let log_volume = evals.iter().map(|e| e.ln()).sum::<f64>() / d as f64;
    let volume = log_volume.exp();
    let shape = evals.iter().map(|&e| e / volume).collect();
    let orientation = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    Ok(ComponentFactors {
        volume,
        shape,
        orientation,
    })
}

/// Gaussian mixture parameters on the transformed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub cov: CovarianceFactors,
    pub model: ModelCode,
}

impl MixtureParams {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        cov: CovarianceFactors,
        model: ModelCode,
    ) -> Result<Self> {
        let g = weights.len();
        if means.len() != g || cov.g() != g {
            return Err(Error::DimensionMismatch(
                "weights, means, and covariances must have one entry per component".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 || weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mixing weights must be strictly positive and sum to 1, got sum {sum}"
            )));
        }
        Ok(Self {
            weights,
            means,
            cov,
            model,
        })
    }

    pub fn g(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.means[0].len()
    }

    /// Precomputes the Cholesky factorizations used by the density routines.
    pub fn density_cache(&self) -> Result<MixtureDensity<'_>> {
        MixtureDensity::new(self)
    }
}

/// Prepared per-component factorizations for repeated density evaluation.
pub struct MixtureDensity<'a> {
    params: &'a MixtureParams,
    chols: Vec<Cholesky<f64, Dyn>>,
    log_weights: Vec<f64>,
}

impl<'a> MixtureDensity<'a> {
    fn new(params: &'a MixtureParams) -> Result<Self> {
        let mut chols = Vec::with_capacity(params.g());
        for k in 0..params.g() {
            let chol = Cholesky::new(params.cov.sigma(k).clone())
                .ok_or(Error::SingularCovariance { component: k })?;
            chols.push(chol);
        }
        let log_weights = params.weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            params,
            chols,
            log_weights,
        })
    }

    /// log phi(y; mu_k, Sigma_k) via the Cholesky factorization.
    pub fn log_component(&self, k: usize, y: &DVector<f64>) -> f64 {
        let d = self.params.d() as f64;
        let l = self.chols[k].l_dirty();
        let mut diff = y - &self.params.means[k];
        // forward-solve L z = diff in place
        let mut log_det_half = 0.0;
        for i in 0..y.len() {
            let mut s = diff[i];
            for j in 0..i {
                s -= l[(i, j)] * diff[j];
            }
            diff[i] = s / l[(i, i)];
            log_det_half += l[(i, i)].ln();
        }
        let quad = diff.norm_squared();
        -0.5 * d * (2.0 * std::f64::consts::PI).ln() - log_det_half - 0.5 * quad
    }

    /// Per-component joint log terms log pi_k + log phi_k(y), plus their
    /// log-sum-exp (the mixture log-density).
    pub fn log_terms(&self, y: &DVector<f64>, out: &mut [f64]) -> f64 {
        for k in 0..self.params.g() {
            out[k] = self.log_weights[k] + self.log_component(k, y);
        }
        log_sum_exp(out)
    }

    /// log sum_k pi_k phi(y; mu_k, Sigma_k).
    pub fn log_mixture(&self, y: &DVector<f64>) -> f64 {
        let mut buf = vec![0.0; self.params.g()];
        self.log_terms(y, &mut buf)
    }
}

/// Numerically stable log(sum exp(v)).
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// log phi(y; mu, Sigma) for a single component.
pub fn log_component_density(
    y: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let cov = CovarianceFactors::from_covariances(vec![sigma.clone()])?;
    let params = MixtureParams::new(vec![1.0], vec![mu.clone()], cov, pick_code(y.len()))?;
    Ok(params.density_cache()?.log_component(0, y))
}

fn pick_code(d: usize) -> ModelCode {
    if d == 1 {
        ModelCode::V
    } else {
        ModelCode::VVV
    }
}

/// log of the mixture density on the transformed scale.
pub fn log_mixture_density_transformed(y: &DVector<f64>, params: &MixtureParams) -> Result<f64> {
    Ok(params.density_cache()?.log_mixture(y))
}

/// log of the mixture density on the original bounded scale: transformed-scale
/// density at t(x) plus the log-Jacobian correction.
pub fn log_density_original(
    x_row: &[f64],
    params: &MixtureParams,
    tparams: &TransformParams,
    bounds: &BoundsSpec,
) -> Result<f64> {
    let y = DVector::from_iterator(
        x_row.len(),
        x_row
            .iter()
            .enumerate()
            .map(|(j, &x)| transform::forward(x, bounds.get(j), tparams.lambda[j]))
            .collect::<Result<Vec<f64>>>()?,
    );
    let logh = log_mixture_density_transformed(&y, params)?;
    let logj = transform::log_jacobian(x_row, bounds, tparams)?;
    Ok(logh + logj)
}
