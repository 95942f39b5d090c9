//! ECM fitting of the transformation-based Gaussian mixture: E-step
//! responsibilities, a conditional maximization of the transformation powers
//! (coordinate-wise bounded search on the profiled Q-function), and
//! closed-form conditional maximization of the mixture parameters under the
//! covariance parameterization codes.

use nalgebra::{DMatrix, DVector};

use crate::data::{validate, BoundsSpec, Dataset};
use crate::diagnostics::{self, entropy_measures, map_classify};
use crate::error::{Error, Result};
use crate::kmeans;
use crate::mixture::{
    count_free_parameters, CovarianceFactors, MixtureParams, ModelCode, CONDITION_LIMIT,
};
use crate::optim;
use crate::transform::{self, TransformParams, LAMBDA_BOX};

/// Relative eigenvalue floor for component covariances, as a fraction of the
/// mean marginal variance of the transformed data.
const VARIANCE_FLOOR_REL: f64 = 1e-10;

/// Components whose weight falls below this fraction of n are empty.
const EMPTY_COMPONENT_REL: f64 = 1e-10;

/// n x G posterior membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    z: DMatrix<f64>,
}

impl Responsibilities {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        for i in 0..z.nrows() {
            let s: f64 = z.row(i).iter().sum();
            if (s - 1.0).abs() > 1e-10 || z.row(i).iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidArgument(format!(
                    "responsibility row {i} is not a probability vector (sum {s})"
                )));
            }
        }
        Ok(Self { z })
    }

    pub fn hard(labels: &[usize], g: usize) -> Self {
        let mut z = DMatrix::zeros(labels.len(), g);
        for (i, &l) in labels.iter().enumerate() {
            z[(i, l)] = 1.0;
        }
        Self { z }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn g(&self) -> usize {
        self.z.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.g()).map(|k| self.z.column(k).sum()).collect()
    }
}

/// Settings for a single ECM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub g: usize,
    pub model: ModelCode,
    /// Relative log-likelihood improvement below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    pub n_kmeans_starts: usize,
    pub rng_seed: u64,
    pub lambda_box: (f64, f64),
    /// Per-variable power overrides: `Some(v)` holds that variable's power
    /// fixed at `v`. Empty means every bounded variable is free.
    pub fixed_lambda: Vec<Option<f64>>,
}

impl FitConfig {
    pub fn new(g: usize, model: ModelCode) -> Self {
        Self {
            g,
            model,
            tol: 1e-8,
            max_iter: 1000,
            n_kmeans_starts: 10,
            rng_seed: 0,
            lambda_box: LAMBDA_BOX,
            fixed_lambda: Vec::new(),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.g < 1 {
            return Err(Error::InvalidArgument("G must be at least 1".into()));
        }
        if self.tol <= 0.0 {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !self.model.valid_for(d) {
            return Err(Error::InvalidArgument(format!(
                "model {} is not valid for d = {d}",
                self.model
            )));
        }
        if !self.fixed_lambda.is_empty() && self.fixed_lambda.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "fixed_lambda has {} entries for {d} variables",
                self.fixed_lambda.len()
            )));
        }
        Ok(())
    }

    /// Deterministic per-(seed, G, model) RNG stream, so sweep fits are
    /// independent and reproducible.
    pub fn derived_seed(&self) -> u64 {
        let model_idx = ModelCode::ALL.iter().position(|m| *m == self.model).unwrap() as u64;
        let mut s = self
            .rng_seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(self.g as u64 + 1));
        s ^= model_idx.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        splitmix64(s)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Converged fit with diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: MixtureParams,
    pub tparams: TransformParams,
    pub loglik: f64,
    pub df: usize,
    pub bic: f64,
    pub icl: f64,
    pub nec: f64,
    pub entropy_total: f64,
    pub z: Responsibilities,
    /// 1-based MAP labels.
    pub classification: Vec<usize>,
    pub uncertainty: Vec<f64>,
    pub entropy: Vec<f64>,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
}

/// Columns of the transformed data t(x; lambda).
fn transform_matrix(
    data: &Dataset,
    bounds: &BoundsSpec,
    lambda: &[f64],
) -> Result<DMatrix<f64>> {
    let mut y = DMatrix::zeros(data.n(), data.d());
    for j in 0..data.d() {
        let b = bounds.get(j);
        for i in 0..data.n() {
            y[(i, j)] = transform::forward(data.get(i, j), b, lambda[j]).map_err(|_| {
                Error::OutsideSupport {
                    column: j,
                    value: data.get(i, j),
                }
            })?;
        }
    }
    Ok(y)
}

fn log_jacobian_column(data: &Dataset, bounds: &BoundsSpec, j: usize, lambda: f64) -> Result<f64> {
    let b = bounds.get(j);
    let mut s = 0.0;
    for i in 0..data.n() {
        s += transform::log_derivative(data.get(i, j), b, lambda)?;
    }
    Ok(s)
}

fn log_jacobian_total(data: &Dataset, bounds: &BoundsSpec, lambda: &[f64]) -> Result<f64> {
    (0..data.d())
        .map(|j| log_jacobian_column(data, bounds, j, lambda[j]))
        .sum()
}

/// Weighted mixture moments under a covariance model code, computed from
/// transformed data. `vve_warm` carries the shared orientation across calls.
struct ThetaUpdate {
    params: MixtureParams,
    vve_orientation: Option<DMatrix<f64>>,
}

fn m_step_theta(
    y: &DMatrix<f64>,
    z: &Responsibilities,
    model: ModelCode,
    vve_warm: Option<&DMatrix<f64>>,
) -> Result<ThetaUpdate> {
    let n = y.nrows();
    let d = y.ncols();
    let g = z.g();
    let zm = z.matrix();

    let nk = z.column_sums();
    if let Some(k) = nk.iter().position(|&v| v < EMPTY_COMPONENT_REL * n as f64) {
        return Err(Error::DegenerateFit(format!("component {k} became empty")));
    }
    let weights: Vec<f64> = nk.iter().map(|&v| v / n as f64).collect();

    let mut means = Vec::with_capacity(g);
    for k in 0..g {
        let mut mu = DVector::zeros(d);
        for i in 0..n {
            for j in 0..d {
                mu[j] += zm[(i, k)] * y[(i, j)];
            }
        }
        mu /= nk[k];
        means.push(mu);
    }

    // weighted scatter matrices
    let mut scatters = Vec::with_capacity(g);
    for k in 0..g {
        let mut w = DMatrix::zeros(d, d);
        for i in 0..n {
            let zik = zm[(i, k)];
            if zik == 0.0 {
                continue;
            }
            for a in 0..d {
                let da = y[(i, a)] - means[k][a];
                for b in a..d {
                    w[(a, b)] += zik * da * (y[(i, b)] - means[k][b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                w[(a, b)] = w[(b, a)];
            }
        }
        scatters.push(w);
    }

    let (sigmas, orientation) = covariances_for_model(model, &scatters, &nk, n, vve_warm)?;

    // variance floor relative to the mean marginal variance of y
    let mut marg_var = 0.0;
    for j in 0..d {
        let col = y.column(j);
        let mean = col.mean();
        marg_var += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    }
    let floor = VARIANCE_FLOOR_REL * (marg_var / d as f64);
    for (k, s) in sigmas.iter().enumerate() {
        let min_eig = s.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < floor {
            return Err(Error::DegenerateFit(format!(
                "covariance of component {k} hit the variance floor"
            )));
        }
    }

    let cov = CovarianceFactors::from_covariances(sigmas)?;
    let params = MixtureParams::new(weights, means, cov, model)?;
    Ok(ThetaUpdate {
        params,
        vve_orientation: orientation,
    })
}

fn covariances_for_model(
    model: ModelCode,
    scatters: &[DMatrix<f64>],
    nk: &[f64],
    n: usize,
    vve_warm: Option<&DMatrix<f64>>,
) -> Result<(Vec<DMatrix<f64>>, Option<DMatrix<f64>>)> {
    let g = scatters.len();
    let d = scatters[0].nrows();
    let nf = n as f64;
    let total: DMatrix<f64> = scatters
        .iter()
        .fold(DMatrix::zeros(d, d), |acc, w| acc + w);

    let sigmas = match model {
        // univariate
        ModelCode::E => {
            let s2 = total[(0, 0)] / nf;
            vec![DMatrix::from_element(1, 1, s2); g]
        }
        ModelCode::V => scatters
            .iter()
            .zip(nk)
            .map(|(w, &m)| DMatrix::from_element(1, 1, w[(0, 0)] / m))
            .collect(),
        // spherical
        ModelCode::EII => {
            let lam = total.trace() / (nf * d as f64);
            vec![DMatrix::from_diagonal_element(d, d, lam); g]
        }
        ModelCode::VII => scatters
            .iter()
            .zip(nk)
            .map(|(w, &m)| DMatrix::from_diagonal_element(d, d, w.trace() / (m * d as f64)))
            .collect(),
        // diagonal
        ModelCode::EEI => {
            let diag = DVector::from_fn(d, |j, _| total[(j, j)] / nf);
            vec![DMatrix::from_diagonal(&diag); g]
        }
        ModelCode::VEI => {
            // alternate between per-component volumes and the shared
            // determinant-one shape
            let mut shape = DVector::from_fn(d, |j, _| total[(j, j)]);
            normalize_det_one(&mut shape)?;
            let mut volumes = vec![0.0; g];
            for _ in 0..20 {
                for k in 0..g {
                    let mut tr = 0.0;
                    for j in 0..d {
                        tr += scatters[k][(j, j)] / shape[j];
                    }
                    volumes[k] = tr / (d as f64 * nk[k]);
                }
                let mut new_shape = DVector::zeros(d);
                for j in 0..d {
                    for k in 0..g {
                        new_shape[j] += scatters[k][(j, j)] / volumes[k];
                    }
                }
                normalize_det_one(&mut new_shape)?;
                let delta = (&new_shape - &shape).amax() / (1.0 + shape.amax());
                shape = new_shape;
                if delta < 1e-10 {
                    break;
                }
            }
            (0..g)
                .map(|k| DMatrix::from_diagonal(&(&shape * volumes[k])))
                .collect()
        }
        ModelCode::EVI => {
            let mut shapes = Vec::with_capacity(g);
            let mut vol_sum = 0.0;
            for w in scatters {
                let mut s = DVector::from_fn(d, |j, _| w[(j, j)]);
                let log_det: f64 = s.iter().map(|v| v.ln()).sum();
                let geo = (log_det / d as f64).exp();
                if !geo.is_finite() || geo <= 0.0 {
                    return Err(Error::DegenerateFit("zero diagonal scatter".into()));
                }
                s /= geo;
                shapes.push(s);
                vol_sum += geo;
            }
            let lam = vol_sum / nf;
            shapes
                .into_iter()
                .map(|s| DMatrix::from_diagonal(&(s * lam)))
                .collect()
        }
        ModelCode::VVI => scatters
            .iter()
            .zip(nk)
            .map(|(w, &m)| DMatrix::from_diagonal(&DVector::from_fn(d, |j, _| w[(j, j)] / m)))
            .collect(),
        // full
        ModelCode::EEE => vec![&total / nf; g],
        ModelCode::VVV => scatters
            .iter()
            .zip(nk)
            .map(|(w, &m)| w / m)
            .collect(),
        ModelCode::VVE => {
            let (sigmas, u) = vve_covariances(scatters, nk, vve_warm)?;
            return Ok((sigmas, Some(u)));
        }
    };
    Ok((sigmas, None))
}

fn normalize_det_one(v: &mut DVector<f64>) -> Result<()> {
    let log_det: f64 = v.iter().map(|x| x.ln()).sum();
    if !log_det.is_finite() {
        return Err(Error::DegenerateFit("shape vector has zero entry".into()));
    }
    let geo = (log_det / v.len() as f64).exp();
    *v /= geo;
    Ok(())
}

/// Shared-orientation M-step: alternates diagonal terms and a
/// majorize-minimize update of the common orthogonal factor.
fn vve_covariances(
    scatters: &[DMatrix<f64>],
    nk: &[f64],
    warm: Option<&DMatrix<f64>>,
) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let g = scatters.len();
    let d = scatters[0].nrows();

    let mut u = match warm {
        Some(u0) => u0.clone(),
        None => {
            // eigenvectors of the pooled scatter, largest eigenvalue first
            let total: DMatrix<f64> = scatters
                .iter()
                .fold(DMatrix::zeros(d, d), |acc, w| acc + w);
            let eig = total.symmetric_eigen();
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])])
        }
    };

    let diag_terms = |u: &DMatrix<f64>| -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(g);
        for (w, &m) in scatters.iter().zip(nk) {
            let p = u.transpose() * w * u;
            let v = DVector::from_fn(d, |j, _| (p[(j, j)] / m).max(f64::MIN_POSITIVE));
            out.push(v);
        }
        Ok(out)
    };

    let objective = |u: &DMatrix<f64>, omegas: &[DVector<f64>]| -> f64 {
        let mut f = 0.0;
        for (w, om) in scatters.iter().zip(omegas) {
            let p = u.transpose() * w * u;
            for j in 0..d {
                f += p[(j, j)] / om[j];
            }
        }
        f
    };

    let max_eigs: Vec<f64> = scatters
        .iter()
        .map(|w| w.clone().symmetric_eigen().eigenvalues.max())
        .collect();

    let mut omegas = diag_terms(&u)?;
    let mut prev = objective(&u, &omegas);
    for _ in 0..100 {
        // MM sweep over the orthogonal factor at fixed diagonals
        for _ in 0..100 {
            let mut r = DMatrix::zeros(d, d);
            for ((w, om), &a) in scatters.iter().zip(&omegas).zip(&max_eigs) {
                let shifted = DMatrix::from_diagonal_element(d, d, a) - w;
                let scaled = &u * DMatrix::from_diagonal(&om.map(|v| 1.0 / v));
                r += shifted * scaled;
            }
            let svd = r.svd(true, true);
            let p = svd.u.as_ref().unwrap();
            let qt = svd.v_t.as_ref().unwrap();
            let new_u = p * qt;
            let f_new = objective(&new_u, &omegas);
            let f_old = objective(&u, &omegas);
            u = new_u;
            if (f_old - f_new).abs() <= 1e-8 * (1.0 + f_old.abs()) {
                break;
            }
        }
        omegas = diag_terms(&u)?;
        let f = objective(&u, &omegas);
        if (prev - f).abs() <= 1e-8 * (1.0 + prev.abs()) {
            break;
        }
        prev = f;
    }

    let sigmas = omegas
        .iter()
        .map(|om| &u * DMatrix::from_diagonal(om) * u.transpose())
        .collect();
    Ok((sigmas, u))
}

/// E-step: posterior responsibilities and the observed-data log-likelihood
/// (including the Jacobian term, which cancels in the responsibilities).
pub fn e_step(
    data: &Dataset,
    bounds: &BoundsSpec,
    params: &MixtureParams,
    tparams: &TransformParams,
) -> Result<(Responsibilities, f64)> {
    let y = transform_matrix(data, bounds, &tparams.lambda)?;
    let logjac = log_jacobian_total(data, bounds, &tparams.lambda)?;
    let (z, mix_ll) = responsibilities_from(&y, params)?;
    Ok((z, mix_ll + logjac))
}

fn responsibilities_from(y: &DMatrix<f64>, params: &MixtureParams) -> Result<(Responsibilities, f64)> {
    let n = y.nrows();
    let g = params.g();
    let cache = params.density_cache()?;
    let mut z = DMatrix::zeros(n, g);
    let mut terms = vec![0.0; g];
    let mut ll = 0.0;
    let mut row = DVector::zeros(y.ncols());
    for i in 0..n {
        for j in 0..y.ncols() {
            row[j] = y[(i, j)];
        }
        let lse = cache.log_terms(&row, &mut terms);
        if !lse.is_finite() {
            return Err(Error::DegenerateFit(format!(
                "all components vanish at observation {i}"
            )));
        }
        for k in 0..g {
            z[(i, k)] = (terms[k] - lse).exp();
        }
        ll += lse;
    }
    Ok((Responsibilities { z }, ll))
}

/// CM-step for the mixture parameters at fixed responsibilities and powers.
pub fn cm_step_theta(
    data: &Dataset,
    bounds: &BoundsSpec,
    z: &Responsibilities,
    tparams: &TransformParams,
    model: ModelCode,
) -> Result<MixtureParams> {
    let y = transform_matrix(data, bounds, &tparams.lambda)?;
    Ok(m_step_theta(&y, z, model, None)?.params)
}

/// CM-step for the transformation powers: coordinate-wise bounded search on
/// the Q-function with the mixture moments profiled out at each trial power.
/// Never returns powers with a lower profiled Q than the input.
pub fn cm_step_lambda(
    data: &Dataset,
    bounds: &BoundsSpec,
    z: &Responsibilities,
    tparams: &TransformParams,
    model: ModelCode,
    lambda_box: (f64, f64),
) -> Result<TransformParams> {
    cm_step_lambda_warm(data, bounds, z, tparams, model, lambda_box, None)
}

fn cm_step_lambda_warm(
    data: &Dataset,
    bounds: &BoundsSpec,
    z: &Responsibilities,
    tparams: &TransformParams,
    model: ModelCode,
    lambda_box: (f64, f64),
    vve_warm: Option<&DMatrix<f64>>,
) -> Result<TransformParams> {
    if tparams.fixed.iter().all(|&f| f) {
        return Ok(tparams.clone());
    }
    let n = data.n();
    let nk = z.column_sums();
    let log_weights: Vec<f64> = nk.iter().map(|&v| (v / n as f64).max(1e-300).ln()).collect();

    let mut lambda = tparams.lambda.clone();
    let mut y = transform_matrix(data, bounds, &lambda)?;
    let mut logjac: Vec<f64> = (0..data.d())
        .map(|j| log_jacobian_column(data, bounds, j, lambda[j]))
        .collect::<Result<_>>()?;

    // profiled Q at the current y/logjac state
    let q_of = |y: &DMatrix<f64>, logjac_sum: f64| -> f64 {
        match m_step_theta(y, z, model, vve_warm) {
            Ok(update) => match update.params.density_cache() {
                Ok(cache) => {
                    let g = z.g();
                    let zm = z.matrix();
                    let mut terms = vec![0.0; g];
                    let mut q = logjac_sum;
                    let mut row = DVector::zeros(y.ncols());
                    for i in 0..y.nrows() {
                        for j in 0..y.ncols() {
                            row[j] = y[(i, j)];
                        }
                        for (k, t) in terms.iter_mut().enumerate() {
                            *t = log_weights[k] + cache.log_component(k, &row);
                        }
                        for k in 0..g {
                            q += zm[(i, k)] * terms[k];
                        }
                    }
                    q
                }
                Err(_) => f64::NEG_INFINITY,
            },
            Err(_) => f64::NEG_INFINITY,
        }
    };

    for j in 0..data.d() {
        if tparams.fixed[j] {
            continue;
        }
        let b = bounds.get(j);
        let saved: Vec<f64> = y.column(j).iter().copied().collect();
        let jac_rest: f64 = logjac.iter().sum::<f64>() - logjac[j];
        let q_current = q_of(&y, jac_rest + logjac[j]);

        let trial = |lam: f64, y: &mut DMatrix<f64>| -> f64 {
            let mut jac_j = 0.0;
            for i in 0..n {
                let x = data.get(i, j);
                match (transform::forward(x, b, lam), transform::log_derivative(x, b, lam)) {
                    (Ok(v), Ok(ld)) if v.is_finite() && ld.is_finite() => {
                        y[(i, j)] = v;
                        jac_j += ld;
                    }
                    _ => return f64::NEG_INFINITY,
                }
            }
            q_of(y, jac_rest + jac_j)
        };

        let (lam_best, q_best) =
            optim::maximize_scalar(|lam| trial(lam, &mut y), lambda_box.0, lambda_box.1, 1e-6);

        if q_best > q_current && q_best.is_finite() {
            lambda[j] = lam_best;
            // re-apply the winning power (y column may hold the last trial)
            for i in 0..n {
                y[(i, j)] = transform::forward(data.get(i, j), b, lam_best)?;
            }
            logjac[j] = log_jacobian_column(data, bounds, j, lam_best)?;
        } else {
            for (i, &v) in saved.iter().enumerate() {
                y[(i, j)] = v;
            }
        }
    }

    Ok(TransformParams {
        lambda,
        fixed: tparams.fixed.clone(),
    })
}

/// Initial transformation powers (per-variable single-component profile
/// likelihood) and hard responsibilities from the best k-means partition of
/// the transformed variables.
pub fn initialize(
    data: &Dataset,
    bounds: &BoundsSpec,
    config: &FitConfig,
) -> Result<(TransformParams, Responsibilities)> {
    let n = data.n();
    let tparams = marginal_transform_params(data, bounds, config)?;

    if config.g == 1 {
        let z = Responsibilities {
            z: DMatrix::from_element(n, 1, 1.0),
        };
        return Ok((tparams, z));
    }

    let y = transform_matrix(data, bounds, &tparams.lambda)?;
    let km = kmeans::kmeans(
        &standardize(&y),
        config.g,
        config.n_kmeans_starts,
        config.derived_seed(),
    )?;
    Ok((tparams, Responsibilities::hard(&km.labels, config.g)))
}

/// Per-variable powers estimated by maximizing the single-component profile
/// log-likelihood of each variable over the search box.
pub fn marginal_transform_params(
    data: &Dataset,
    bounds: &BoundsSpec,
    config: &FitConfig,
) -> Result<TransformParams> {
    let d = data.d();
    let n = data.n();
    let mut tparams = TransformParams::for_bounds(bounds);
    if !config.fixed_lambda.is_empty() {
        for j in 0..d {
            if let Some(v) = config.fixed_lambda[j] {
                tparams.lambda[j] = v;
                tparams.fixed[j] = true;
            }
        }
        tparams.check(bounds, config.lambda_box)?;
    }

    // marginal powers by single-component profile log-likelihood
    for j in 0..d {
        if tparams.fixed[j] {
            continue;
        }
        let b = bounds.get(j);
        let profile = |lam: f64| -> f64 {
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            let mut jac = 0.0;
            for i in 0..n {
                let x = data.get(i, j);
                let y = match transform::forward(x, b, lam) {
                    Ok(v) if v.is_finite() => v,
                    _ => return f64::NEG_INFINITY,
                };
                sum += y;
                sum2 += y * y;
                jac += match transform::log_derivative(x, b, lam) {
                    Ok(v) if v.is_finite() => v,
                    _ => return f64::NEG_INFINITY,
                };
            }
            let var = (sum2 - sum * sum / n as f64) / n as f64;
            if var <= 0.0 {
                return f64::NEG_INFINITY;
            }
            -0.5 * n as f64 * var.ln() + jac
        };
        let (lam, value) =
            optim::maximize_scalar(profile, config.lambda_box.0, config.lambda_box.1, 1e-6);
        if value.is_finite() {
            tparams.lambda[j] = lam;
        }
    }

    Ok(tparams)
}

fn standardize(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    let mut out = y.clone();
    for j in 0..y.ncols() {
        let col = y.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            for i in 0..n {
                out[(i, j)] = (y[(i, j)] - mean) / sd;
            }
        }
    }
    out
}

/// Candidate starting partitions: k-means on the standardized transformed
/// variables, plus k-means on the raw transformed variables when it yields a
/// different partition. The fit is run from each and the best final
/// log-likelihood wins, which makes the start basin-robust while staying
/// deterministic.
fn init_candidates(
    data: &Dataset,
    bounds: &BoundsSpec,
    config: &FitConfig,
    tparams: &TransformParams,
) -> Result<Vec<Responsibilities>> {
    let n = data.n();
    if config.g == 1 {
        return Ok(vec![Responsibilities {
            z: DMatrix::from_element(n, 1, 1.0),
        }]);
    }
    let y = transform_matrix(data, bounds, &tparams.lambda)?;
    let seed = config.derived_seed();
    let mut candidates = Vec::new();
    let mut labelings: Vec<Vec<usize>> = Vec::new();
    let mut push = |km: Result<kmeans::KMeansResult>| {
        if let Ok(km) = km {
            if !labelings.contains(&km.labels) {
                candidates.push(Responsibilities::hard(&km.labels, config.g));
                labelings.push(km.labels);
            }
        }
    };
    push(kmeans::kmeans(
        &standardize(&y),
        config.g,
        config.n_kmeans_starts,
        seed,
    ));
    push(kmeans::kmeans(&y, config.g, config.n_kmeans_starts, seed));
    if candidates.is_empty() {
        return Err(Error::EmptyClusterInit);
    }
    Ok(candidates)
}

/// Full ECM fit: initialization, alternating CM-steps and E-steps until the
/// relative log-likelihood improvement drops below the tolerance.
pub fn fit(data: &Dataset, bounds: &BoundsSpec, config: &FitConfig) -> Result<FitResult> {
    config.check(data.d())?;
    validate(data, bounds)?.into_result()?;
    if config.g > data.n() {
        return Err(Error::InvalidArgument(format!(
            "G = {} exceeds the number of observations {}",
            config.g,
            data.n()
        )));
    }

    let (tparams0, _) = initialize(data, bounds, config)?;
    let candidates = init_candidates(data, bounds, config, &tparams0)?;

    let mut best: Option<FitResult> = None;
    let mut first_err: Option<Error> = None;
    for z0 in candidates {
        match fit_from(data, bounds, config, tparams0.clone(), z0) {
            Ok(res) => {
                if best.as_ref().map_or(true, |b| res.loglik > b.loglik) {
                    best = Some(res);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one candidate attempted"))
}

fn fit_from(
    data: &Dataset,
    bounds: &BoundsSpec,
    config: &FitConfig,
    mut tparams: TransformParams,
    mut z: Responsibilities,
) -> Result<FitResult> {
    let mut vve_orientation: Option<DMatrix<f64>> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut params_opt: Option<MixtureParams> = None;
    let mut n_iter = 0;

    for m in 0..config.max_iter {
        n_iter = m + 1;
        tparams = cm_step_lambda_warm(
            data,
            bounds,
            &z,
            &tparams,
            config.model,
            config.lambda_box,
            vve_orientation.as_ref(),
        )?;
        let y = transform_matrix(data, bounds, &tparams.lambda)?;
        let update = m_step_theta(&y, &z, config.model, vve_orientation.as_ref())?;
        vve_orientation = update.vve_orientation.clone();
        let logjac = log_jacobian_total(data, bounds, &tparams.lambda)?;
        let (z_new, mix_ll) = responsibilities_from(&y, &update.params)?;
        let ll = mix_ll + logjac;
        z = z_new;
        params_opt = Some(update.params);

        if let Some(&prev) = trace.last() {
            if ll < prev - 1e-8 * (1.0 + prev.abs()) {
                return Err(Error::DegenerateFit(format!(
                    "log-likelihood decreased from {prev} to {ll} at iteration {m}"
                )));
            }
            if (ll - prev) / (1.0 + prev.abs()) < config.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
    }

    let params = params_opt.expect("max_iter >= 1 guarantees at least one update");
    let loglik = *trace.last().unwrap();
    let n_free_lambda = tparams.n_free();
    let df = count_free_parameters(config.model, data.d(), config.g, n_free_lambda)?;
    let bic = diagnostics::bic(loglik, df, data.n());
    let (entropy, entropy_total, nec) = entropy_measures(&z);
    let icl = diagnostics::icl(bic, entropy_total);
    let (classification, uncertainty) = map_classify(&z);

    Ok(FitResult {
        params,
        tparams,
        loglik,
        df,
        bic,
        icl,
        nec,
        entropy_total,
        z,
        classification,
        uncertainty,
        entropy,
        loglik_trace: trace,
        converged,
        n_iter,
    })
}

/// Condition-number guard shared with the covariance factor checks.
pub fn condition_limit() -> f64 {
    CONDITION_LIMIT
}
