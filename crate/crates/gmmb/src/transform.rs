//! Range-power transformation family: forward map, first derivative, inverse,
//! and the log-Jacobian of the coordinate-independent map.
//!
//! For a variable with open support (l, +inf):
//!   t(x; p) = ((x - l)^p - 1) / p        for p != 0
//!   t(x; 0) = log(x - l)
//! For a variable with open support (l, u):
//!   t(x; p) = (r^p - 1) / p,  r = (x - l) / (u - x)   for p != 0
//!   t(x; 0) = log r
//! Unbounded variables use the identity map with the power fixed at 1.

use serde::{Deserialize, Serialize};

use crate::data::{Bound, BoundsSpec};
use crate::error::{Error, Result};

/// Powers below this magnitude take the logarithmic branch.
pub const LAMBDA_ZERO_EPS: f64 = 1e-10;

/// Default search box for free transformation powers.
pub const LAMBDA_BOX: (f64, f64) = (-3.0, 3.0);

/// x^p computed on the log scale; x must be strictly positive.
#[inline]
fn pow_pos(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x // exact, so lambda = 1 stays a pure affine map
    } else {
        (p * x.ln()).exp()
    }
}

fn check_interior(x: f64, bound: Bound) -> Result<()> {
    if bound.contains(x) {
        Ok(())
    } else {
        Err(Error::OutsideSupport { column: 0, value: x })
    }
}

/// Forward range-power transform of a single coordinate.
pub fn forward(x: f64, bound: Bound, lambda: f64) -> Result<f64> {
    check_interior(x, bound)?;
    Ok(match bound {
        Bound::Unbounded => x,
        Bound::LowerBounded { lower } => {
            if lambda.abs() < LAMBDA_ZERO_EPS {
                (x - lower).ln()
            } else {
                (pow_pos(x - lower, lambda) - 1.0) / lambda
            }
        }
        Bound::DoublyBounded { lower, upper } => {
            let r = (x - lower) / (upper - x);
            if lambda.abs() < LAMBDA_ZERO_EPS {
                r.ln()
            } else {
                (pow_pos(r, lambda) - 1.0) / lambda
            }
        }
    })
}

/// First derivative of the forward transform; strictly positive on the open
/// support.
pub fn derivative(x: f64, bound: Bound, lambda: f64) -> Result<f64> {
    log_derivative(x, bound, lambda).map(f64::exp)
}

/// Log of the first derivative, evaluated directly to avoid overflow.
pub fn log_derivative(x: f64, bound: Bound, lambda: f64) -> Result<f64> {
    check_interior(x, bound)?;
    Ok(match bound {
        Bound::Unbounded => 0.0,
        Bound::LowerBounded { lower } => (lambda - 1.0) * (x - lower).ln(),
        Bound::DoublyBounded { lower, upper } => {
            if lambda.abs() < LAMBDA_ZERO_EPS {
                (1.0 / (x - lower) + 1.0 / (upper - x)).ln()
            } else {
                let r = (x - lower) / (upper - x);
                (lambda - 1.0) * r.ln() + (upper - lower).ln() - 2.0 * (upper - x).ln()
            }
        }
    })
}

/// Inverse of the forward transform; the result lies strictly inside the
/// support. Errors when `y` is outside the image of the forward map.
pub fn inverse(y: f64, bound: Bound, lambda: f64) -> Result<f64> {
    match bound {
        Bound::Unbounded => Ok(y),
        Bound::LowerBounded { lower } => {
            if lambda.abs() < LAMBDA_ZERO_EPS {
                Ok(lower + y.exp())
            } else {
                let base = lambda * y + 1.0;
                if base <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "y = {y} outside the image of the forward map for lambda = {lambda}"
                    )));
                }
                Ok(lower + pow_pos(base, 1.0 / lambda))
            }
        }
        Bound::DoublyBounded { lower, upper } => {
            let r = if lambda.abs() < LAMBDA_ZERO_EPS {
                y.exp()
            } else {
                let base = lambda * y + 1.0;
                if base <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "y = {y} outside the image of the forward map for lambda = {lambda}"
                    )));
                }
                pow_pos(base, 1.0 / lambda)
            };
            // x = (l + u r) / (1 + r); guard the r -> inf limit
            if r.is_infinite() {
                Ok(upper)
            } else {
                Ok((lower + upper * r) / (1.0 + r))
            }
        }
    }
}

/// Per-variable transformation powers with fixed/free flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub lambda: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl TransformParams {
    /// Default parameterization for the given bounds: bounded variables start
    /// at lambda = 1 and are free; unbounded variables are identity-mapped
    /// with lambda fixed at 1.
    pub fn for_bounds(bounds: &BoundsSpec) -> Self {
        let lambda = vec![1.0; bounds.dim()];
        let fixed = bounds
            .iter()
            .map(|b| matches!(b, Bound::Unbounded))
            .collect();
        Self { lambda, fixed }
    }

    pub fn d(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_free(&self) -> usize {
        self.fixed.iter().filter(|f| !**f).count()
    }

    pub fn check(&self, bounds: &BoundsSpec, lambda_box: (f64, f64)) -> Result<()> {
        if self.lambda.len() != bounds.dim() || self.fixed.len() != bounds.dim() {
            return Err(Error::DimensionMismatch(format!(
                "transform parameters for {} variables, bounds declare {}",
                self.lambda.len(),
                bounds.dim()
            )));
        }
        for (j, b) in bounds.iter().enumerate() {
            if matches!(b, Bound::Unbounded) && (self.lambda[j] != 1.0 || !self.fixed[j]) {
                return Err(Error::InvalidArgument(format!(
                    "unbounded variable {j} must have lambda = 1 held fixed"
                )));
            }
            if !self.fixed[j] && (self.lambda[j] < lambda_box.0 || self.lambda[j] > lambda_box.1) {
                return Err(Error::InvalidArgument(format!(
                    "lambda[{j}] = {} outside the search box [{}, {}]",
                    self.lambda[j], lambda_box.0, lambda_box.1
                )));
            }
        }
        Ok(())
    }
}

/// Sum over coordinates of the log first derivatives, i.e. the log-Jacobian
/// of the coordinate-independent transformation at one observation.
pub fn log_jacobian(x_row: &[f64], bounds: &BoundsSpec, params: &TransformParams) -> Result<f64> {
    if x_row.len() != bounds.dim() || params.d() != bounds.dim() {
        return Err(Error::DimensionMismatch(
            "row, bounds, and transform parameters must agree in dimension".into(),
        ));
    }
    let mut total = 0.0;
    for (j, &x) in x_row.iter().enumerate() {
        total += log_derivative(x, bounds.get(j), params.lambda[j]).map_err(|_| {
            Error::OutsideSupport {
                column: j,
                value: x,
            }
        })?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LB: Bound = Bound::LowerBounded { lower: 0.0 };
    const DB: Bound = Bound::DoublyBounded {
        lower: 0.0,
        upper: 1.0,
    };

    #[test]
    fn forward_known_values() {
        assert_relative_eq!(forward(1.0, LB, 0.0).unwrap(), 0.0);
        assert_relative_eq!(forward(4.0, LB, 0.5).unwrap(), 2.0);
        assert_relative_eq!(forward(0.5, DB, 0.0).unwrap(), 0.0);
        // log(0.75/0.25) = log 3
        assert_relative_eq!(
            forward(0.75, DB, 0.0).unwrap(),
            3.0_f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn forward_rejects_boundary_and_exterior() {
        assert!(forward(0.0, LB, 0.5).is_err());
        assert!(forward(-1.0, LB, 0.5).is_err());
        assert!(forward(1.0, DB, 0.0).is_err());
    }

    #[test]
    fn derivative_known_values() {
        assert_relative_eq!(derivative(3.7, LB, 1.0).unwrap(), 1.0);
        assert_relative_eq!(derivative(0.5, DB, 0.0).unwrap(), 4.0);
        assert_relative_eq!(derivative(1.0, Bound::Unbounded, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn derivative_matches_finite_differences_at_enzyme_power() {
        // centered finite-difference oracle
        let lambda = 0.3666;
        let x = 0.2;
        let h = 1e-6;
        let fd = (forward(x + h, LB, lambda).unwrap() - forward(x - h, LB, lambda).unwrap())
            / (2.0 * h);
        let an = derivative(x, LB, lambda).unwrap();
        assert_relative_eq!(an, fd, max_relative = 1e-6);
    }

    #[test]
    fn inverse_known_values() {
        assert_relative_eq!(inverse(0.0, LB, 0.0).unwrap(), 1.0);
        assert_relative_eq!(inverse(0.0, DB, 0.0).unwrap(), 0.5);
        // ((x - 2)^0.5 - 1) / 0.5 = 2  =>  x = 6
        let lb2 = Bound::LowerBounded { lower: 2.0 };
        assert_relative_eq!(inverse(2.0, lb2, 0.5).unwrap(), 6.0, max_relative = 1e-12);
    }

    #[test]
    fn inverse_rejects_out_of_image() {
        // lambda = 0.5: image is (-2, inf)
        assert!(inverse(-2.0, LB, 0.5).is_err());
        assert!(inverse(-5.0, LB, 0.5).is_err());
    }

    #[test]
    fn log_jacobian_known_values() {
        let unb = BoundsSpec::unbounded(2);
        let p = TransformParams::for_bounds(&unb);
        assert_relative_eq!(log_jacobian(&[3.0, -1.0], &unb, &p).unwrap(), 0.0);

        let lb2 = BoundsSpec::all_lower(2, 0.0).unwrap();
        let p1 = TransformParams {
            lambda: vec![1.0, 1.0],
            fixed: vec![false, false],
        };
        assert_relative_eq!(log_jacobian(&[0.3, 2.0], &lb2, &p1).unwrap(), 0.0);

        let db2 = BoundsSpec::new(vec![DB, DB]).unwrap();
        let p0 = TransformParams {
            lambda: vec![0.0, 0.0],
            fixed: vec![false, false],
        };
        // derivative 4 in each coordinate -> log 16
        assert_relative_eq!(
            log_jacobian(&[0.5, 0.5], &db2, &p0).unwrap(),
            16.0_f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn unbounded_requires_fixed_unit_lambda() {
        let bounds = BoundsSpec::unbounded(1);
        let bad = TransformParams {
            lambda: vec![0.5],
            fixed: vec![true],
        };
        assert!(bad.check(&bounds, LAMBDA_BOX).is_err());
    }
}
