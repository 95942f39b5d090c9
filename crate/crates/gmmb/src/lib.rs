//! Model-based clustering for bounded data.
//!
//! Bounded variables are mapped to the real line by a monotone range-power
//! transformation, a Gaussian mixture is fitted on the transformed scale by an
//! ECM algorithm that estimates the transformation powers jointly with the
//! mixture parameters, and densities and cluster assignments are reported on
//! the original bounded scale.

pub mod data;
pub mod diagnostics;
pub mod ecm;
pub mod error;
pub mod kmeans;
pub mod mixture;
pub mod optim;
pub mod transform;

pub use data::{Bound, BoundsSpec, Dataset, ValidationReport};
pub use diagnostics::{adjusted_rand, bic, entropy_measures, icl, map_classify, sweep, CriterionReport, SweepResult};
pub use ecm::{fit, FitConfig, FitResult, Responsibilities};
pub use error::{Error, Result};
pub use mixture::{count_free_parameters, CovarianceFactors, MixtureParams, ModelCode};
pub use transform::TransformParams;
