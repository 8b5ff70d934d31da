//! Stochastic frontier analysis toolkit.
//!
//! Three composed-error families are supported: normal-exponential,
//! normal-half-normal (both with `σ_u(z) = exp(γ0 + γ z)`), and
//! normal-discrete with a two-point inefficiency support that may be scaled
//! by the determinant `z`. On top of the densities sit the JLMS and
//! Battese–Coelli efficiency predictors, their marginal effects with
//! respect to `σ_u` and `z`, a Nelder–Mead maximum-likelihood fitter, seeded
//! data generators and the misspecification experiments.

// `!(x > 0.0)` rejects NaN as well as non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod experiments;
pub mod margins;
pub mod models;
pub mod predictors;
pub mod quadrature;
pub mod simulate;
pub mod specfun;
pub mod stats;

pub use error::{Result, SfaError};
pub use estimation::{fit, maximize, FitOptions, FitResult};
pub use margins::MarginalRecord;
pub use models::{Dataset, DiscreteComponents, Family, FamilyParams, ModelSpec, Params, ScaleLink};
pub use predictors::EfficiencyRecord;
pub use simulate::SimulatedSample;
