//! Nonparametric estimation of the component densities of a finite mixture in
//! which every observation comes with its own, known vector of mixing
//! proportions.
//!
//! The estimator maximizes a smoothed log-likelihood over weighted kernel
//! density estimates. A majorization-minimization (MM) iteration does the
//! maximization, and each component's bandwidth can be re-selected along the
//! way with a direct plug-in rule.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod density;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod mm;
pub mod sample;
pub mod simulation;
pub mod smoothing;

pub use bandwidth::{fit_adaptive, plugin_bandwidth, select_component_subsets, SubsetSelection};
pub use density::WeightedKernelDensity;
pub use error::{Error, Result};
pub use grid::{trapezoid, Grid, GridDensity, LogGridDensity};
pub use kernel::Kernel;
pub use mm::{
    fit_fixed_bandwidth, mm_update, posterior_weights, FitConfig, FitResult, Initialization,
    WeightMatrix,
};
pub use sample::MixtureSample;
pub use smoothing::{mixture_density_at_sample, nonlinear_smooth, smoothed_loglik};
