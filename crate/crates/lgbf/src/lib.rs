//! Grid-based Bayesian filtering with point-mass densities stored in
//! canonical polyadic (CPD) tensor format.
//!
//! The crate is organised in four layers:
//!
//! * [`cpd`] — low-rank tensor algebra: CPD construction, factored Hadamard
//!   products, rank rounding by alternating least squares, truncated SVD and
//!   invariant-mode embedding.
//! * [`grid`] — axes-aligned equidistant grids, point-mass densities over
//!   them (dense or CPD weighted), normalisation, moments and the 1-D
//!   interpolation/convolution kernels used by the filters.
//! * [`tan`] — the terrain-aided-navigation problem instance: constant
//!   velocity dynamics, terrain rasters, measurement models, likelihood
//!   matrices and trajectory simulation.
//! * [`filters`] — the estimators: the CPD Lagrangian grid filter, the
//!   full-tensor grid filter used as its oracle, a bootstrap particle filter
//!   and an unscented Kalman filter.

pub mod cpd;
pub mod filters;
pub mod grid;
pub mod tan;

pub use cpd::{CpdError, CpdTensor, DenseTensor, SvdFactors};
pub use grid::{AxisGrid, GaussianMoments, GridError, Pmd, Weights};
