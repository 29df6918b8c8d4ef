//! Height distributions of local maxima of stationary Gaussian and t random
//! fields observed on regular lattices.
//!
//! The library provides three routes to peak p-values:
//!
//! * [`mcdlm`] — Monte Carlo sampling of the (center, neighbors) joint
//!   distribution under an arbitrary neighborhood covariance, for Gaussian
//!   and multivariate-t models.
//! * [`adlm`] — a closed-form density for partially connected neighborhoods
//!   under separable Gaussian correlation.
//! * [`lookup`] — a precomputed, spline-smoothed table of the Monte Carlo
//!   CDF over a grid of adjacent-voxel correlations.
//!
//! Supporting modules build neighborhood covariances analytically or from
//! data ([`cov`]), simulate synthetic field ensembles ([`fieldsim`]), run the
//! one-sample t pipeline ([`tstat`]), and evaluate calibration ([`validate`]).

// `!(x > 0.0)` deliberately rejects NaN alongside nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adlm;
pub mod cov;
pub mod error;
pub mod fieldsim;
pub mod io;
pub mod lattice;
pub mod lookup;
pub mod mcdlm;
pub mod quad;
pub mod spline;
pub mod tstat;
pub mod validate;

pub use error::{Error, Result};
pub use lattice::{BoundaryPolicy, Field, LatticeSpec, Neighborhood, NeighborhoodKind, PeakRecord};

// nalgebra types appear in the public covariance API
pub use nalgebra;
