//! Flow matching on warped product manifolds.
//!
//! Features are split into a radius and a unit direction, and transport is
//! modelled on `R+ x S^{d-1}` with metric `ds^2 = dr^2 + phi(r)^2 dtheta^2`.
//! A constant warp decouples the two factors: radii move linearly and
//! directions follow constant-speed great circles.
//!
//! Module map:
//! - [`manifold`]: polar decomposition, tangent projection, exponential map.
//! - [`geodesics`]: closed-form dual geodesics, the normalized chord, and a
//!   shooting solver for arbitrary warps.
//! - [`velocity_net`]: a small MLP velocity field with hand-written backprop,
//!   AdamW and a binary checkpoint format.
//! - [`flowmatch`]: training targets, the metric-aware loss and the epoch loop.
//! - [`inference`]: guided transport with exponential-map or ambient Euler steps.
//! - [`analysis`]: angular speed profiles, truncation studies, radial statistics.
//! - [`data`]: synthetic paired tasks, von Mises-Fisher sampling, feature files.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
mod error;
pub mod flowmatch;
pub mod geodesics;
pub mod inference;
pub mod manifold;
pub mod ode;
pub mod vecops;
pub mod velocity_net;

pub use error::{Error, Result};
pub use manifold::{PolarPoint, TangentVector, WarpFunction};
