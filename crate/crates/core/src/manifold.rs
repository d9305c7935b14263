//! Warped-product geometry on `R+ x S^{d-1}`.
//!
//! A feature `x` is stored as `(r, theta)` with `x = r * theta`. Velocities are
//! split into a radial speed and an angular velocity tangent to the sphere at
//! `theta`, measured in radians per unit time. The warp `phi(r)` only enters
//! through the metric (loss weighting, Christoffel coupling); the exponential
//! map used for integration moves radius and direction independently.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::vecops::{dot, norm, normalize_in_place};
use crate::{Error, Result};

/// Smallest feature norm accepted by [`polar_decompose`] and produced by [`exp_map`].
pub const EPS_NORM: f64 = 1e-8;
/// Arc lengths below this leave the direction untouched in [`exp_map`].
pub const EPS_ANGLE: f64 = 1e-12;
/// Lower end of the radial domain for the `sinh` warp (`sinh(0) = 0`).
pub const HYPERBOLIC_MIN_RADIUS: f64 = 1e-3;

const UNIT_TOL: f64 = 1e-12;

/// Radial warping profile of the metric `dr^2 + phi(r)^2 dtheta^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WarpFunction {
    /// `phi(r) = r`: flat ambient space in polar coordinates.
    Euclidean,
    /// `phi(r) = sinh(r)`.
    Hyperbolic,
    /// `phi(r) = c`: the decoupled cylinder.
    Constant(f64),
}

impl WarpFunction {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "constant warp must be positive and finite, got {c}"
            )));
        }
        Ok(WarpFunction::Constant(c))
    }

    pub fn phi(&self, r: f64) -> f64 {
        match *self {
            WarpFunction::Euclidean => r,
            WarpFunction::Hyperbolic => r.sinh(),
            WarpFunction::Constant(c) => c,
        }
    }

    pub fn dphi(&self, r: f64) -> f64 {
        match *self {
            WarpFunction::Euclidean => 1.0,
            WarpFunction::Hyperbolic => r.cosh(),
            WarpFunction::Constant(_) => 0.0,
        }
    }

    /// `phi'(r) / phi(r)`, the Christoffel symbol `Gamma^theta_{r theta}`.
    pub fn log_derivative(&self, r: f64) -> f64 {
        match *self {
            WarpFunction::Euclidean => 1.0 / r,
            WarpFunction::Hyperbolic => 1.0 / r.tanh(),
            WarpFunction::Constant(_) => 0.0,
        }
    }

    /// Smallest radius at which `phi > 0` is guaranteed.
    pub fn min_radius(&self) -> f64 {
        match self {
            WarpFunction::Hyperbolic => HYPERBOLIC_MIN_RADIUS,
            _ => EPS_NORM,
        }
    }

    pub fn check_radius(&self, r: f64) -> Result<()> {
        if r.is_finite() && r >= self.min_radius() {
            Ok(())
        } else {
            Err(Error::WarpDomain {
                radius: r,
                warp: self.to_string(),
            })
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, WarpFunction::Constant(_))
    }
}

impl fmt::Display for WarpFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WarpFunction::Euclidean => f.write_str("euclidean"),
            WarpFunction::Hyperbolic => f.write_str("hyperbolic"),
            WarpFunction::Constant(c) => write!(f, "constant:{c}"),
        }
    }
}

impl FromStr for WarpFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" => Ok(WarpFunction::Euclidean),
            "hyperbolic" => Ok(WarpFunction::Hyperbolic),
            other => {
                let value = other.strip_prefix("constant:").ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown warp '{s}' (expected euclidean, hyperbolic or constant:<c>)"
                    ))
                })?;
                let c: f64 = value.parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad constant in warp '{s}'"))
                })?;
                WarpFunction::constant(c)
            }
        }
    }
}

impl TryFrom<String> for WarpFunction {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WarpFunction> for String {
    fn from(w: WarpFunction) -> String {
        w.to_string()
    }
}

/// A feature as radius plus unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarPoint {
    r: f64,
    theta: Vec<f64>,
}

impl PolarPoint {
    /// Validating constructor: `r > 0` and `| |theta| - 1 | <= 1e-12`.
    pub fn new(r: f64, theta: Vec<f64>) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
        }
        let n = norm(&theta);
        if !((n - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::InvalidArgument(format!(
                "direction must be unit length, got norm {n}"
            )));
        }
        Ok(Self { r, theta })
    }

    /// Builds a point from an arbitrary non-zero direction, normalizing it.
    pub fn from_direction(r: f64, mut direction: Vec<f64>) -> Result<Self> {
        let n = normalize_in_place(&mut direction);
        if !(n > EPS_NORM) {
            return Err(Error::DegenerateInput { norm: n, eps: EPS_NORM });
        }
        Self::new(r, direction)
    }

    pub(crate) fn from_parts(r: f64, mut theta: Vec<f64>) -> Self {
        normalize_in_place(&mut theta);
        Self { r, theta }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn into_parts(self) -> (f64, Vec<f64>) {
        (self.r, self.theta)
    }
}

/// Velocity split into radial speed and angular velocity (rad / unit time).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub v_rad: f64,
    pub v_ang: Vec<f64>,
}

impl TangentVector {
    pub fn new(v_rad: f64, v_ang: Vec<f64>) -> Self {
        Self { v_rad, v_ang }
    }

    pub fn zero(d: usize) -> Self {
        Self {
            v_rad: 0.0,
            v_ang: vec![0.0; d],
        }
    }

    pub fn angular_speed(&self) -> f64 {
        norm(&self.v_ang)
    }

    /// Ambient vector `v_rad * theta + r * v_ang` at base point `p`.
    pub fn to_ambient(&self, p: &PolarPoint) -> Vec<f64> {
        p.theta
            .iter()
            .zip(&self.v_ang)
            .map(|(t, a)| self.v_rad * t + p.r * a)
            .collect()
    }
}

pub fn polar_decompose(x: &[f64]) -> Result<PolarPoint> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "polar decomposition needs d >= 2, got {}",
            x.len()
        )));
    }
    let r = norm(x);
    if !(r > EPS_NORM) || !r.is_finite() {
        return Err(Error::DegenerateInput { norm: r, eps: EPS_NORM });
    }
    let theta = x.iter().map(|v| v / r).collect();
    Ok(PolarPoint { r, theta })
}

pub fn assemble(p: &PolarPoint) -> Vec<f64> {
    p.theta.iter().map(|t| p.r * t).collect()
}

/// Splits an ambient velocity at `p` into `(<v, theta>, (v - v_rad theta) / r)`.
pub fn project_to_tangent(v_ambient: &[f64], p: &PolarPoint) -> Result<TangentVector> {
    if v_ambient.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: v_ambient.len(),
        });
    }
    let mut v_rad = dot(v_ambient, &p.theta);
    let mut orth: Vec<f64> = v_ambient
        .iter()
        .zip(&p.theta)
        .map(|(v, t)| v - v_rad * t)
        .collect();
    // second Gram-Schmidt pass; the residual is folded back into v_rad so the
    // reconstruction stays exact
    let residual = dot(&orth, &p.theta);
    for (o, t) in orth.iter_mut().zip(&p.theta) {
        *o -= residual * t;
    }
    v_rad += residual;
    let inv_r = 1.0 / p.r;
    for o in orth.iter_mut() {
        *o *= inv_r;
    }
    Ok(TangentVector { v_rad, v_ang: orth })
}

/// Exponential map on the cylinder: `r + v_rad dt` and a great-circle move
/// of arc length `|v_ang| dt`.
pub fn exp_map(p: &PolarPoint, v: &TangentVector, dt: f64) -> Result<PolarPoint> {
    if v.v_ang.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: v.v_ang.len(),
        });
    }
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be finite and >= 0, got {dt}")));
    }
    let r_new = p.r + v.v_rad * dt;
    if !(r_new > EPS_NORM) || !r_new.is_finite() {
        return Err(Error::RadialUnderflow { radius: r_new });
    }
    let theta = sphere_exp(&p.theta, &v.v_ang, dt);
    Ok(PolarPoint { r: r_new, theta })
}

/// Great-circle step from unit `theta` along tangent `v` for time `dt`.
pub fn sphere_exp(theta: &[f64], v: &[f64], dt: f64) -> Vec<f64> {
    // strip any component along theta before normalizing the direction
    let along = dot(v, theta);
    let mut dir: Vec<f64> = v.iter().zip(theta).map(|(a, t)| a - along * t).collect();
    let speed = norm(&dir);
    let angle = speed * dt;
    if !(angle >= EPS_ANGLE) {
        return theta.to_vec();
    }
    for x in dir.iter_mut() {
        *x /= speed;
    }
    let (s, c) = angle.sin_cos();
    let mut out: Vec<f64> = theta.iter().zip(&dir).map(|(t, u)| c * t + s * u).collect();
    normalize_in_place(&mut out);
    out
}

/// Sphere logarithm: tangent vector at `theta` whose exponential reaches `target`
/// in unit time. Returns zero for coincident points and for antipodes.
pub fn sphere_log(theta: &[f64], target: &[f64]) -> Vec<f64> {
    let c = dot(theta, target);
    let mut orth: Vec<f64> = target.iter().zip(theta).map(|(y, t)| y - c * t).collect();
    let n = norm(&orth);
    if n == 0.0 {
        return vec![0.0; theta.len()];
    }
    let angle = crate::vecops::unit_angle(theta, target);
    for o in orth.iter_mut() {
        *o *= angle / n;
    }
    orth
}

/// Coefficient multiplying the angular velocity in the covariant angular
/// acceleration, `-2 phi'(r) / phi(r) * r_dot`. Identically zero for a
/// constant warp.
pub fn angular_coupling_coefficient(warp: WarpFunction, r: f64, r_dot: f64) -> f64 {
    if warp.is_constant() {
        return 0.0;
    }
    -2.0 * warp.log_derivative(r) * r_dot
}
