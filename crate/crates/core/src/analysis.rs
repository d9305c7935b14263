//! Measurements on paths and features: angular speed profiles, one-step
//! truncation error of the exponential Euler step, and radius statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geodesics::{dual_geodesic, general_warp_geodesic, GeodesicPath};
use crate::manifold::{sphere_exp, PolarPoint, WarpFunction};
use crate::ode::{self, PlaneState};
use crate::vecops::{lincomb, norm, unit_angle};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub t_grid: Vec<f64>,
    pub omega: Vec<f64>,
    pub r: Vec<f64>,
    /// Population standard deviation over mean; 0 when the mean is 0.
    pub omega_cv: f64,
}

impl SpeedProfile {
    pub fn argmax_omega(&self) -> usize {
        argmax(&self.omega)
    }

    pub fn argmin_r(&self) -> usize {
        let neg: Vec<f64> = self.r.iter().map(|v| -v).collect();
        argmax(&neg)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

/// Angular speed on a uniform grid of `n_grid` points over `[0, 1]`, from
/// central differences of the direction with step equal to the grid spacing.
/// End points difference against the path extended past `[0, 1]`.
pub fn angular_speed_profile(path: &GeodesicPath, n_grid: usize) -> Result<SpeedProfile> {
    if n_grid < 3 {
        return Err(Error::InvalidArgument(format!("n_grid must be >= 3, got {n_grid}")));
    }
    let h = 1.0 / (n_grid - 1) as f64;
    let t_grid: Vec<f64> = (0..n_grid).map(|i| i as f64 * h).collect();
    let mut omega = Vec::with_capacity(n_grid);
    let mut r = Vec::with_capacity(n_grid);
    for &t in &t_grid {
        let before = path.evaluate(t - h);
        let after = path.evaluate(t + h);
        omega.push(unit_angle(before.theta(), after.theta()) / (2.0 * h));
        r.push(path.evaluate(t).r());
    }
    let omega_cv = coefficient_of_variation(&omega);
    Ok(SpeedProfile { t_grid, omega, r, omega_cv })
}

/// Same measurement on a recorded trajectory with uniform time steps; end
/// points use one-sided differences.
pub fn trajectory_speed_profile(trajectory: &[PolarPoint]) -> Result<SpeedProfile> {
    let n = trajectory.len();
    if n < 3 {
        return Err(Error::InvalidArgument("trajectory needs at least 3 points".into()));
    }
    let h = 1.0 / (n - 1) as f64;
    let angle = |a: usize, b: usize| unit_angle(trajectory[a].theta(), trajectory[b].theta());
    let omega: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => angle(0, 1) / h,
            i if i == n - 1 => angle(n - 2, n - 1) / h,
            i => angle(i - 1, i + 1) / (2.0 * h),
        })
        .collect();
    Ok(SpeedProfile {
        t_grid: (0..n).map(|i| i as f64 * h).collect(),
        omega_cv: coefficient_of_variation(&omega),
        r: trajectory.iter().map(PolarPoint::r).collect(),
        omega,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub warp: String,
    pub t0: f64,
    pub dt_values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln(error)` against `ln(dt)`, over points above
    /// the noise floor; NaN when fewer than two remain.
    pub fitted_slope: f64,
    /// Points used by the fit.
    pub fitted_points: usize,
    /// `gamma_r'(t0)` of the reference path.
    pub radial_speed: f64,
    /// `|phi'/phi * gamma_r'(t0)| * |gamma_theta'(t0)|`.
    pub leading_coefficient: f64,
}

pub const DEFAULT_T0: f64 = 0.3;
/// Fine RK4 sub-steps per reference step.
pub const ORACLE_SUBSTEPS: usize = 10_000;
const NOISE_FLOOR: f64 = 10.0 * f64::EPSILON;

/// `n` logarithmically spaced values from `hi` down to `lo`.
pub fn log_spaced(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn fit_log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn plane_direction(e1: &[f64], e2: &[f64], psi: f64) -> Vec<f64> {
    let (s, c) = psi.sin_cos();
    lincomb(e1, c, e2, s)
}

/// One-step angular error of `Exp_{theta(t0)}(dt theta'(t0))` against the
/// true geodesic of `warp` between `p0` and `p1`, for each `dt`.
pub fn truncation_study(warp: WarpFunction, p0: &PolarPoint, p1: &PolarPoint, dt_values: &[f64], t0: f64) -> Result<TruncationReport> {
    if dt_values.is_empty() || dt_values.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument("dt values must be positive".into()));
    }
    if dt_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("dt values must be strictly decreasing".into()));
    }
    if !(0.0..1.0).contains(&t0) {
        return Err(Error::InvalidArgument(format!("t0 must lie in [0, 1), got {t0}")));
    }
    let mut errors = Vec::with_capacity(dt_values.len());
    let (radial_speed, leading_coefficient);
    if warp.is_constant() {
        // the true geodesic is closed form
        let path = dual_geodesic(p0, p1)?;
        let here = path.evaluate(t0);
        let vel = path.velocity(t0);
        radial_speed = vel.v_rad;
        leading_coefficient = 0.0;
        for &dt in dt_values {
            let pred = sphere_exp(here.theta(), &vel.v_ang, dt);
            errors.push(unit_angle(&pred, path.evaluate(t0 + dt).theta()));
        }
    } else {
        let path = general_warp_geodesic(p0, p1, warp, 256)?;
        let (e1, e2, start) = path.plane_frame().expect("numerical path has a plane frame");
        let (e1, e2) = (e1.to_vec(), e2.to_vec());
        let at_t0: PlaneState = ode::integrate(warp, start, t0, ORACLE_SUBSTEPS).ok_or(Error::WarpDomain {
            radius: start[0],
            warp: warp.to_string(),
        })?;
        let [r, rd, psi, pd] = at_t0;
        radial_speed = rd;
        leading_coefficient = (warp.log_derivative(r) * rd).abs() * pd.abs();
        let theta = plane_direction(&e1, &e2, psi);
        let theta_dot = lincomb(&e1, -pd * psi.sin(), &e2, pd * psi.cos());
        for &dt in dt_values {
            let truth = ode::integrate(warp, at_t0, dt, ORACLE_SUBSTEPS).ok_or(Error::WarpDomain {
                radius: r,
                warp: warp.to_string(),
            })?;
            let pred = sphere_exp(&theta, &theta_dot, dt);
            errors.push(unit_angle(&pred, &plane_direction(&e1, &e2, truth[2])));
        }
    }
    let (fx, fy): (Vec<f64>, Vec<f64>) = dt_values
        .iter()
        .zip(&errors)
        .filter(|(_, &e)| e > NOISE_FLOOR)
        .map(|(&d, &e)| (d, e))
        .unzip();
    Ok(TruncationReport {
        warp: warp.to_string(),
        t0,
        dt_values: dt_values.to_vec(),
        fitted_slope: fit_log_log_slope(&fx, &fy),
        fitted_points: fx.len(),
        errors,
        radial_speed,
        leading_coefficient,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSummary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize_radii(radii: &[f64]) -> Option<RadialSummary> {
    if radii.is_empty() {
        return None;
    }
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    Some(RadialSummary {
        count: sorted.len(),
        mean,
        std,
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Norm statistics per group. `groups` lists every expected group so that an
/// empty one is reported rather than silently dropped.
pub fn radial_stats(features: &[Vec<f64>], labels: &[String], groups: &[String]) -> Result<BTreeMap<String, RadialSummary>> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let mut radii: BTreeMap<String, Vec<f64>> = groups.iter().map(|g| (g.clone(), Vec::new())).collect();
    for (x, g) in features.iter().zip(labels) {
        radii.entry(g.clone()).or_default().push(norm(x));
    }
    radii
        .into_iter()
        .map(|(g, r)| summarize_radii(&r).map(|s| (g.clone(), s)).ok_or(Error::EmptyGroup(g)))
        .collect()
}
