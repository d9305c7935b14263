//! Ground-truth trajectories between two polar points.
//!
//! - [`dual_geodesic`]: linear radius and slerp direction, the geodesic of any
//!   constant warp.
//! - [`euclidean_chord`]: straight line between the (by default normalized)
//!   endpoints; radius sags and angular speed peaks mid-path.
//! - [`general_warp_geodesic`]: shooting solution of the in-plane geodesic
//!   equations for an arbitrary warp.

use std::fmt;

use crate::manifold::{polar_decompose, PolarPoint, TangentVector, WarpFunction};
use crate::ode::{self, PlaneState};
use crate::vecops::{dot, lincomb, norm, normalize_in_place, unit_angle};
use crate::{Error, Result};

/// Pairs closer than this to antipodal are rejected.
pub const EPS_ANTIPODAL: f64 = 1e-6;
/// Below this angle slerp degrades to normalized linear interpolation.
pub const EPS_SMALL_ANGLE: f64 = 1e-7;
pub const MAX_SHOOTING_ITERS: usize = 50;
pub const SHOOTING_TOL: f64 = 1e-8;
pub const MIN_GRID: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeodesicKind {
    DualGeodesic,
    EuclideanChord,
    NumericalWarp(WarpFunction),
}

impl fmt::Display for GeodesicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeodesicKind::DualGeodesic => f.write_str("dual"),
            GeodesicKind::EuclideanChord => f.write_str("chord"),
            GeodesicKind::NumericalWarp(w) => write!(f, "numerical({w})"),
        }
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Dual {
        // unit vector orthogonal to theta0 in the plane of theta0, theta1
        e2: Option<Vec<f64>>,
    },
    Chord {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    Numerical {
        warp: WarpFunction,
        e1: Vec<f64>,
        e2: Vec<f64>,
        nodes: Vec<PlaneState>,
    },
}

/// An endpoint pair plus an evaluator for `(gamma_r(t), gamma_theta(t))` and
/// its time derivative.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    p0: PolarPoint,
    p1: PolarPoint,
    alpha: f64,
    kind: GeodesicKind,
    repr: Repr,
}

fn check_dims(p0: &PolarPoint, p1: &PolarPoint) -> Result<()> {
    if p0.dim() != p1.dim() {
        return Err(Error::DimensionMismatch {
            expected: p0.dim(),
            got: p1.dim(),
        });
    }
    Ok(())
}

fn checked_angle(p0: &PolarPoint, p1: &PolarPoint) -> Result<f64> {
    check_dims(p0, p1)?;
    let alpha = unit_angle(p0.theta(), p1.theta());
    if alpha >= std::f64::consts::PI - EPS_ANTIPODAL {
        return Err(Error::AntipodalEndpoints {
            alpha,
            eps: EPS_ANTIPODAL,
        });
    }
    Ok(alpha)
}

/// Unit vector orthogonal to `theta0` pointing towards `theta1`, or any unit
/// vector orthogonal to `theta0` when the two (nearly) coincide.
fn plane_partner(theta0: &[f64], theta1: &[f64]) -> Vec<f64> {
    let c = dot(theta0, theta1);
    let mut e2 = lincomb(theta1, 1.0, theta0, -c);
    let n = normalize_in_place(&mut e2);
    if n > 1e-10 {
        // one more pass against theta0, then renormalize
        let c2 = dot(&e2, theta0);
        for (e, t) in e2.iter_mut().zip(theta0) {
            *e -= c2 * t;
        }
        normalize_in_place(&mut e2);
        return e2;
    }
    // coincident directions: pick the basis vector least aligned with theta0
    let k = theta0
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut basis = vec![0.0; theta0.len()];
    basis[k] = 1.0;
    let c = dot(&basis, theta0);
    let mut e2 = lincomb(&basis, 1.0, theta0, -c);
    normalize_in_place(&mut e2);
    e2
}

pub fn dual_geodesic(p0: &PolarPoint, p1: &PolarPoint) -> Result<GeodesicPath> {
    let alpha = checked_angle(p0, p1)?;
    let e2 = (alpha >= EPS_SMALL_ANGLE).then(|| plane_partner(p0.theta(), p1.theta()));
    Ok(GeodesicPath {
        p0: p0.clone(),
        p1: p1.clone(),
        alpha,
        kind: GeodesicKind::DualGeodesic,
        repr: Repr::Dual { e2 },
    })
}

/// Straight chord between the endpoint directions (radii forced to 1).
pub fn euclidean_chord(p0: &PolarPoint, p1: &PolarPoint) -> Result<GeodesicPath> {
    euclidean_chord_with(p0, p1, true)
}

/// Straight chord; with `normalize = false` the chord joins the raw features
/// `r0 theta0` and `r1 theta1`.
pub fn euclidean_chord_with(
    p0: &PolarPoint,
    p1: &PolarPoint,
    normalize: bool,
) -> Result<GeodesicPath> {
    let alpha = checked_angle(p0, p1)?;
    let (a, b) = if normalize {
        (p0.theta().to_vec(), p1.theta().to_vec())
    } else {
        (
            crate::manifold::assemble(p0),
            crate::manifold::assemble(p1),
        )
    };
    Ok(GeodesicPath {
        p0: p0.clone(),
        p1: p1.clone(),
        alpha,
        kind: GeodesicKind::EuclideanChord,
        repr: Repr::Chord { a, b },
    })
}

/// Solves the in-plane geodesic boundary value problem for `warp` by
/// Newton shooting on the initial velocity `(r_dot(0), psi_dot(0))`, each
/// trial integrated with `n_grid` RK4 steps.
pub fn general_warp_geodesic(
    p0: &PolarPoint,
    p1: &PolarPoint,
    warp: WarpFunction,
    n_grid: usize,
) -> Result<GeodesicPath> {
    if n_grid < MIN_GRID {
        return Err(Error::InvalidArgument(format!(
            "n_grid must be >= {MIN_GRID}, got {n_grid}"
        )));
    }
    let alpha = checked_angle(p0, p1)?;
    warp.check_radius(p0.r())?;
    warp.check_radius(p1.r())?;
    let e1 = p0.theta().to_vec();
    let e2 = plane_partner(p0.theta(), p1.theta());

    let (r0, r1) = (p0.r(), p1.r());
    let velocity = shoot(warp, r0, r1, alpha, n_grid)?;
    let nodes = ode::integrate_nodes(warp, [r0, velocity[0], 0.0, velocity[1]], 1.0, n_grid)
        .ok_or(Error::NoConvergence {
            iterations: 0,
            mismatch: f64::NAN,
        })?;
    Ok(GeodesicPath {
        p0: p0.clone(),
        p1: p1.clone(),
        alpha,
        kind: GeodesicKind::NumericalWarp(warp),
        repr: Repr::Numerical {
            warp,
            e1,
            e2,
            nodes,
        },
    })
}

fn shoot(warp: WarpFunction, r0: f64, r1: f64, alpha: f64, n_grid: usize) -> Result<[f64; 2]> {
    let residual = |u: [f64; 2]| -> Option<[f64; 2]> {
        let end = ode::integrate(warp, [r0, u[0], 0.0, u[1]], 1.0, n_grid)?;
        Some([end[0] - r1, end[2] - alpha])
    };
    let size = |f: [f64; 2]| f[0].abs().max(f[1].abs());

    // the constant-warp solution is the starting guess
    let mut u = [r1 - r0, alpha];
    let mut f = residual(u).ok_or(Error::NoConvergence {
        iterations: 0,
        mismatch: f64::INFINITY,
    })?;
    for iteration in 0..MAX_SHOOTING_ITERS {
        if size(f) < SHOOTING_TOL {
            return Ok(u);
        }
        // central-difference Jacobian
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let h = 1e-6 * u[j].abs().max(1.0);
            let mut up = u;
            let mut um = u;
            up[j] += h;
            um[j] -= h;
            let (fp, fm) = match (residual(up), residual(um)) {
                (Some(fp), Some(fm)) => (fp, fm),
                _ => {
                    return Err(Error::NoConvergence {
                        iterations: iteration,
                        mismatch: size(f),
                    })
                }
            };
            for i in 0..2 {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !det.is_finite() || det.abs() < 1e-300 {
            return Err(Error::NoConvergence {
                iterations: iteration,
                mismatch: size(f),
            });
        }
        let du = [
            (jac[1][1] * f[0] - jac[0][1] * f[1]) / det,
            (-jac[1][0] * f[0] + jac[0][0] * f[1]) / det,
        ];
        // backtracking on the max-norm of the mismatch
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = [u[0] - step * du[0], u[1] - step * du[1]];
            if let Some(ft) = residual(trial) {
                if size(ft) < size(f) {
                    u = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if size(f) < SHOOTING_TOL {
        return Ok(u);
    }
    Err(Error::NoConvergence {
        iterations: MAX_SHOOTING_ITERS,
        mismatch: size(f),
    })
}

impl GeodesicPath {
    pub fn p0(&self) -> &PolarPoint {
        &self.p0
    }

    pub fn p1(&self) -> &PolarPoint {
        &self.p1
    }

    /// Angle between the endpoint directions.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> GeodesicKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.p0.dim()
    }

    /// Point on the path at time `t`. Closed-form kinds extrapolate smoothly
    /// slightly outside `[0, 1]`; the numerical kind extends its end nodes by
    /// a partial RK4 step.
    pub fn evaluate(&self, t: f64) -> PolarPoint {
        match &self.repr {
            Repr::Dual { e2 } => {
                let r = (1.0 - t) * self.p0.r() + t * self.p1.r();
                let theta = match e2 {
                    Some(e2) => {
                        let (s, c) = (t * self.alpha).sin_cos();
                        lincomb(self.p0.theta(), c, e2, s)
                    }
                    None => {
                        // additive form: stays bit-identical for equal endpoints
                        let step = lincomb(self.p1.theta(), t, self.p0.theta(), -t);
                        crate::vecops::add(self.p0.theta(), &step)
                    }
                };
                PolarPoint::from_parts(r, theta)
            }
            Repr::Chord { a, b } => {
                let x = lincomb(a, 1.0 - t, b, t);
                let r = norm(&x);
                PolarPoint::from_parts(r, x)
            }
            Repr::Numerical { warp, e1, e2, nodes } => {
                let s = self.plane_state(*warp, nodes, t);
                let (sn, cs) = s[2].sin_cos();
                PolarPoint::from_parts(s[0], lincomb(e1, cs, e2, sn))
            }
        }
    }

    /// Time derivative `(gamma_r'(t), gamma_theta'(t))`, tangent at `evaluate(t)`.
    pub fn velocity(&self, t: f64) -> TangentVector {
        match &self.repr {
            Repr::Dual { e2 } => {
                let v_rad = self.p1.r() - self.p0.r();
                let v_ang = match e2 {
                    Some(e2) => {
                        let (s, c) = (t * self.alpha).sin_cos();
                        lincomb(self.p0.theta(), -self.alpha * s, e2, self.alpha * c)
                    }
                    None => {
                        let x = lincomb(self.p0.theta(), 1.0 - t, self.p1.theta(), t);
                        let xdot = lincomb(self.p1.theta(), 1.0, self.p0.theta(), -1.0);
                        chord_angular_velocity(&x, &xdot).1
                    }
                };
                TangentVector::new(v_rad, v_ang)
            }
            Repr::Chord { a, b } => {
                let x = lincomb(a, 1.0 - t, b, t);
                let xdot = lincomb(b, 1.0, a, -1.0);
                let (v_rad, v_ang) = chord_angular_velocity(&x, &xdot);
                TangentVector::new(v_rad, v_ang)
            }
            Repr::Numerical { warp, e1, e2, nodes } => {
                let s = self.plane_state(*warp, nodes, t);
                let (sn, cs) = s[2].sin_cos();
                TangentVector::new(s[1], lincomb(e1, -s[3] * sn, e2, s[3] * cs))
            }
        }
    }

    /// Ambient velocity `gamma_r' theta + gamma_r theta'` at time `t`.
    pub fn ambient_velocity(&self, t: f64) -> Vec<f64> {
        self.velocity(t).to_ambient(&self.evaluate(t))
    }

    fn plane_state(&self, warp: WarpFunction, nodes: &[PlaneState], t: f64) -> PlaneState {
        let n = nodes.len() - 1;
        let h = 1.0 / n as f64;
        let k = ((t / h).floor().max(0.0) as usize).min(n - 1);
        let dt = t - k as f64 * h;
        if dt == 0.0 {
            return nodes[k];
        }
        ode::rk4_step(warp, &nodes[k], dt)
    }

    /// Orthonormal plane frame and initial in-plane state of a numerical path.
    pub fn plane_frame(&self) -> Option<(&[f64], &[f64], PlaneState)> {
        match &self.repr {
            Repr::Numerical { e1, e2, nodes, .. } => Some((e1, e2, nodes[0])),
            _ => None,
        }
    }

    /// Grid nodes `(r, r_dot, psi, psi_dot)` of a numerical path.
    pub fn plane_nodes(&self) -> Option<&[PlaneState]> {
        match &self.repr {
            Repr::Numerical { nodes, .. } => Some(nodes),
            _ => None,
        }
    }

    /// Largest residual of the geodesic equations on the grid, with the
    /// accelerations taken by finite differences of the node velocities.
    /// Returns 0 for closed-form kinds.
    pub fn max_covariant_residual(&self) -> f64 {
        let Repr::Numerical { warp, nodes, .. } = &self.repr else {
            return 0.0;
        };
        let n = nodes.len() - 1;
        let h = 1.0 / n as f64;
        let mut worst: f64 = 0.0;
        // fourth-order central differences
        let diff = |k: usize, i: usize| {
            (-nodes[k + 2][i] + 8.0 * nodes[k + 1][i] - 8.0 * nodes[k - 1][i] + nodes[k - 2][i])
                / (12.0 * h)
        };
        for k in 2..n - 1 {
            let [r, rd, _, pd] = nodes[k];
            let r_acc = diff(k, 1);
            let p_acc = diff(k, 3);
            let radial = r_acc - warp.phi(r) * warp.dphi(r) * pd * pd;
            let angular = p_acc + 2.0 * warp.log_derivative(r) * rd * pd;
            worst = worst.max(radial.hypot(angular));
        }
        worst
    }
}

/// Radial speed and angular velocity of the normalized curve `x / |x|`.
fn chord_angular_velocity(x: &[f64], xdot: &[f64]) -> (f64, Vec<f64>) {
    let r = norm(x);
    let theta: Vec<f64> = x.iter().map(|v| v / r).collect();
    let r_dot = dot(xdot, &theta);
    let v_ang = xdot
        .iter()
        .zip(&theta)
        .map(|(v, t)| (v - r_dot * t) / r)
        .collect();
    (r_dot, v_ang)
}

/// Velocity of a dual geodesic; rejects every other kind.
pub fn dual_geodesic_velocity(path: &GeodesicPath, t: f64) -> Result<TangentVector> {
    if path.kind != GeodesicKind::DualGeodesic {
        return Err(Error::WrongKind {
            expected: "dual",
            got: path.kind.to_string(),
        });
    }
    Ok(path.velocity(t))
}

/// Builds a path of the requested kind.
pub fn build_path(kind: GeodesicKind, p0: &PolarPoint, p1: &PolarPoint) -> Result<GeodesicPath> {
    match kind {
        GeodesicKind::DualGeodesic => dual_geodesic(p0, p1),
        GeodesicKind::EuclideanChord => euclidean_chord(p0, p1),
        GeodesicKind::NumericalWarp(w) => general_warp_geodesic(p0, p1, w, 256),
    }
}

/// Convenience: geodesic between two ambient features.
pub fn dual_geodesic_between(x0: &[f64], x1: &[f64]) -> Result<GeodesicPath> {
    dual_geodesic(&polar_decompose(x0)?, &polar_decompose(x1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::sub;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize_in_place(&mut v);
        v
    }

    fn point(rng: &mut ChaCha8Rng, d: usize) -> PolarPoint {
        PolarPoint::new(rng.random_range(0.5..5.0), unit(rng, d)).unwrap()
    }

    fn pt(r: f64, theta: &[f64]) -> PolarPoint {
        PolarPoint::new(r, theta.to_vec()).unwrap()
    }

    fn close(a: &PolarPoint, b: &PolarPoint, tol: f64) -> bool {
        (a.r() - b.r()).abs() <= tol && norm(&sub(a.theta(), b.theta())) <= tol
    }

    #[test]
    fn zero_length_dual_geodesic_is_constant() {
        let p = pt(2.0, &[0.6, 0.8]);
        let path = dual_geodesic(&p, &p).unwrap();
        for i in 0..=10 {
            assert!(close(&path.evaluate(i as f64 / 10.0), &p, 1e-15));
            let v = path.velocity(i as f64 / 10.0);
            assert_eq!(v.v_rad, 0.0);
            assert!(v.angular_speed() < 1e-15);
        }
    }

    #[test]
    fn quarter_circle_midpoint() {
        let path = dual_geodesic(&pt(1.0, &[1.0, 0.0]), &pt(1.0, &[0.0, 1.0])).unwrap();
        let mid = path.evaluate(0.5);
        assert_abs_diff_eq!(mid.r(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mid.theta()[0], FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(mid.theta()[1], FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn radial_part_is_linear() {
        let path = dual_geodesic(&pt(5.0, &[1.0, 0.0]), &pt(25.0, &[0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(path.evaluate(0.25).r(), 10.0, epsilon = 1e-14);
        assert_eq!(path.velocity(0.7).v_rad, 20.0);
    }

    #[test]
    fn dual_matches_slerp_formula_and_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let (p0, p1) = (point(&mut rng, 8), point(&mut rng, 8));
            let path = dual_geodesic(&p0, &p1).unwrap();
            let a = path.alpha();
            assert_abs_diff_eq!(
                a,
                dot(p0.theta(), p1.theta()).clamp(-1.0, 1.0).acos(),
                epsilon = 1e-12
            );
            assert!(close(&path.evaluate(0.0), &p0, 1e-9));
            assert!(close(&path.evaluate(1.0), &p1, 1e-9));
            for i in 0..=20 {
                let t = i as f64 / 20.0;
                let formula = lincomb(
                    p0.theta(),
                    ((1.0 - t) * a).sin() / a.sin(),
                    p1.theta(),
                    (t * a).sin() / a.sin(),
                );
                let got = path.evaluate(t);
                assert!(norm(&sub(got.theta(), &formula)) < 1e-12);
                assert!((norm(got.theta()) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dual_velocity_constant_speed_and_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..50 {
            let (p0, p1) = (point(&mut rng, 6), point(&mut rng, 6));
            let path = dual_geodesic(&p0, &p1).unwrap();
            for i in 0..=100 {
                let t = i as f64 / 100.0;
                let v = dual_geodesic_velocity(&path, t).unwrap();
                assert_abs_diff_eq!(v.angular_speed(), path.alpha(), epsilon = 1e-10);
                assert_abs_diff_eq!(v.v_rad, p1.r() - p0.r(), epsilon = 1e-15);
                let fd = sub(path.evaluate(t + h).theta(), path.evaluate(t - h).theta());
                let fd: Vec<f64> = fd.iter().map(|x| x / (2.0 * h)).collect();
                assert!(norm(&sub(&fd, &v.v_ang)) < 1e-7, "t={t}");
                assert!(dot(&v.v_ang, path.evaluate(t).theta()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn initial_velocity_points_to_orthogonal_part_of_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (p0, p1) = (point(&mut rng, 5), point(&mut rng, 5));
        let path = dual_geodesic(&p0, &p1).unwrap();
        let v0 = path.velocity(0.0);
        let c = dot(p0.theta(), p1.theta());
        let orth = lincomb(p1.theta(), 1.0, p0.theta(), -c);
        let cos = dot(&v0.v_ang, &orth) / (norm(&v0.v_ang) * norm(&orth));
        assert_abs_diff_eq!(cos, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn small_angle_falls_back_to_lerp() {
        let theta1 = {
            let mut v = vec![1.0, 1e-9, 0.0];
            normalize_in_place(&mut v);
            v
        };
        let path = dual_geodesic(&pt(1.0, &[1.0, 0.0, 0.0]), &pt(2.0, &theta1)).unwrap();
        assert!(path.alpha() < EPS_SMALL_ANGLE);
        let mid = path.evaluate(0.5);
        assert!((norm(mid.theta()) - 1.0).abs() < 1e-15);
        assert_abs_diff_eq!(path.velocity(0.5).angular_speed(), path.alpha(), epsilon = 1e-15);
    }

    #[test]
    fn antipodal_and_wrong_kind_are_errors() {
        let a = pt(1.0, &[1.0, 0.0]);
        let b = pt(1.0, &[-1.0, 0.0]);
        assert!(matches!(dual_geodesic(&a, &b), Err(Error::AntipodalEndpoints { .. })));
        assert!(matches!(euclidean_chord(&a, &b), Err(Error::AntipodalEndpoints { .. })));
        let chord = euclidean_chord(&a, &pt(1.0, &[0.0, 1.0])).unwrap();
        assert!(matches!(dual_geodesic_velocity(&chord, 0.5), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn chord_endpoints_midpoint_and_sag() {
        let p0 = pt(3.0, &[1.0, 0.0]);
        let p1 = pt(7.0, &[0.0, 1.0]);
        let chord = euclidean_chord(&p0, &p1).unwrap();
        assert!(close(&chord.evaluate(0.0), &pt(1.0, &[1.0, 0.0]), 1e-15));
        assert!(close(&chord.evaluate(1.0), &pt(1.0, &[0.0, 1.0]), 1e-15));
        let mid = chord.evaluate(0.5);
        assert_abs_diff_eq!(mid.r(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(mid.theta()[0], FRAC_1_SQRT_2, epsilon = 1e-15);
        for i in 1..100 {
            assert!(chord.evaluate(i as f64 / 100.0).r() < 1.0);
        }
        // radial speed changes sign where the radius bottoms out
        assert!(chord.velocity(0.25).v_rad < 0.0);
        assert_abs_diff_eq!(chord.velocity(0.5).v_rad, 0.0, epsilon = 1e-15);
        assert!(chord.velocity(0.75).v_rad > 0.0);
    }

    #[test]
    fn chord_velocity_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-6;
        for normalize in [true, false] {
            let chord = euclidean_chord_with(&point(&mut rng, 4), &point(&mut rng, 4), normalize).unwrap();
            for i in 0..=10 {
                let t = i as f64 / 10.0;
                let v = chord.velocity(t);
                let fd_r = (chord.evaluate(t + h).r() - chord.evaluate(t - h).r()) / (2.0 * h);
                let fd = sub(chord.evaluate(t + h).theta(), chord.evaluate(t - h).theta());
                let fd: Vec<f64> = fd.iter().map(|x| x / (2.0 * h)).collect();
                assert_abs_diff_eq!(v.v_rad, fd_r, epsilon = 1e-7);
                assert!(norm(&sub(&fd, &v.v_ang)) < 1e-7);
            }
        }
    }

    #[test]
    fn unnormalized_chord_keeps_radii() {
        let chord = euclidean_chord_with(&pt(3.0, &[1.0, 0.0]), &pt(7.0, &[0.0, 1.0]), false).unwrap();
        assert_abs_diff_eq!(chord.evaluate(0.0).r(), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(chord.evaluate(1.0).r(), 7.0, epsilon = 1e-15);
    }

    #[test]
    fn numerical_constant_warp_reproduces_dual_geodesic() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let (p0, p1) = (point(&mut rng, 7), point(&mut rng, 7));
            let dual = dual_geodesic(&p0, &p1).unwrap();
            let num = general_warp_geodesic(&p0, &p1, WarpFunction::Constant(25.0), 16).unwrap();
            for i in 0..=32 {
                let t = i as f64 / 32.0;
                assert!(close(&num.evaluate(t), &dual.evaluate(t), 1e-6), "t={t}");
            }
        }
    }

    #[test]
    fn numerical_euclidean_warp_is_a_straight_line() {
        let p0 = pt(1.0, &[1.0, 0.0, 0.0]);
        let p1 = pt(1.0, &[0.0, 1.0, 0.0]);
        let num = general_warp_geodesic(&p0, &p1, WarpFunction::Euclidean, 64).unwrap();
        assert_abs_diff_eq!(num.evaluate(0.5).r(), 0.5f64.sqrt(), epsilon = 1e-4);
        let chord = euclidean_chord_with(&p0, &p1, false).unwrap();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            assert!(close(&num.evaluate(t), &chord.evaluate(t), 1e-5));
        }
    }

    #[test]
    fn numerical_paths_hit_both_endpoints_and_solve_the_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for warp in [WarpFunction::Euclidean, WarpFunction::Hyperbolic] {
            for _ in 0..10 {
                let p0 = PolarPoint::new(rng.random_range(0.5..2.0), unit(&mut rng, 5)).unwrap();
                let p1 = PolarPoint::new(rng.random_range(0.5..2.0), unit(&mut rng, 5)).unwrap();
                let path = general_warp_geodesic(&p0, &p1, warp, 256).unwrap();
                assert!(close(&path.evaluate(0.0), &p0, 1e-6));
                assert!(close(&path.evaluate(1.0), &p1, 1e-6));
                assert!(path.max_covariant_residual() < 1e-4, "{}", path.max_covariant_residual());
            }
        }
    }

    #[test]
    fn numerical_zero_length_path_is_constant() {
        let p = pt(1.5, &[0.0, 1.0, 0.0]);
        let path = general_warp_geodesic(&p, &p, WarpFunction::Hyperbolic, 32).unwrap();
        for i in 0..=8 {
            assert!(close(&path.evaluate(i as f64 / 8.0), &p, 1e-12));
        }
    }

    #[test]
    fn reversed_path_is_time_reversed() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (p0, p1) = (point(&mut rng, 4), point(&mut rng, 4));
        let fwd = dual_geodesic(&p0, &p1).unwrap();
        let bwd = dual_geodesic(&p1, &p0).unwrap();
        let p0h = PolarPoint::new(1.2, p0.theta().to_vec()).unwrap();
        let p1h = PolarPoint::new(0.8, p1.theta().to_vec()).unwrap();
        let nf = general_warp_geodesic(&p0h, &p1h, WarpFunction::Hyperbolic, 256).unwrap();
        let nb = general_warp_geodesic(&p1h, &p0h, WarpFunction::Hyperbolic, 256).unwrap();
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            assert!(close(&fwd.evaluate(t), &bwd.evaluate(1.0 - t), 1e-12));
            assert!(close(&nf.evaluate(t), &nb.evaluate(1.0 - t), 1e-6));
        }
    }

    #[test]
    fn solver_argument_checks() {
        let p = pt(1.0, &[1.0, 0.0]);
        let q = pt(1.0, &[0.0, 1.0]);
        assert!(general_warp_geodesic(&p, &q, WarpFunction::Euclidean, 8).is_err());
        let tiny = pt(1e-4, &[0.0, 1.0]);
        assert!(matches!(
            general_warp_geodesic(&p, &tiny, WarpFunction::Hyperbolic, 32),
            Err(Error::WarpDomain { .. })
        ));
    }
}
