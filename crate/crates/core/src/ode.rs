//! In-plane geodesic equations for the warped metric.
//!
//! Rotational symmetry keeps every geodesic in the 2-plane spanned by its
//! initial direction and velocity, so the system reduces to polar coordinates
//! `(r, psi)` in that plane:
//!
//! ```text
//! r''   = phi(r) phi'(r) psi'^2
//! psi'' = -2 phi'(r) / phi(r) * r' psi'
//! ```

use crate::manifold::WarpFunction;

/// `[r, r_dot, psi, psi_dot]`
pub type PlaneState = [f64; 4];

pub fn geodesic_rhs(warp: WarpFunction, s: &PlaneState) -> PlaneState {
    let [r, rd, _psi, pd] = *s;
    let phi = warp.phi(r);
    let dphi = warp.dphi(r);
    let r_acc = phi * dphi * pd * pd;
    let psi_acc = if warp.is_constant() {
        0.0
    } else {
        -2.0 * (dphi / phi) * rd * pd
    };
    [rd, r_acc, pd, psi_acc]
}

/// One classical fourth-order Runge-Kutta step. `h` may be negative.
pub fn rk4_step(warp: WarpFunction, s: &PlaneState, h: f64) -> PlaneState {
    let f = |x: &PlaneState| geodesic_rhs(warp, x);
    let shift = |x: &PlaneState, k: &PlaneState, c: f64| -> PlaneState {
        [x[0] + c * k[0], x[1] + c * k[1], x[2] + c * k[2], x[3] + c * k[3]]
    };
    let k1 = f(s);
    let k2 = f(&shift(s, &k1, 0.5 * h));
    let k3 = f(&shift(s, &k2, 0.5 * h));
    let k4 = f(&shift(s, &k3, h));
    let mut out = *s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Integrates over `duration` with `steps` equal RK4 steps. Returns `None`
/// when the radius leaves the warp's domain or the state becomes non-finite.
pub fn integrate(
    warp: WarpFunction,
    start: PlaneState,
    duration: f64,
    steps: usize,
) -> Option<PlaneState> {
    let h = duration / steps as f64;
    let mut s = start;
    for _ in 0..steps {
        s = rk4_step(warp, &s, h);
        if !valid(warp, &s) {
            return None;
        }
    }
    Some(s)
}

/// Like [`integrate`] but keeps every node, `steps + 1` states in total.
pub fn integrate_nodes(
    warp: WarpFunction,
    start: PlaneState,
    duration: f64,
    steps: usize,
) -> Option<Vec<PlaneState>> {
    let h = duration / steps as f64;
    let mut nodes = Vec::with_capacity(steps + 1);
    nodes.push(start);
    let mut s = start;
    for _ in 0..steps {
        s = rk4_step(warp, &s, h);
        if !valid(warp, &s) {
            return None;
        }
        nodes.push(s);
    }
    Some(nodes)
}

fn valid(warp: WarpFunction, s: &PlaneState) -> bool {
    s.iter().all(|x| x.is_finite()) && s[0] >= warp.min_radius()
}
