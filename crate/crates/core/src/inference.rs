//! Transport of test features along a (guided) velocity field.
//!
//! Time runs on the uniform grid `t_k = k / N` with `dt = 1 / N`. The
//! network sees `TimeConvention::network_time(t_k)`, which mirrors what it
//! saw during training.

use serde::{Deserialize, Serialize};

use crate::flowmatch::TimeConvention;
use crate::manifold::{assemble, exp_map, polar_decompose, project_to_tangent, sphere_log, PolarPoint, TangentVector, EPS_NORM};
use crate::vecops::{all_finite, cosine_similarity, norm, unit_angle};
use crate::velocity_net::{Condition, VelocityField};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// Project onto the tangent space and step with the exponential map.
    #[serde(rename = "expmap")]
    ExpMap,
    /// `x += v dt` in ambient space, then re-decompose.
    #[serde(rename = "ambient")]
    AmbientEuler,
}

impl std::str::FromStr for Integrator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expmap" => Ok(Integrator::ExpMap),
            "ambient" => Ok(Integrator::AmbientEuler),
            _ => Err(Error::InvalidArgument(format!("unknown integrator '{s}', expected expmap|ambient"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub n_steps: usize,
    pub cfg_scale: f64,
    pub integrator: Integrator,
    pub record_trajectory: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n_steps: 10,
            cfg_scale: 5.0,
            integrator: Integrator::ExpMap,
            record_trajectory: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
        }
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("cfg_scale must be finite and >= 0, got {}", self.cfg_scale)));
        }
        Ok(())
    }
}

/// Anything that yields an ambient velocity at `(x, t)`.
pub trait VelocitySource {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// `v(x, t | null) + w (v(x, t | c) - v(x, t | null))`; a single pass when
/// `c` is null.
pub fn guided_velocity(net: &VelocityField, x: &[f64], t: f64, c: &Condition, w: f64) -> Result<Vec<f64>> {
    let v_null = net.forward(x, t, &Condition::Null)?;
    if c.is_null() {
        return Ok(v_null);
    }
    let v_cond = net.forward(x, t, c)?;
    Ok(v_null.iter().zip(&v_cond).map(|(n, c)| n + w * (c - n)).collect())
}

/// A trained network plus the condition, guidance scale and time convention.
pub struct GuidedField<'a> {
    pub net: &'a VelocityField,
    pub condition: &'a Condition,
    pub cfg_scale: f64,
    pub time: TimeConvention,
}

impl VelocitySource for GuidedField<'_> {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        guided_velocity(self.net, x, self.time.network_time(t), self.condition, self.cfg_scale)
    }
}

/// The conditional dual-geodesic field toward a fixed target: the remaining
/// radial gap and remaining great-circle arc, each divided by the time left.
pub struct OracleField {
    pub target: PolarPoint,
}

impl VelocitySource for OracleField {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let p = polar_decompose(x)?;
        let left = 1.0 - t;
        if !(left > 0.0) {
            return Err(Error::InvalidArgument(format!("oracle field is undefined at t = {t}")));
        }
        let v_rad = (self.target.r() - p.r()) / left;
        let v_ang: Vec<f64> = sphere_log(p.theta(), self.target.theta()).iter().map(|v| v / left).collect();
        Ok(TangentVector::new(v_rad, v_ang).to_ambient(&p))
    }
}

impl<F: Fn(&[f64], f64) -> Vec<f64>> VelocitySource for F {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self(x, t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transport {
    pub x_final: Vec<f64>,
    pub trajectory: Option<Vec<PolarPoint>>,
    /// Largest `| |theta_k| - 1 |` over the steps, measured before any
    /// re-normalization.
    pub max_theta_drift: f64,
    /// Largest `| r_{k+1} - (r_k + v_rad dt) |`, the radial error of an
    /// ambient step against the tangent-space step.
    pub max_radius_drift: f64,
}

pub fn transport<S: VelocitySource + ?Sized>(field: &S, x_test: &[f64], cfg: &InferenceConfig) -> Result<Transport> {
    cfg.validate()?;
    let n0 = norm(x_test);
    if !(n0 > EPS_NORM) {
        return Err(Error::DegenerateInput { norm: n0, eps: EPS_NORM });
    }
    let dt = 1.0 / cfg.n_steps as f64;
    let mut p = polar_decompose(x_test)?;
    let mut trajectory = cfg.record_trajectory.then(|| vec![p.clone()]);
    let mut max_theta_drift: f64 = 0.0;
    let mut max_radius_drift: f64 = 0.0;
    for k in 0..cfg.n_steps {
        let t = k as f64 / cfg.n_steps as f64;
        let x = assemble(&p);
        let v = field.velocity(&x, t)?;
        if !all_finite(&v) {
            return Err(Error::NonFiniteState { step: k });
        }
        p = match cfg.integrator {
            Integrator::ExpMap => {
                let tv = project_to_tangent(&v, &p)?;
                let next = exp_map(&p, &tv, dt)?;
                max_theta_drift = max_theta_drift.max((norm(next.theta()) - 1.0).abs());
                next
            }
            Integrator::AmbientEuler => {
                let v_rad = crate::vecops::dot(&v, p.theta());
                let moved: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + dt * b).collect();
                if !all_finite(&moved) {
                    return Err(Error::NonFiniteState { step: k });
                }
                let r_new = norm(&moved);
                if !(r_new > EPS_NORM) {
                    return Err(Error::RadialUnderflow { radius: r_new });
                }
                max_radius_drift = max_radius_drift.max((r_new - (p.r() + v_rad * dt)).abs());
                // a unit direction advanced by the ambient angular velocity
                let theta_step: Vec<f64> = p.theta().iter().zip(&v).map(|(t, vi)| t + dt * (vi - v_rad * t) / p.r()).collect();
                max_theta_drift = max_theta_drift.max((norm(&theta_step) - 1.0).abs());
                polar_decompose(&moved)?
            }
        };
        if let Some(tr) = trajectory.as_mut() {
            tr.push(p.clone());
        }
    }
    let x_final = assemble(&p);
    if !all_finite(&x_final) {
        return Err(Error::NonFiniteState { step: cfg.n_steps });
    }
    Ok(Transport {
        x_final,
        trajectory,
        max_theta_drift,
        max_radius_drift,
    })
}

/// Label of the prototype with the highest cosine similarity to `x`; ties go
/// to the earlier prototype.
pub fn nearest_prototype(x: &[f64], prototypes: &[(usize, Vec<f64>)]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (label, proto) in prototypes {
        let s = cosine_similarity(x, proto);
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((*label, s)),
        }
    }
    best.map(|b| b.0).ok_or_else(|| Error::InvalidArgument("no prototypes".into()))
}

pub fn classify_by_transport(
    net: &VelocityField,
    x_test: &[f64],
    prototypes: &[(usize, Vec<f64>)],
    c: &Condition,
    cfg: &InferenceConfig,
    time: TimeConvention,
) -> Result<usize> {
    let field = GuidedField {
        net,
        condition: c,
        cfg_scale: cfg.cfg_scale,
        time,
    };
    nearest_prototype(&transport(&field, x_test, cfg)?.x_final, prototypes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// Mean angle between the transported direction and the true prototype.
    pub mean_angular_endpoint_error: f64,
    pub n_steps: usize,
    pub w: f64,
    pub n_examples: usize,
}

/// Transports every pair's source feature under its own condition and scores
/// nearest-prototype accuracy against the pair's label.
pub fn evaluate_pairs(
    net: &VelocityField,
    pairs: &[crate::data::Pair],
    prototypes: &[(usize, Vec<f64>)],
    cfg: &InferenceConfig,
    time: TimeConvention,
) -> Result<EvalReport> {
    let n_classes = prototypes.iter().map(|p| p.0 + 1).max().unwrap_or(0);
    let mut hits = vec![0usize; n_classes];
    let mut counts = vec![0usize; n_classes];
    let mut angle_sum = 0.0;
    for pair in pairs {
        let field = GuidedField {
            net,
            condition: &pair.condition,
            cfg_scale: cfg.cfg_scale,
            time,
        };
        let out = transport(&field, &pair.x0, cfg)?;
        let pred = nearest_prototype(&out.x_final, prototypes)?;
        if pair.label >= n_classes {
            return Err(Error::InvalidArgument(format!("label {} has no prototype", pair.label)));
        }
        counts[pair.label] += 1;
        if pred == pair.label {
            hits[pair.label] += 1;
        }
        let a = polar_decompose(&out.x_final)?;
        let b = polar_decompose(&pair.x1)?;
        angle_sum += unit_angle(a.theta(), b.theta());
    }
    let total: usize = counts.iter().sum();
    let ratio = |h: usize, c: usize| if c == 0 { 0.0 } else { h as f64 / c as f64 };
    Ok(EvalReport {
        accuracy: ratio(hits.iter().sum(), total),
        per_class_accuracy: hits.iter().zip(&counts).map(|(&h, &c)| ratio(h, c)).collect(),
        mean_angular_endpoint_error: if total == 0 { 0.0 } else { angle_sum / total as f64 },
        n_steps: cfg.n_steps,
        w: cfg.cfg_scale,
        n_examples: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesics::dual_geodesic;
    use crate::velocity_net::{Architecture, NetConfig};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64, zero: bool) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = NetConfig {
            hidden: vec![16, 16],
            t_embed_dim: 8,
            c_embed_dim: 4,
        };
        let mut net = VelocityField::new(Architecture::new(6, 3, &cfg), &mut rng).unwrap();
        if !zero {
            for p in net.params_mut() {
                *p = rng.random_range(-0.3..0.3);
            }
        }
        net
    }

    fn vec_of(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn guidance_identities() {
        let net = random_net(0, false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec_of(&mut rng, 6);
        let c = Condition::Vector(vec_of(&mut rng, 3));
        let v_c = net.forward(&x, 0.4, &c).unwrap();
        let v_n = net.forward(&x, 0.4, &Condition::Null).unwrap();
        assert_eq!(guided_velocity(&net, &x, 0.4, &c, 0.0).unwrap(), v_n);
        let one = guided_velocity(&net, &x, 0.4, &c, 1.0).unwrap();
        for (a, b) in one.iter().zip(&v_c) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let five = guided_velocity(&net, &x, 0.4, &c, 5.0).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(five[i], v_n[i] + 5.0 * (v_c[i] - v_n[i]), epsilon = 1e-12);
        }
        assert_eq!(guided_velocity(&net, &x, 0.4, &Condition::Null, 5.0).unwrap(), v_n);
    }

    #[test]
    fn zero_field_is_identity_transport() {
        let net = random_net(2, true);
        let x = vec![0.5, -1.0, 2.0, 0.1, 0.0, 0.3];
        let c = Condition::Vector(vec![1.0, 0.0, 0.0]);
        for n in [1, 7, 64] {
            for integrator in [Integrator::ExpMap, Integrator::AmbientEuler] {
                let cfg = InferenceConfig {
                    n_steps: n,
                    integrator,
                    ..Default::default()
                };
                let field = GuidedField {
                    net: &net,
                    condition: &c,
                    cfg_scale: 5.0,
                    time: TimeConvention::default(),
                };
                let out = transport(&field, &x, &cfg).unwrap();
                for (a, b) in out.x_final.iter().zip(&x) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn oracle_transport_reaches_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x0 = vec_of(&mut rng, 5);
            let x1 = vec_of(&mut rng, 5);
            let target = polar_decompose(&x1).unwrap();
            let field = OracleField { target: target.clone() };
            let cfg = InferenceConfig {
                n_steps: 64,
                record_trajectory: true,
                ..Default::default()
            };
            let out = transport(&field, &x0, &cfg).unwrap();
            let end = polar_decompose(&out.x_final).unwrap();
            assert!(unit_angle(end.theta(), target.theta()) <= 1e-3);
            assert!(out.max_theta_drift <= 1e-12);
            let tr = out.trajectory.unwrap();
            assert_eq!(tr.len(), 65);
            // the field's integral curves are the dual geodesics themselves
            let path = dual_geodesic(&polar_decompose(&x0).unwrap(), &target).unwrap();
            let mid = path.evaluate(0.5);
            assert!(unit_angle(mid.theta(), tr[32].theta()) < 1e-9);
        }
    }

    #[test]
    fn ambient_euler_drifts_on_rotation() {
        // pure rotation in the plane: exact on the manifold, off it in ambient space
        let field = |x: &[f64], _t: f64| vec![-x[1], x[0]];
        let x = vec![1.0, 0.0];
        let exp = transport(&field, &x, &InferenceConfig { n_steps: 16, ..Default::default() }).unwrap();
        let amb = transport(
            &field,
            &x,
            &InferenceConfig {
                n_steps: 16,
                integrator: Integrator::AmbientEuler,
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(norm(&exp.x_final), 1.0, epsilon = 1e-12);
        assert!(norm(&amb.x_final) > 1.0 + 1e-2);
        assert!(amb.max_radius_drift > 1e-3);
        assert_eq!(exp.max_radius_drift, 0.0);
    }

    #[test]
    fn nearest_prototype_ties_and_identity() {
        let protos = vec![(0, vec![1.0, 1.0]), (1, vec![1.0, -1.0])];
        assert_eq!(nearest_prototype(&[1.0, 0.0], &protos).unwrap(), 0);
        assert_eq!(nearest_prototype(&[1.0, -1.0], &protos).unwrap(), 1);
        let net = random_net(4, true);
        let protos: Vec<(usize, Vec<f64>)> = (0..3)
            .map(|k| {
                let mut v = vec![0.0; 6];
                v[k] = 1.0;
                (k, v)
            })
            .collect();
        let label = classify_by_transport(&net, &protos[2].1, &protos, &Condition::Null, &InferenceConfig::default(), TimeConvention::default()).unwrap();
        assert_eq!(label, 2);
        assert!(nearest_prototype(&[1.0], &[]).is_err());
    }

    #[test]
    fn degenerate_start_is_rejected() {
        let field = |_: &[f64], _: f64| vec![0.0; 3];
        assert!(matches!(
            transport(&field, &[0.0; 3], &InferenceConfig::default()),
            Err(Error::DegenerateInput { .. })
        ));
        let shrink = |x: &[f64], _: f64| x.iter().map(|v| -4.0 * v).collect::<Vec<_>>();
        assert!(matches!(
            transport(&shrink, &[1.0, 0.0, 0.0], &InferenceConfig { n_steps: 2, ..Default::default() }),
            Err(Error::RadialUnderflow { .. })
        ));
    }
}
