//! Flow-matching training: time-shifted sampling, condition dropout,
//! geodesic targets and the metric-weighted regression loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PairedDataset;
use crate::geodesics::{dual_geodesic, euclidean_chord, GeodesicPath};
use crate::manifold::{assemble, polar_decompose, project_to_tangent, PolarPoint, TangentVector, WarpFunction};
use crate::vecops::{all_finite, dot};
use crate::velocity_net::{AdamW, Architecture, Condition, Gradients, NetConfig, VelocityField};
use crate::{Error, Result};

/// `s t / (1 + (s - 1) t)`; for `s < 1` this pulls samples toward 0.
pub fn time_shift(t: f64, s: f64) -> f64 {
    // same value, written so that both endpoints are exact
    let st = s * t;
    st / (st + (1.0 - t))
}

/// Which path the regression targets follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetPath {
    /// Linear radius, constant-speed great circle.
    Dual,
    /// Straight chord between the normalized endpoints.
    Chord,
}

impl std::str::FromStr for TargetPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(TargetPath::Dual),
            "chord" => Ok(TargetPath::Chord),
            _ => Err(Error::InvalidArgument(format!("unknown geodesic kind '{s}', expected dual|chord"))),
        }
    }
}

impl TargetPath {
    pub fn build(self, p0: &PolarPoint, p1: &PolarPoint) -> Result<GeodesicPath> {
        match self {
            TargetPath::Dual => dual_geodesic(p0, p1),
            TargetPath::Chord => euclidean_chord(p0, p1),
        }
    }
}

/// How a sampled time `t ~ U(0, 1)` maps to the path time and the time the
/// network sees. With `shift_targets` both use `shift(t)`; without it the
/// path is evaluated at `t` and only the network input is shifted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConvention {
    pub shift_s: f64,
    pub shift_targets: bool,
}

impl Default for TimeConvention {
    fn default() -> Self {
        Self {
            shift_s: 0.1,
            shift_targets: true,
        }
    }
}

impl TimeConvention {
    /// `(path_time, network_time)` for a uniform training draw.
    pub fn training_times(&self, t: f64) -> (f64, f64) {
        let shifted = time_shift(t, self.shift_s);
        if self.shift_targets {
            (shifted, shifted)
        } else {
            (t, shifted)
        }
    }

    /// Network time for a point reached at path time `t`.
    pub fn network_time(&self, path_time: f64) -> f64 {
        if self.shift_targets {
            path_time
        } else {
            time_shift(path_time, self.shift_s)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub warp: WarpFunction,
    pub shift_s: f64,
    pub shift_targets: bool,
    pub p_drop: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub geodesic: TargetPath,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warp: WarpFunction::Constant(25.0),
            shift_s: 0.1,
            shift_targets: true,
            p_drop: 0.1,
            batch_size: 8,
            epochs: 200,
            lr: 2e-4,
            weight_decay: 0.01,
            seed: 0,
            geodesic: TargetPath::Dual,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift_s > 0.0 && self.shift_s.is_finite()) {
            return Err(Error::InvalidArgument(format!("shift_s must be > 0, got {}", self.shift_s)));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::InvalidArgument(format!("p_drop must lie in [0, 1], got {}", self.p_drop)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn time_convention(&self) -> TimeConvention {
        TimeConvention {
            shift_s: self.shift_s,
            shift_targets: self.shift_targets,
        }
    }

    pub fn adamw(&self) -> crate::velocity_net::AdamWConfig {
        crate::velocity_net::AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTarget {
    pub x_t: Vec<f64>,
    pub point: PolarPoint,
    pub velocity: TangentVector,
}

/// Point and ground-truth velocity at path time `t` between two features.
pub fn make_training_target(p0: &PolarPoint, p1: &PolarPoint, t: f64, kind: TargetPath) -> Result<TrainingTarget> {
    let path = kind.build(p0, p1)?;
    let point = path.evaluate(t);
    let velocity = path.velocity(t);
    Ok(TrainingTarget {
        x_t: assemble(&point),
        point,
        velocity,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricLoss {
    pub loss: f64,
    pub radial: f64,
    /// Already weighted by `phi(r)^2`.
    pub angular: f64,
    /// Gradient of `loss` with respect to the ambient network output.
    pub grad_ambient: Vec<f64>,
}

/// `|v_rad - g_r|^2 + phi(r)^2 |v_ang - g_theta|^2` at base point `p`, with
/// the gradient chained through the tangent projection at `p`.
pub fn metric_loss(pred: &TangentVector, target: &TangentVector, warp: WarpFunction, p: &PolarPoint) -> Result<MetricLoss> {
    if pred.v_ang.len() != p.dim() || target.v_ang.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: pred.v_ang.len().min(target.v_ang.len()),
        });
    }
    let phi2 = warp.phi(p.r()).powi(2);
    let dr = pred.v_rad - target.v_rad;
    let dang: Vec<f64> = pred.v_ang.iter().zip(&target.v_ang).map(|(a, b)| a - b).collect();
    let radial = dr * dr;
    let angular = phi2 * dot(&dang, &dang);
    // d/dv: 2 dr theta + 2 phi^2 (I - theta theta^T) dang / r
    let theta = p.theta();
    let along = dot(&dang, theta);
    let k = 2.0 * phi2 / p.r();
    let grad_ambient = theta
        .iter()
        .zip(&dang)
        .map(|(t, e)| 2.0 * dr * t + k * (e - along * t))
        .collect();
    Ok(MetricLoss {
        loss: radial + angular,
        radial,
        angular,
        grad_ambient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub radial_loss: f64,
    pub angular_loss: f64,
}

/// Loss and parameter gradients for one training example.
pub fn example_gradient(
    net: &VelocityField,
    target: &TrainingTarget,
    network_time: f64,
    condition: &Condition,
    warp: WarpFunction,
) -> Result<(MetricLoss, Gradients)> {
    let (v, cache) = net.forward_cached(&target.x_t, network_time, condition)?;
    let pred = project_to_tangent(&v, &target.point)?;
    let loss = metric_loss(&pred, &target.velocity, warp, &target.point)?;
    let grads = net.backward(&cache, &loss.grad_ambient)?;
    Ok((loss, grads))
}

/// One pass over the shuffled dataset. `epoch` is only used for stats and
/// diagnostics.
pub fn train_epoch<R: Rng + ?Sized>(
    net: &mut VelocityField,
    opt: &mut AdamW,
    dataset: &PairedDataset,
    cfg: &TrainConfig,
    rng: &mut R,
    epoch: usize,
) -> Result<EpochStats> {
    if dataset.pairs.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let convention = cfg.time_convention();
    let mut order: Vec<usize> = (0..dataset.pairs.len()).collect();
    order.shuffle(rng);
    let (mut total, mut total_rad, mut total_ang) = (0.0, 0.0, 0.0);
    for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mut grads = Gradients::zeros(net.num_params());
        let inv = 1.0 / chunk.len() as f64;
        for &i in chunk {
            let pair = &dataset.pairs[i];
            let t: f64 = rng.random();
            let (path_t, net_t) = convention.training_times(t);
            let condition = if rng.random::<f64>() < cfg.p_drop {
                Condition::Null
            } else {
                pair.condition.clone()
            };
            let p0 = polar_decompose(&pair.x0)?;
            let p1 = polar_decompose(&pair.x1)?;
            let target = make_training_target(&p0, &p1, path_t, cfg.geodesic)?;
            let (loss, g) = example_gradient(net, &target, net_t, &condition, cfg.warp)?;
            if !loss.loss.is_finite() || !all_finite(&g.flat) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    detail: format!("pair {i}, t = {t}, loss = {}", loss.loss),
                });
            }
            grads.accumulate(&g, inv);
            total += loss.loss;
            total_rad += loss.radial;
            total_ang += loss.angular;
        }
        opt.step(net, &grads)?;
        if !net.all_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch,
                detail: "parameters became non-finite after the optimizer step".into(),
            });
        }
    }
    let n = dataset.pairs.len() as f64;
    Ok(EpochStats {
        epoch,
        loss: total / n,
        radial_loss: total_rad / n,
        angular_loss: total_ang / n,
    })
}

/// Builds a fresh network for `dataset` and trains it for `cfg.epochs`.
/// Initialization and training draw from separate streams of `cfg.seed`.
/// `on_epoch` sees every epoch's stats as soon as they are available.
pub fn fit(
    net_cfg: &NetConfig,
    dataset: &PairedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(VelocityField, AdamW)> {
    cfg.validate()?;
    let arch = Architecture::new(dataset.dim(), dataset.condition_dim(), net_cfg);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = VelocityField::new(arch, &mut init_rng)?;
    let mut opt = AdamW::new(cfg.adamw(), net.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    for epoch in 1..=cfg.epochs {
        let stats = train_epoch(&mut net, &mut opt, dataset, cfg, &mut rng, epoch)?;
        on_epoch(&stats);
    }
    Ok((net, opt))
}
