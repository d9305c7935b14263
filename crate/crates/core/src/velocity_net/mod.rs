//! Learnable velocity field `v(x_t, t | c)`.
//!
//! A dense SiLU network over `concat(x_t, time_embed(t), cond_embed(c))`.
//! The condition embedding is a learned linear map of the condition vector;
//! the null condition is a learned token of the same width. The output layer
//! starts at zero so an untrained field is the zero field.
//!
//! Parameters live in one flat buffer in declaration order (see
//! [`VelocityField::layout`]), which is also the order used by the optimizer
//! and the checkpoint format. Gradients are derived by hand.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use optim::{adamw_update, AdamW, AdamWConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::vecops::all_finite;
use crate::{Error, Result};

/// Network shape knobs; the feature and condition widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub t_embed_dim: usize,
    pub c_embed_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            t_embed_dim: 32,
            c_embed_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Feature dimension (input and output).
    pub d: usize,
    /// Condition vector dimension.
    pub c_dim: usize,
    pub t_embed_dim: usize,
    pub c_embed_dim: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(d: usize, c_dim: usize, net: &NetConfig) -> Self {
        Self {
            d,
            c_dim,
            t_embed_dim: net.t_embed_dim,
            c_embed_dim: net.c_embed_dim,
            hidden: net.hidden.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.c_dim == 0 || self.c_embed_dim == 0 {
            return Err(Error::InvalidArgument("network widths must be positive".into()));
        }
        if self.t_embed_dim < 2 || !self.t_embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "t_embed_dim must be even and >= 2, got {}",
                self.t_embed_dim
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.d + self.t_embed_dim + self.c_embed_dim
    }
}

/// Conditioning signal: the learned null token or an opaque vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Null,
    Vector(Vec<f64>),
}

impl Condition {
    pub fn is_null(&self) -> bool {
        matches!(self, Condition::Null)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    cond: Dense,
    null: usize,
    // hidden layers followed by the output layer
    layers: Vec<Dense>,
}

/// State saved by [`VelocityField::forward_cached`] for one backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    condition: Option<Vec<f64>>,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

/// Flat parameter gradients, aligned with [`VelocityField::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub flat: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self { flat: vec![0.0; n] }
    }

    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        crate::vecops::axpy(&mut self.flat, scale, &other.flat);
    }

    pub fn slice<'a>(&'a self, spec: &ParamSpec) -> &'a [f64] {
        &self.flat[spec.range()]
    }
}

#[derive(Debug, Clone)]
pub struct VelocityField {
    arch: Architecture,
    layout: Vec<ParamSpec>,
    offsets: Offsets,
    params: Vec<f64>,
    version: u64,
}

fn build_layout(arch: &Architecture) -> (Vec<ParamSpec>, Offsets) {
    let mut layout = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let spec = ParamSpec { name, shape, offset };
        offset += spec.len();
        let at = spec.offset;
        layout.push(spec);
        at
    };
    let cond = Dense {
        w: push("cond.weight".into(), vec![arch.c_embed_dim, arch.c_dim]),
        b: push("cond.bias".into(), vec![arch.c_embed_dim]),
        n_in: arch.c_dim,
        n_out: arch.c_embed_dim,
    };
    let null = push("null_token".into(), vec![arch.c_embed_dim]);
    let mut layers = Vec::new();
    let mut n_in = arch.input_dim();
    for (i, &h) in arch.hidden.iter().enumerate() {
        layers.push(Dense {
            w: push(format!("dense{i}.weight"), vec![h, n_in]),
            b: push(format!("dense{i}.bias"), vec![h]),
            n_in,
            n_out: h,
        });
        n_in = h;
    }
    layers.push(Dense {
        w: push("out.weight".into(), vec![arch.d, n_in]),
        b: push("out.bias".into(), vec![arch.d]),
        n_in,
        n_out: arch.d,
    });
    (layout, Offsets { cond, null, layers })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoidal embedding `[sin(f_k t), cos(f_k t)]` with frequencies spaced
/// geometrically from 1 to 100 rad per unit time.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = if half > 1 {
            (100f64.ln() * k as f64 / (half - 1) as f64).exp()
        } else {
            1.0
        };
        let (s, c) = (freq * t).sin_cos();
        out[k] = s;
        out[half + k] = c;
    }
    out
}

/// `out = W x + b` for a row-major `W` stored at `layer.w`.
fn dense_forward(params: &[f64], layer: &Dense, x: &[f64]) -> Vec<f64> {
    let w = &params[layer.w..layer.w + layer.n_in * layer.n_out];
    let b = &params[layer.b..layer.b + layer.n_out];
    (0..layer.n_out)
        .map(|o| {
            let row = &w[o * layer.n_in..(o + 1) * layer.n_in];
            b[o] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
        })
        .collect()
}

/// Accumulates `dW += g x^T`, `db += g` and returns `W^T g`.
fn dense_backward(params: &[f64], grads: &mut [f64], layer: &Dense, x: &[f64], g: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; layer.n_in];
    for o in 0..layer.n_out {
        let go = g[o];
        if go == 0.0 {
            continue;
        }
        grads[layer.b + o] += go;
        let row = layer.w + o * layer.n_in;
        for i in 0..layer.n_in {
            grads[row + i] += go * x[i];
            dx[i] += go * params[row + i];
        }
    }
    dx
}

impl VelocityField {
    /// Fresh network: fan-in uniform init for weights, zero biases, zero null
    /// token and a zero output layer.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (layout, offsets) = build_layout(&arch);
        let n = layout.last().map(|s| s.offset + s.len()).unwrap_or(0);
        let mut params = vec![0.0; n];
        let n_hidden = offsets.layers.len() - 1;
        let init_layers = std::iter::once(&offsets.cond).chain(&offsets.layers[..n_hidden]);
        for layer in init_layers {
            let bound = (6.0 / layer.n_in as f64).sqrt();
            for w in &mut params[layer.w..layer.w + layer.n_in * layer.n_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            arch,
            layout,
            offsets,
            params,
            version: 0,
        })
    }

    /// Rebuilds a network from a parameter buffer in declaration order.
    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let (layout, offsets) = build_layout(&arch);
        let n = layout.last().map(|s| s.offset + s.len()).unwrap_or(0);
        if params.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: params.len(),
            });
        }
        if !all_finite(&params) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self {
            arch,
            layout,
            offsets,
            params,
            version: 0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access bumps the version, invalidating outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn all_finite(&self) -> bool {
        all_finite(&self.params)
    }

    /// Embedding fed to the first layer for condition `c`.
    pub fn condition_embedding(&self, c: &Condition) -> Result<Vec<f64>> {
        match c {
            Condition::Null => {
                let n = self.offsets.null;
                Ok(self.params[n..n + self.arch.c_embed_dim].to_vec())
            }
            Condition::Vector(v) => {
                if v.len() != self.arch.c_dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.arch.c_dim,
                        got: v.len(),
                    });
                }
                if !all_finite(v) {
                    return Err(Error::InvalidArgument("non-finite condition vector".into()));
                }
                Ok(dense_forward(&self.params, &self.offsets.cond, v))
            }
        }
    }

    pub fn forward(&self, x_t: &[f64], t: f64, c: &Condition) -> Result<Vec<f64>> {
        self.forward_cached(x_t, t, c).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x_t: &[f64], t: f64, c: &Condition) -> Result<(Vec<f64>, ForwardCache)> {
        if x_t.len() != self.arch.d {
            return Err(Error::DimensionMismatch {
                expected: self.arch.d,
                got: x_t.len(),
            });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("time must lie in [0, 1], got {t}")));
        }
        let mut input = Vec::with_capacity(self.arch.input_dim());
        input.extend_from_slice(x_t);
        input.extend(time_embedding(t, self.arch.t_embed_dim));
        input.extend(self.condition_embedding(c)?);

        let n_hidden = self.offsets.layers.len() - 1;
        let mut pre = Vec::with_capacity(n_hidden);
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        for layer in &self.offsets.layers[..n_hidden] {
            let x = act.last().unwrap_or(&input);
            let z = dense_forward(&self.params, layer, x);
            act.push(z.iter().map(|&v| silu(v)).collect());
            pre.push(z);
        }
        let out_layer = &self.offsets.layers[n_hidden];
        let y = dense_forward(&self.params, out_layer, act.last().unwrap_or(&input));
        let cache = ForwardCache {
            version: self.version,
            condition: match c {
                Condition::Null => None,
                Condition::Vector(v) => Some(v.clone()),
            },
            input,
            pre,
            act,
        };
        Ok((y, cache))
    }

    /// Parameter gradients of a scalar loss whose gradient with respect to
    /// the network output is `grad_output`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: self.version,
            });
        }
        if grad_output.len() != self.arch.d {
            return Err(Error::DimensionMismatch {
                expected: self.arch.d,
                got: grad_output.len(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        let n_hidden = self.offsets.layers.len() - 1;
        let mut g = grad_output.to_vec();
        for l in (0..=n_hidden).rev() {
            let layer = &self.offsets.layers[l];
            let x = if l == 0 { &cache.input } else { &cache.act[l - 1] };
            let dx = dense_backward(&self.params, &mut grads, layer, x, &g);
            if l == 0 {
                g = dx;
            } else {
                g = dx
                    .iter()
                    .zip(&cache.pre[l - 1])
                    .map(|(d, &z)| d * silu_grad(z))
                    .collect();
            }
        }
        // g is now the gradient w.r.t. the concatenated input
        let c_start = self.arch.d + self.arch.t_embed_dim;
        let g_cond = &g[c_start..];
        match &cache.condition {
            None => {
                let n = self.offsets.null;
                for (dst, src) in grads[n..n + self.arch.c_embed_dim].iter_mut().zip(g_cond) {
                    *dst += src;
                }
            }
            Some(c) => {
                dense_backward(&self.params, &mut grads, &self.offsets.cond, c, g_cond);
            }
        }
        Ok(Gradients { flat: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture {
            d: 8,
            c_dim: 5,
            t_embed_dim: 6,
            c_embed_dim: 4,
            hidden: vec![16, 16],
        }
    }

    fn randomized(seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = VelocityField::new(small_arch(), &mut rng).unwrap();
        for p in net.params_mut() {
            *p = rng.random_range(-0.5..0.5);
        }
        net
    }

    fn input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn layout_is_contiguous_and_ordered() {
        let net = randomized(0);
        let mut offset = 0;
        for spec in net.layout() {
            assert_eq!(spec.offset, offset);
            offset += spec.len();
        }
        assert_eq!(offset, net.num_params());
        let names: Vec<_> = net.layout().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            ["cond.weight", "cond.bias", "null_token", "dense0.weight", "dense0.bias", "dense1.weight", "dense1.bias", "out.weight", "out.bias"]
        );
    }

    #[test]
    fn untrained_field_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = VelocityField::new(small_arch(), &mut rng).unwrap();
        for _ in 0..20 {
            let x = input(&mut rng, 8);
            let c = Condition::Vector(input(&mut rng, 5));
            assert!(net.forward(&x, 0.3, &c).unwrap().iter().all(|&v| v == 0.0));
            assert!(net.forward(&x, 0.9, &Condition::Null).unwrap().iter().all(|&v| v == 0.0));
        }
        let null = net.param("null_token").unwrap();
        assert!(net.params()[null.range()].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_checks_inputs() {
        let net = randomized(2);
        let x = vec![0.3; 8];
        let c = Condition::Vector(vec![0.1; 5]);
        let a = net.forward(&x, 0.4, &c).unwrap();
        let b = net.forward(&x, 0.4, &c).unwrap();
        assert_eq!(a, b);
        assert!(matches!(net.forward(&[0.0; 7], 0.4, &c), Err(Error::DimensionMismatch { .. })));
        assert!(net.forward(&x, 1.5, &c).is_err());
        assert!(matches!(
            net.forward(&x, 0.4, &Condition::Vector(vec![0.0; 3])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn loss_of(net: &VelocityField, x: &[f64], t: f64, c: &Condition, w: &[f64]) -> f64 {
        let y = net.forward(x, t, c).unwrap();
        // a nonlinear scalar loss: sum w_i y_i + 0.5 |y|^2
        y.iter().zip(w).map(|(a, b)| a * b + 0.5 * a * a).sum()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = randomized(4);
        let h = 1e-5;
        for trial in 0..4 {
            let x = input(&mut rng, 8);
            let t: f64 = rng.random_range(0.0..1.0);
            let c = if trial % 2 == 0 { Condition::Null } else { Condition::Vector(input(&mut rng, 5)) };
            let w = input(&mut rng, 8);
            let (y, cache) = net.forward_cached(&x, t, &c).unwrap();
            let gy: Vec<f64> = y.iter().zip(&w).map(|(a, b)| a + b).collect();
            let grads = net.backward(&cache, &gy).unwrap();
            for i in 0..net.num_params() {
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                let fd = (loss_of(&plus, &x, t, &c, &w) - loss_of(&minus, &x, t, &c, &w)) / (2.0 * h);
                let a = grads.flat[i];
                let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-12);
                assert!(rel < 1e-6 || (a - fd).abs() < 1e-9, "param {i}: analytic {a}, fd {fd}");
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let net = randomized(5);
        let (_, cache) = net.forward_cached(&[0.2; 8], 0.5, &Condition::Null).unwrap();
        let g = net.backward(&cache, &[0.0; 8]).unwrap();
        assert!(g.flat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn null_token_gradient_only_on_null_path() {
        let net = randomized(6);
        let null = net.param("null_token").unwrap().clone();
        let cond_w = net.param("cond.weight").unwrap().clone();
        let (_, cache) = net.forward_cached(&[0.2; 8], 0.5, &Condition::Vector(vec![1.0; 5])).unwrap();
        let g = net.backward(&cache, &[1.0; 8]).unwrap();
        assert!(g.slice(&null).iter().all(|&v| v == 0.0));
        assert!(g.slice(&cond_w).iter().any(|&v| v != 0.0));

        let (_, cache) = net.forward_cached(&[0.2; 8], 0.5, &Condition::Null).unwrap();
        let g = net.backward(&cache, &[1.0; 8]).unwrap();
        assert!(g.slice(&null).iter().any(|&v| v != 0.0));
        assert!(g.slice(&cond_w).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = randomized(7);
        let (_, cache) = net.forward_cached(&[0.2; 8], 0.5, &Condition::Null).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0; 8]), Err(Error::StaleCache { .. })));
    }

    #[test]
    fn one_hot_condition_embeddings_are_distinct_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = VelocityField::new(small_arch(), &mut rng).unwrap();
        let embeddings: Vec<Vec<f64>> = (0..5)
            .map(|k| {
                let mut v = vec![0.0; 5];
                v[k] = 1.0;
                net.condition_embedding(&Condition::Vector(v)).unwrap()
            })
            .collect();
        for i in 0..5 {
            for j in i + 1..5 {
                let dist = crate::vecops::norm(&crate::vecops::sub(&embeddings[i], &embeddings[j]));
                assert!(dist > 1e-9);
            }
        }
    }

    #[test]
    fn forward_stays_finite_on_bounded_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = randomized(10);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-50.0..50.0)).collect();
            let c = Condition::Vector((0..5).map(|_| rng.random_range(-5.0..5.0)).collect());
            let y = net.forward(&x, rng.random_range(0.0..=1.0), &c).unwrap();
            assert!(all_finite(&y));
        }
    }

    #[test]
    fn time_embedding_shape() {
        let e = time_embedding(0.0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(time_embedding(0.7, 32).len(), 32);
    }

    #[test]
    fn from_params_round_trip() {
        let net = randomized(11);
        let copy = VelocityField::from_params(net.architecture().clone(), net.params().to_vec()).unwrap();
        let x = [0.1; 8];
        assert_eq!(net.forward(&x, 0.2, &Condition::Null).unwrap(), copy.forward(&x, 0.2, &Condition::Null).unwrap());
        assert!(VelocityField::from_params(net.architecture().clone(), vec![0.0; 3]).is_err());
    }
}
