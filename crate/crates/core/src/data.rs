//! Synthetic paired feature tasks and feature-file I/O.
//!
//! A task has `n_classes` source clusters (von Mises-Fisher directions with
//! log-normal radii) and one fixed target prototype per class. Source class
//! means sit inside a cap around a shared center while prototypes are drawn
//! independently, so raw source features are only weakly aligned with their
//! prototypes and transport has real work to do.
//!
//! Feature files (`WPFMFEAT`, little endian):
//!
//! ```text
//! offset  size    field
//! 0       8       magic "WPFMFEAT"
//! 8       4       version u32 (1)
//! 12      4       d u32
//! 16      8       rows u64
//! 24      4*d*n   row-major f32 values
//! ```
//!
//! A headered CSV is also accepted: first line `d=<int>`, then one
//! comma-separated row per line.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::manifold::sphere_exp;
use crate::vecops::{dot, normalize_in_place, unit_angle};
use crate::velocity_net::Condition;
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"WPFMFEAT";
const FEATURE_VERSION: u32 = 1;
const MAX_SEPARATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub d: usize,
    pub n_classes: usize,
    /// vMF concentration of source directions around their class mean.
    pub kappa_src: f64,
    /// Log-normal location of source radii (log of the median).
    pub r_src_mean: f64,
    /// Log-normal scale of source radii.
    pub r_src_std: f64,
    /// Prototype radius, shared by every class.
    pub r_tgt: f64,
    pub shots_per_class: usize,
    pub heldout_per_class: usize,
    pub seed: u64,
    pub c_dim: usize,
    /// Minimum angle between distinct class means, and between distinct
    /// prototypes.
    pub min_sep: f64,
    /// Source class means lie within this angle of a shared center.
    pub source_spread: f64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            d: 16,
            n_classes: 2,
            kappa_src: 16.0,
            r_src_mean: 0.0,
            r_src_std: 0.25,
            r_tgt: 2.0,
            shots_per_class: 16,
            heldout_per_class: 200,
            seed: 0,
            c_dim: 8,
            min_sep: 0.5,
            source_spread: 0.6,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.d < 2 {
            return bad("d must be >= 2");
        }
        if self.n_classes < 1 {
            return bad("n_classes must be >= 1");
        }
        if !(self.kappa_src > 0.0 && self.kappa_src.is_finite()) {
            return bad("kappa_src must be positive");
        }
        if self.shots_per_class < 1 {
            return bad("shots_per_class must be >= 1");
        }
        if self.c_dim < 1 {
            return bad("c_dim must be >= 1");
        }
        if !(self.r_src_std >= 0.0 && self.r_src_mean.is_finite() && self.r_tgt > 0.0) {
            return bad("radius laws must be finite with positive target radius");
        }
        if !(self.min_sep >= 0.0 && self.source_spread > 0.0) {
            return bad("min_sep must be >= 0 and source_spread > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub label: usize,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub pairs: Vec<Pair>,
    pub prototypes: Vec<(usize, Vec<f64>)>,
}

impl PairedDataset {
    pub fn dim(&self) -> usize {
        self.prototypes.first().map(|p| p.1.len()).unwrap_or(0)
    }

    pub fn condition_dim(&self) -> usize {
        self.pairs
            .iter()
            .find_map(|p| match &p.condition {
                Condition::Vector(v) => Some(v.len()),
                Condition::Null => None,
            })
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplit {
    pub train: PairedDataset,
    pub heldout: PairedDataset,
}

/// Uniform direction on the unit sphere in `d` dimensions.
pub fn uniform_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if normalize_in_place(&mut v) > 1e-12 {
            return v;
        }
    }
}

/// Draws from the von Mises-Fisher distribution with unit mean `mu` and
/// concentration `kappa > 0`, using Wood's rejection sampler for the cosine
/// to the mean and a uniform tangent direction.
pub fn sample_vmf<R: Rng + ?Sized>(mu: &[f64], kappa: f64, rng: &mut R) -> Vec<f64> {
    let d = mu.len();
    let m1 = (d - 1) as f64;
    // stable for large kappa
    let b = m1 / (2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(m1 / 2.0, m1 / 2.0).expect("valid beta parameters");
    let w = loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * w + m1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };
    // tangent direction orthogonal to mu
    let mut v = loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let along = dot(&v, mu);
        for (vi, m) in v.iter_mut().zip(mu) {
            *vi -= along * m;
        }
        if normalize_in_place(&mut v) > 1e-12 {
            break v;
        }
    };
    let s = (1.0 - w * w).max(0.0).sqrt();
    for (vi, m) in v.iter_mut().zip(mu) {
        *vi = w * m + s * *vi;
    }
    normalize_in_place(&mut v);
    v
}

/// Mean resultant length of vMF on the sphere in `d` dimensions,
/// `I_{d/2}(kappa) / I_{d/2-1}(kappa)`, from the power series of both
/// Bessel functions with their common prefactor cancelled.
pub fn vmf_mean_resultant(d: usize, kappa: f64) -> f64 {
    let nu = d as f64 / 2.0;
    let q = 0.25 * kappa * kappa;
    let series = |order: f64| {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 0..10_000 {
            let k = k as f64;
            term *= q / ((k + 1.0) * (k + 1.0 + order));
            sum += term;
            if term < sum * 1e-17 && k > q.sqrt() {
                break;
            }
        }
        sum
    };
    (kappa / 2.0) / nu * series(nu) / series(nu - 1.0)
}

struct Geometry {
    source_means: Vec<Vec<f64>>,
    prototypes: Vec<Vec<f64>>,
    conditions: Vec<Vec<f64>>,
}

fn separated(candidate: &[f64], chosen: &[Vec<f64>], min_sep: f64) -> bool {
    chosen.iter().all(|c| unit_angle(candidate, c) >= min_sep)
}

fn draw_geometry(spec: &SyntheticTaskSpec, rng: &mut ChaCha8Rng) -> Result<Geometry> {
    let d = spec.d;
    let center = uniform_direction(d, rng);
    let mut attempts = 0;
    let mut source_means: Vec<Vec<f64>> = Vec::with_capacity(spec.n_classes);
    while source_means.len() < spec.n_classes {
        attempts += 1;
        if attempts > MAX_SEPARATION_ATTEMPTS {
            return Err(Error::SeparationFailure { attempts: attempts - 1 });
        }
        // uniform angle in the cap, uniform tangent direction
        let mut tangent = uniform_direction(d, rng);
        let along = dot(&tangent, &center);
        for (t, c) in tangent.iter_mut().zip(&center) {
            *t -= along * c;
        }
        normalize_in_place(&mut tangent);
        let angle = spec.source_spread * rng.random::<f64>().sqrt();
        let candidate = sphere_exp(&center, &tangent, angle);
        if separated(&candidate, &source_means, spec.min_sep) {
            source_means.push(candidate);
        }
    }
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(spec.n_classes);
    while prototypes.len() < spec.n_classes {
        attempts += 1;
        if attempts > MAX_SEPARATION_ATTEMPTS {
            return Err(Error::SeparationFailure { attempts: attempts - 1 });
        }
        let candidate = uniform_direction(d, rng);
        if separated(&candidate, &prototypes, spec.min_sep) {
            prototypes.push(candidate);
        }
    }
    for p in prototypes.iter_mut() {
        for v in p.iter_mut() {
            *v *= spec.r_tgt;
        }
    }
    // one-hot labels through a fixed random projection
    let scale = 1.0 / (spec.c_dim as f64).sqrt();
    let projection: Vec<Vec<f64>> = (0..spec.c_dim)
        .map(|_| (0..spec.n_classes).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let conditions = (0..spec.n_classes)
        .map(|k| projection.iter().map(|row| row[k]).collect())
        .collect();
    Ok(Geometry {
        source_means,
        prototypes,
        conditions,
    })
}

fn draw_pairs(spec: &SyntheticTaskSpec, geo: &Geometry, per_class: usize, rng: &mut ChaCha8Rng) -> Result<PairedDataset> {
    let radius = LogNormal::new(spec.r_src_mean, spec.r_src_std)
        .map_err(|e| Error::InvalidArgument(format!("radius law: {e}")))?;
    let mut pairs = Vec::with_capacity(per_class * spec.n_classes);
    for label in 0..spec.n_classes {
        let proto = &geo.prototypes[label];
        let proto_dir: Vec<f64> = proto.iter().map(|v| v / spec.r_tgt).collect();
        for _ in 0..per_class {
            let dir = sample_vmf(&geo.source_means[label], spec.kappa_src, rng);
            let alpha = unit_angle(&dir, &proto_dir);
            assert!(
                alpha < std::f64::consts::PI - 1e-3,
                "source direction nearly antipodal to its prototype"
            );
            let r: f64 = radius.sample(rng);
            pairs.push(Pair {
                x0: dir.iter().map(|v| r * v).collect(),
                x1: proto.clone(),
                label,
                condition: Condition::Vector(geo.conditions[label].clone()),
            });
        }
    }
    Ok(PairedDataset {
        pairs,
        prototypes: geo.prototypes.iter().cloned().enumerate().collect(),
    })
}

/// Training pairs of the task described by `spec`.
pub fn generate_task(spec: &SyntheticTaskSpec) -> Result<PairedDataset> {
    Ok(generate_split(spec)?.train)
}

/// Training pairs plus a held-out set drawn from an independent stream with
/// the same geometry.
pub fn generate_split(spec: &SyntheticTaskSpec) -> Result<TaskSplit> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let geo = draw_geometry(spec, &mut rng)?;
    let train = draw_pairs(spec, &geo, spec.shots_per_class, &mut rng)?;
    let mut held_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    held_rng.set_stream(1);
    let heldout = draw_pairs(spec, &geo, spec.heldout_per_class, &mut held_rng)?;
    Ok(TaskSplit { train, heldout })
}

/// Writes rows in the binary feature format. All rows must share one length.
pub fn write_features<W: Write>(mut w: W, rows: &[Vec<f64>]) -> Result<()> {
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let d32 = u32::try_from(d).map_err(|_| Error::InvalidArgument("dimension exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(24 + 4 * d * rows.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&d32.to_le_bytes());
    buf.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for row in rows {
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_features(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut buf = Vec::new();
    write_features(&mut buf, rows)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Parses either format, chosen by the leading bytes.
pub fn parse_features(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    if bytes.starts_with(b"d=") {
        return parse_csv_features(bytes);
    }
    if bytes.len() < 8 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::format(0, "bad magic, expected WPFMFEAT or a 'd=' CSV header"));
    }
    if bytes.len() < 24 {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::format(8, format!("unsupported version {version}")));
    }
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if d == 0 {
        return Err(Error::format(12, "dimension must be positive"));
    }
    let row_bytes = 4 * d as u64;
    let expected = rows
        .checked_mul(row_bytes)
        .and_then(|n| n.checked_add(24))
        .ok_or_else(|| Error::format(16, "row count overflows"))?;
    let actual = bytes.len() as u64;
    if actual < expected {
        // offset of the first incomplete row
        let complete = (actual - 24) / row_bytes;
        return Err(Error::format(
            24 + complete * row_bytes,
            format!("truncated data: header promises {rows} rows, file holds {complete}"),
        ));
    }
    if actual > expected {
        return Err(Error::format(expected, "trailing bytes after the last row"));
    }
    Ok(bytes[24..]
        .chunks_exact(4 * d)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        })
        .collect())
}

fn parse_csv_features(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(e.valid_up_to() as u64, "invalid UTF-8"))?;
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().unwrap_or("");
    let d: usize = header
        .trim()
        .strip_prefix("d=")
        .and_then(|s| s.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::format(0, "header must be 'd=<positive int>'"))?;
    offset += header.len() as u64;
    let mut rows = Vec::new();
    for line in lines {
        let here = offset;
        offset += line.len() as u64;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(here, format!("bad number: {e}")))?;
        if row.len() != d {
            return Err(Error::format(here, format!("row has {} values, header says d={d}", row.len())));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_features(&std::fs::read(path)?)
}
