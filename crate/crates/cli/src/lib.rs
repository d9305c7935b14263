//! Command implementations behind the `wpfm` binary.
//!
//! Every command reads a resolved [`ExperimentConfig`], writes its outputs
//! atomically into an output directory and reports failures through
//! [`CliError`], whose exit code is part of the scripting contract:
//! 0 success, 2 usage or config error, 3 numerical failure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wpfm_core::analysis::{self, RadialSummary};
use wpfm_core::data::{self, generate_split, SyntheticTaskSpec, TaskSplit};
use wpfm_core::flowmatch::{self, EpochStats, TargetPath, TimeConvention, TrainConfig};
use wpfm_core::inference::{self, EvalReport, InferenceConfig, Integrator, OracleField};
use wpfm_core::manifold::{polar_decompose, PolarPoint, WarpFunction};
use wpfm_core::velocity_net::{self, Checkpoint, Condition, NetConfig, VelocityField};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }

    pub fn numerical(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: error.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<wpfm_core::Error> for CliError {
    fn from(e: wpfm_core::Error) -> Self {
        use wpfm_core::Error as E;
        let code = match e {
            E::NonFiniteLoss { .. } | E::NonFiniteState { .. } | E::RadialUnderflow { .. } | E::NoConvergence { .. } => 3,
            _ => 2,
        };
        Self { code, error: e.into() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

trait UsageContext<T> {
    fn usage_ctx(self, msg: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for std::result::Result<T, E> {
    fn usage_ctx(self, msg: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::usage(e.into().context(msg())))
    }
}

/// Everything a run depends on. Every section and field has a default and
/// unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub net: NetConfig,
    pub task: SyntheticTaskSpec,
    pub eval: InferenceConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).usage_ctx(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).usage_ctx(|| format!("invalid config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate().usage_ctx(|| "train section".into())?;
        self.task.validate().usage_ctx(|| "task section".into())?;
        self.eval.validate().usage_ctx(|| "eval section".into())?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// Hex SHA-256 of the checkpoint bytes, when a checkpoint is involved.
    pub checkpoint_sha256: Option<String>,
    /// Wall-clock milliseconds per phase. Not reproducible.
    pub timings_ms: Vec<(String, f64)>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let write = || -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    };
    write().usage_ctx(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::usage)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Flags shared by commands that resolve an experiment config.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Experiment config JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for both task generation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Warping function: euclidean|hyperbolic|constant:<c>.
    #[arg(long)]
    pub warp: Option<WarpFunction>,
    /// Target path: dual|chord.
    #[arg(long)]
    pub geodesic: Option<TargetPath>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load_or_default(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.task.seed = seed;
        }
        if let Some(w) = self.warp {
            cfg.train.warp = w;
        }
        if let Some(g) = self.geodesic {
            cfg.train.geodesic = g;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntegratorArg {
    Expmap,
    Ambient,
}

impl From<IntegratorArg> for Integrator {
    fn from(a: IntegratorArg) -> Self {
        match a {
            IntegratorArg::Expmap => Integrator::ExpMap,
            IntegratorArg::Ambient => Integrator::AmbientEuler,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub struct TrainOutput {
    pub history: Vec<EpochStats>,
    pub checkpoint_sha256: String,
}

/// Trains on the configured synthetic task and writes the checkpoint, the
/// per-epoch loss CSV and a manifest.
pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainOutput> {
    let cfg = args.config.resolve()?;
    let start = Instant::now();
    let split = generate_split(&cfg.task)?;
    let data_ms = ms_since(start);

    let mut csv = String::from("epoch,loss,radial_loss,angular_loss,wall_ms\n");
    let mut history = Vec::with_capacity(cfg.train.epochs);
    let train_start = Instant::now();
    let mut last = Instant::now();
    let (net, opt) = flowmatch::fit(&cfg.net, &split.train, &cfg.train, |s| {
        let wall = ms_since(last);
        last = Instant::now();
        csv.push_str(&format!("{},{},{},{},{:.3}\n", s.epoch, s.loss, s.radial_loss, s.angular_loss, wall));
        eprintln!("epoch {:>4}  loss {:.6e}  radial {:.6e}  angular {:.6e}", s.epoch, s.loss, s.radial_loss, s.angular_loss);
        history.push(*s);
    })?;
    let train_ms = ms_since(train_start);

    let ckpt = Checkpoint::new(
        net,
        opt.step_count(),
        cfg.hash(),
        cfg.train.time_convention(),
        serde_json::to_value(&cfg).map_err(CliError::usage)?,
    );
    let mut bytes = Vec::new();
    velocity_net::write_checkpoint(&mut bytes, &ckpt)?;
    let checkpoint_sha256 = sha256_hex(&bytes);
    write_atomic(&args.out.join(CHECKPOINT_FILE), &bytes)?;
    write_atomic(&args.out.join(LOSS_FILE), csv.as_bytes())?;
    write_json(
        &args.out.join(MANIFEST_FILE),
        &RunManifest {
            command: "train".into(),
            tool_version: TOOL_VERSION.into(),
            seed: cfg.train.seed,
            config_hash: cfg.hash(),
            config: cfg,
            checkpoint_sha256: Some(checkpoint_sha256.clone()),
            timings_ms: vec![("data".into(), data_ms), ("train".into(), train_ms)],
        },
    )?;
    Ok(TrainOutput { history, checkpoint_sha256 })
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Overrides the config stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Transport the rows of this feature file (unconditional) instead of
    /// the synthetic held-out split.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// One integer label per line for `--features`.
    #[arg(long, requires = "features")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    #[arg(long, value_enum)]
    pub integrator: Option<IntegratorArg>,
    /// Replace the network by the closed-form dual-geodesic field toward
    /// each example's own prototype.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Pointwise check of the guidance identities on a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfgIdentityCheck {
    pub points: usize,
    /// `max |v(w=1) - v(x, t | c)|`
    pub max_w1_error: f64,
    /// `max |v(w) - v(0) - w (v(1) - v(0))|` over the tested scales.
    pub max_affine_error: f64,
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub accuracy: Option<f64>,
    pub per_class_accuracy: Vec<f64>,
    pub mean_angular_endpoint_error: Option<f64>,
    pub n_steps: usize,
    pub w: f64,
    pub integrator: Integrator,
    pub n_examples: usize,
    pub oracle: bool,
    /// Nearest-prototype accuracy of the untransported inputs.
    pub identity_accuracy: Option<f64>,
    /// The same evaluation at `w = 0`.
    pub unguided: Option<EvalReport>,
    /// Sign of `accuracy - unguided.accuracy`.
    pub guidance_effect: Option<String>,
    pub cfg_identity: Option<CfgIdentityCheck>,
    /// Nearest-prototype label per row in `--features` mode.
    pub predictions: Option<Vec<usize>>,
}

fn read_checkpoint(path: &Path) -> CliResult<(Checkpoint, String)> {
    let bytes = std::fs::read(path).usage_ctx(|| format!("cannot read checkpoint {}", path.display()))?;
    let ckpt = velocity_net::read_checkpoint(&bytes[..]).usage_ctx(|| format!("invalid checkpoint {}", path.display()))?;
    Ok((ckpt, sha256_hex(&bytes)))
}

fn check_compatible(net: &VelocityField, split: &TaskSplit) -> CliResult<()> {
    let arch = net.architecture();
    let (d, c) = (split.heldout.dim(), split.heldout.condition_dim());
    if arch.d != d || arch.c_dim != c {
        return Err(CliError::usage(anyhow!(
            "checkpoint expects d={} and c_dim={}, task has d={d} and c_dim={c}",
            arch.d,
            arch.c_dim
        )));
    }
    Ok(())
}

fn cfg_identity(net: &VelocityField, split: &TaskSplit, time: TimeConvention) -> CliResult<CfgIdentityCheck> {
    let scales = vec![0.0, 0.5, 1.0, 2.0, 5.0];
    let pairs = &split.heldout.pairs[..split.heldout.pairs.len().min(16)];
    let (mut w1, mut affine) = (0.0f64, 0.0f64);
    for (i, pair) in pairs.iter().enumerate() {
        let t = time.network_time(i as f64 / pairs.len() as f64);
        let v_c = net.forward(&pair.x0, t, &pair.condition)?;
        let g = |w| inference::guided_velocity(net, &pair.x0, t, &pair.condition, w);
        let (g0, g1) = (g(0.0)?, g(1.0)?);
        w1 = g1.iter().zip(&v_c).map(|(a, b)| (a - b).abs()).fold(w1, f64::max);
        for &w in &scales {
            let gw = g(w)?;
            for k in 0..gw.len() {
                affine = affine.max((gw[k] - g0[k] - w * (g1[k] - g0[k])).abs());
            }
        }
    }
    Ok(CfgIdentityCheck {
        points: pairs.len(),
        max_w1_error: w1,
        max_affine_error: affine,
        scales,
    })
}

fn oracle_report(split: &TaskSplit, cfg: &InferenceConfig) -> CliResult<EvalReport> {
    let protos = &split.heldout.prototypes;
    let n_classes = protos.len();
    let (mut hits, mut counts) = (vec![0usize; n_classes], vec![0usize; n_classes]);
    let mut angle = 0.0;
    for pair in &split.heldout.pairs {
        let target = polar_decompose(&pair.x1)?;
        let out = inference::transport(&OracleField { target: target.clone() }, &pair.x0, cfg)?;
        counts[pair.label] += 1;
        if inference::nearest_prototype(&out.x_final, protos)? == pair.label {
            hits[pair.label] += 1;
        }
        angle += wpfm_core::vecops::unit_angle(polar_decompose(&out.x_final)?.theta(), target.theta());
    }
    let total: usize = counts.iter().sum();
    Ok(EvalReport {
        accuracy: hits.iter().sum::<usize>() as f64 / total as f64,
        per_class_accuracy: hits.iter().zip(&counts).map(|(&h, &c)| h as f64 / c.max(1) as f64).collect(),
        mean_angular_endpoint_error: angle / total as f64,
        n_steps: cfg.n_steps,
        w: cfg.cfg_scale,
        n_examples: total,
    })
}

fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path).usage_ctx(|| format!("cannot read labels {}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| l.parse().usage_ctx(|| format!("{}: bad label on row {}", path.display(), i + 1)))
        .collect()
}

/// Transports held-out examples (or feature-file rows) with a trained
/// checkpoint and writes `eval.json` plus a manifest.
pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalOutput> {
    let start = Instant::now();
    let (ckpt, ckpt_sha) = read_checkpoint(&args.checkpoint)?;
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => serde_json::from_value(ckpt.header.config.clone()).usage_ctx(|| "checkpoint carries an unreadable config".into())?,
    };
    if let Some(n) = args.n_steps {
        cfg.eval.n_steps = n;
    }
    if let Some(w) = args.cfg_scale {
        cfg.eval.cfg_scale = w;
    }
    if let Some(i) = args.integrator {
        cfg.eval.integrator = i.into();
    }
    cfg.validate()?;
    let time = ckpt.header.time_convention;
    let net = &ckpt.net;
    let split = generate_split(&cfg.task)?;
    let protos = &split.heldout.prototypes;
    let zero = VelocityField::from_params(net.architecture().clone(), vec![0.0; net.num_params()])?;

    let out = if let Some(path) = &args.features {
        let rows = data::load_features(path).usage_ctx(|| format!("cannot load features {}", path.display()))?;
        if rows.first().is_some_and(|r| r.len() != net.architecture().d) {
            return Err(CliError::usage(anyhow!("feature dimension does not match checkpoint d={}", net.architecture().d)));
        }
        let labels = args.labels.as_deref().map(read_labels).transpose()?;
        if labels.as_ref().is_some_and(|l| l.len() != rows.len()) {
            return Err(CliError::usage(anyhow!("label count does not match feature rows")));
        }
        let field = inference::GuidedField {
            net,
            condition: &Condition::Null,
            cfg_scale: cfg.eval.cfg_scale,
            time,
        };
        let mut predictions = Vec::with_capacity(rows.len());
        let mut transported = Vec::with_capacity(rows.len());
        for row in &rows {
            let x = inference::transport(&field, row, &cfg.eval)?.x_final;
            predictions.push(inference::nearest_prototype(&x, protos)?);
            transported.push(x);
        }
        let mut bytes = Vec::new();
        data::write_features(&mut bytes, &transported)?;
        write_atomic(&args.out.join("transported.feat"), &bytes)?;
        let score = |preds: &[usize]| {
            labels
                .as_ref()
                .map(|l| preds.iter().zip(l).filter(|(a, b)| a == b).count() as f64 / l.len().max(1) as f64)
        };
        let identity: Vec<usize> = rows.iter().map(|r| inference::nearest_prototype(r, protos)).collect::<Result<_, _>>()?;
        EvalOutput {
            accuracy: score(&predictions),
            per_class_accuracy: Vec::new(),
            mean_angular_endpoint_error: None,
            n_steps: cfg.eval.n_steps,
            w: cfg.eval.cfg_scale,
            integrator: cfg.eval.integrator,
            n_examples: rows.len(),
            oracle: false,
            identity_accuracy: score(&identity),
            unguided: None,
            guidance_effect: None,
            cfg_identity: None,
            predictions: Some(predictions),
        }
    } else {
        check_compatible(net, &split)?;
        let identity = inference::evaluate_pairs(&zero, &split.heldout.pairs, protos, &InferenceConfig { n_steps: 1, ..cfg.eval.clone() }, time)?;
        if args.oracle {
            let r = oracle_report(&split, &cfg.eval)?;
            EvalOutput {
                accuracy: Some(r.accuracy),
                per_class_accuracy: r.per_class_accuracy,
                mean_angular_endpoint_error: Some(r.mean_angular_endpoint_error),
                n_steps: r.n_steps,
                w: r.w,
                integrator: cfg.eval.integrator,
                n_examples: r.n_examples,
                oracle: true,
                identity_accuracy: Some(identity.accuracy),
                unguided: None,
                guidance_effect: None,
                cfg_identity: None,
                predictions: None,
            }
        } else {
            let main = inference::evaluate_pairs(net, &split.heldout.pairs, protos, &cfg.eval, time)?;
            let unguided = inference::evaluate_pairs(net, &split.heldout.pairs, protos, &InferenceConfig { cfg_scale: 0.0, ..cfg.eval.clone() }, time)?;
            let effect = match main.accuracy.partial_cmp(&unguided.accuracy) {
                Some(std::cmp::Ordering::Greater) => "higher",
                Some(std::cmp::Ordering::Less) => "lower",
                _ => "equal",
            };
            EvalOutput {
                accuracy: Some(main.accuracy),
                per_class_accuracy: main.per_class_accuracy,
                mean_angular_endpoint_error: Some(main.mean_angular_endpoint_error),
                n_steps: main.n_steps,
                w: main.w,
                integrator: cfg.eval.integrator,
                n_examples: main.n_examples,
                oracle: false,
                identity_accuracy: Some(identity.accuracy),
                guidance_effect: Some(effect.into()),
                unguided: Some(unguided),
                cfg_identity: Some(cfg_identity(net, &split, time)?),
                predictions: None,
            }
        }
    };
    write_json(&args.out.join(EVAL_FILE), &out)?;
    write_json(
        &args.out.join("eval_manifest.json"),
        &RunManifest {
            command: "eval".into(),
            tool_version: TOOL_VERSION.into(),
            seed: cfg.task.seed,
            config_hash: cfg.hash(),
            config: cfg,
            checkpoint_sha256: Some(ckpt_sha),
            timings_ms: vec![("eval".into(), ms_since(start))],
        },
    )?;
    eprintln!("accuracy {:?} (identity {:?})", out.accuracy, out.identity_accuracy);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    Speed,
    Truncation,
    Radial,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[arg(value_enum)]
    pub kind: StudyKind,
    /// Start direction as comma-separated components (speed).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta0: Option<Vec<f64>>,
    /// End direction as comma-separated components (speed).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta1: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.5)]
    pub r0: f64,
    #[arg(long, default_value_t = 0.5)]
    pub r1: f64,
    /// Endpoint angle in radians (truncation).
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = analysis::DEFAULT_T0)]
    pub t0: f64,
    #[arg(long, default_value_t = 9)]
    pub n_dt: usize,
    #[arg(long, default_value_t = 1001)]
    pub n_grid: usize,
    #[arg(long, default_value = "dual")]
    pub geodesic: TargetPath,
    #[arg(long, default_value = "euclidean")]
    pub warp: WarpFunction,
    /// Feature files for the radial study; each file is one group named by
    /// its stem. Without files the synthetic task's source and prototype
    /// features are used.
    #[arg(long)]
    pub features: Vec<PathBuf>,
    /// Task config for the synthetic radial study.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedSummary {
    pub geodesic: TargetPath,
    pub n_grid: usize,
    pub alpha: f64,
    pub omega_cv: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub argmax_omega_t: f64,
    pub argmin_r_t: f64,
}

fn speed_study(args: &StudyArgs) -> CliResult<()> {
    let theta0 = args.theta0.clone().unwrap_or_else(|| vec![1.0, 0.0]);
    let theta1 = args.theta1.clone().unwrap_or_else(|| vec![0.0, 1.0]);
    if theta0.len() != theta1.len() {
        return Err(CliError::usage(anyhow!("theta0 and theta1 differ in length")));
    }
    let p0 = PolarPoint::from_direction(args.r0, theta0)?;
    let p1 = PolarPoint::from_direction(args.r1, theta1)?;
    let path = args.geodesic.build(&p0, &p1)?;
    let prof = analysis::angular_speed_profile(&path, args.n_grid)?;
    let mut csv = String::from("t,omega,r\n");
    for i in 0..prof.t_grid.len() {
        csv.push_str(&format!("{},{},{}\n", prof.t_grid[i], prof.omega[i], prof.r[i]));
    }
    write_atomic(&args.out.join("speed.csv"), csv.as_bytes())?;
    let fold = |f: fn(f64, f64) -> f64, init| prof.omega.iter().copied().fold(init, f);
    write_json(
        &args.out.join("speed.json"),
        &SpeedSummary {
            geodesic: args.geodesic,
            n_grid: args.n_grid,
            alpha: path.alpha(),
            omega_cv: prof.omega_cv,
            omega_min: fold(f64::min, f64::INFINITY),
            omega_max: fold(f64::max, f64::NEG_INFINITY),
            argmax_omega_t: prof.t_grid[prof.argmax_omega()],
            argmin_r_t: prof.t_grid[prof.argmin_r()],
        },
    )
}

fn truncation_study(args: &StudyArgs) -> CliResult<()> {
    if args.n_dt < 2 {
        return Err(CliError::usage(anyhow!("n_dt must be >= 2")));
    }
    let p0 = PolarPoint::new(args.r0, vec![1.0, 0.0])?;
    let p1 = PolarPoint::from_direction(args.r1, vec![args.alpha.cos(), args.alpha.sin()])?;
    let dts = analysis::log_spaced(1e-1, 1e-3, args.n_dt);
    let rep = analysis::truncation_study(args.warp, &p0, &p1, &dts, args.t0)?;
    let mut csv = String::from("dt,error\n");
    for (d, e) in rep.dt_values.iter().zip(&rep.errors) {
        csv.push_str(&format!("{d},{e}\n"));
    }
    write_atomic(&args.out.join("truncation.csv"), csv.as_bytes())?;
    write_json(&args.out.join("truncation.json"), &rep)
}

fn radial_study(args: &StudyArgs) -> CliResult<()> {
    let (mut feats, mut labels) = (Vec::new(), Vec::new());
    let mut groups = Vec::new();
    if args.features.is_empty() {
        let cfg = ExperimentConfig::load_or_default(args.config.as_deref())?;
        let split = generate_split(&cfg.task)?;
        for p in &split.train.pairs {
            feats.push(p.x0.clone());
            labels.push(format!("source_class{}", p.label));
        }
        for (label, proto) in &split.train.prototypes {
            feats.push(proto.clone());
            labels.push(format!("prototype_class{label}"));
        }
    } else {
        for path in &args.features {
            let rows = data::load_features(path).usage_ctx(|| format!("cannot load features {}", path.display()))?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            groups.push(name.clone());
            labels.extend(std::iter::repeat_n(name, rows.len()));
            feats.extend(rows);
        }
    }
    let stats = analysis::radial_stats(&feats, &labels, &groups)?;
    let mut csv = String::from("group,count,mean,std,min,q1,median,q3,max\n");
    for (g, s) in &stats {
        let RadialSummary { count, mean, std, min, q1, median, q3, max } = s;
        csv.push_str(&format!("{g},{count},{mean},{std},{min},{q1},{median},{q3},{max}\n"));
    }
    write_atomic(&args.out.join("radial.csv"), csv.as_bytes())?;
    write_json(&args.out.join("radial.json"), &stats)
}

pub fn cmd_study(args: &StudyArgs) -> CliResult<()> {
    match args.kind {
        StudyKind::Speed => speed_study(args),
        StudyKind::Truncation => truncation_study(args),
        StudyKind::Radial => radial_study(args),
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Writes the synthetic task as feature files plus label lists.
pub fn cmd_gen_data(args: &GenDataArgs) -> CliResult<()> {
    let cfg = args.config.resolve()?;
    let split = generate_split(&cfg.task)?;
    let save = |name: &str, rows: Vec<Vec<f64>>| -> CliResult<()> {
        let mut bytes = Vec::new();
        data::write_features(&mut bytes, &rows)?;
        write_atomic(&args.out.join(name), &bytes)
    };
    for (tag, set) in [("train", &split.train), ("heldout", &split.heldout)] {
        save(&format!("{tag}_x0.feat"), set.pairs.iter().map(|p| p.x0.clone()).collect())?;
        let labels: String = set.pairs.iter().map(|p| format!("{}\n", p.label)).collect();
        write_atomic(&args.out.join(format!("{tag}_labels.txt")), labels.as_bytes())?;
    }
    save("prototypes.feat", split.train.prototypes.iter().map(|p| p.1.clone()).collect())?;
    write_json(
        &args.out.join(MANIFEST_FILE),
        &RunManifest {
            command: "gen-data".into(),
            tool_version: TOOL_VERSION.into(),
            seed: cfg.task.seed,
            config_hash: cfg.hash(),
            config: cfg,
            checkpoint_sha256: None,
            timings_ms: Vec::new(),
        },
    )
}

#[derive(Debug, Parser)]
#[command(name = "wpfm", version, about = "Flow matching on warped product feature manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a velocity field on the configured synthetic task.
    Train(TrainArgs),
    /// Transport held-out features with a checkpoint and score them.
    Eval(EvalArgs),
    /// Speed-profile, truncation-error or radial-statistics study.
    Study(StudyArgs),
    /// Write the synthetic task to feature files.
    GenData(GenDataArgs),
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Study(a) => cmd_study(a),
        Command::GenData(a) => cmd_gen_data(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
