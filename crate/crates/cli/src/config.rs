//! Experiment configuration: defaults, flat `key = value` config files, and
//! command-line overrides, resolved into one [`TaskConfig`] per output
//! directory.
//!
//! A task is the unit of reproducibility: dataset parameters plus every
//! training knob. The resolved task is written to `task.cfg` inside the
//! output directory on first use and checked on every later command, so one
//! directory always holds runs of exactly one task.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use daan_core::datagen::{ShiftKind, ShiftScenario};
use daan_core::net::NetConfig;
use daan_core::trainer::{OmegaMode, TrainConfig};

/// Synthetic dataset parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DataParams {
    pub n_source: usize,
    pub n_target: usize,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
}

/// Everything that defines a task: the domain pair and the training knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub kind: ShiftKind,
    pub magnitude: f64,
    pub magnitude2: Option<f64>,
    /// Task seed: drives the dataset draw and the family of run seeds.
    pub seed: u64,
    pub data: DataParams,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eta0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub momentum: f64,
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub disc_hidden: usize,
    pub classifier_lr_mult: f64,
    pub detach_local_weights: bool,
    pub local_class_mean: bool,
    pub omega_mass_threshold: f64,
    pub omega_ema: Option<f64>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: ShiftKind::Marginal,
            magnitude: 1.5,
            magnitude2: None,
            seed: 1,
            data: DataParams {
                n_source: 600,
                n_target: 600,
                classes: 3,
                dim: 6,
                spread: 1.0,
            },
            lambda: 1.0,
            batch_size: 32,
            epochs: 30,
            eta0: 0.01,
            alpha: 10.0,
            beta: 0.75,
            momentum: 0.9,
            feature_dim: 32,
            hidden_width: 64,
            disc_hidden: 64,
            classifier_lr_mult: 10.0,
            detach_local_weights: true,
            local_class_mean: false,
            omega_mass_threshold: 1e-6,
            omega_ema: None,
        }
    }
}

impl TaskConfig {
    /// Scenario used to draw the target domain. The target draw is seeded
    /// one past the task seed so it is independent of the source draw.
    pub fn scenario(&self) -> ShiftScenario<f64> {
        ShiftScenario {
            kind: self.kind,
            magnitude: self.magnitude,
            magnitude2: self.magnitude2,
            seed: self.seed.wrapping_add(1),
        }
    }

    /// Training configuration for one run of this task.
    pub fn train_config(&self, run_seed: u64, omega_mode: OmegaMode<f64>) -> TrainConfig<f64> {
        let net = NetConfig {
            input_dim: self.data.dim,
            feature_dim: self.feature_dim,
            hidden_width: self.hidden_width,
            num_classes: self.data.classes,
            discriminator_hidden: self.disc_hidden,
            init_seed: run_seed,
        };
        TrainConfig {
            lambda: self.lambda,
            batch_size: self.batch_size,
            epochs: self.epochs,
            eta0: self.eta0,
            alpha: self.alpha,
            beta: self.beta,
            momentum: self.momentum,
            omega_mode,
            net,
            seed: run_seed,
            classifier_lr_multiplier: self.classifier_lr_mult,
            detach_local_weights: self.detach_local_weights,
            local_class_mean: self.local_class_mean,
            omega_mass_threshold: self.omega_mass_threshold,
            omega_ema: self.omega_ema,
        }
    }

    /// Seed of the i-th repeat.
    pub fn run_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }

    /// Flat `key = value` rendering, stable key order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("scenario", self.kind.name().to_string());
        kv("magnitude", fmt_f64(self.magnitude));
        if let Some(m2) = self.magnitude2 {
            kv("magnitude2", fmt_f64(m2));
        }
        kv("seed", self.seed.to_string());
        kv("n-source", self.data.n_source.to_string());
        kv("n-target", self.data.n_target.to_string());
        kv("classes", self.data.classes.to_string());
        kv("dim", self.data.dim.to_string());
        kv("spread", fmt_f64(self.data.spread));
        kv("lambda", fmt_f64(self.lambda));
        kv("batch-size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("eta0", fmt_f64(self.eta0));
        kv("alpha", fmt_f64(self.alpha));
        kv("beta", fmt_f64(self.beta));
        kv("momentum", fmt_f64(self.momentum));
        kv("feature-dim", self.feature_dim.to_string());
        kv("hidden-width", self.hidden_width.to_string());
        kv("disc-hidden", self.disc_hidden.to_string());
        kv("classifier-lr-mult", fmt_f64(self.classifier_lr_mult));
        kv(
            "detach-local-weights",
            self.detach_local_weights.to_string(),
        );
        kv("local-class-mean", self.local_class_mean.to_string());
        kv("omega-mass-threshold", fmt_f64(self.omega_mass_threshold));
        if let Some(e) = self.omega_ema {
            kv("omega-ema", fmt_f64(e));
        }
        s
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip form keeps config files exact
    format!("{v}")
}

/// Key/value pairs from a config file or the command line; later sources
/// override earlier ones key by key.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    values: BTreeMap<String, String>,
}

/// Keys accepted in config files and as flags.
const TASK_KEYS: &[&str] = &[
    "scenario",
    "magnitude",
    "magnitude2",
    "seed",
    "n-source",
    "n-target",
    "classes",
    "dim",
    "spread",
    "lambda",
    "batch-size",
    "epochs",
    "eta0",
    "alpha",
    "beta",
    "momentum",
    "feature-dim",
    "hidden-width",
    "disc-hidden",
    "classifier-lr-mult",
    "detach-local-weights",
    "local-class-mean",
    "omega-mass-threshold",
    "omega-ema",
];

/// Run-scoped keys (not part of the task identity).
const RUN_KEYS: &[&str] = &["omega", "repeats", "t", "out"];

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Apply `other` on top of `self`.
    pub fn merged_with(mut self, other: &Overrides) -> Overrides {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
        self
    }
}

/// Parse a flat `key = value` file. Blank lines and `#` comments are
/// ignored.
pub fn parse_config_file(path: &Path) -> Result<Overrides> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse_config_text(&text, &path.display().to_string())
}

pub fn parse_config_text(text: &str, origin: &str) -> Result<Overrides> {
    let mut out = Overrides::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            anyhow!(
                "{origin}: line {}: expected `key = value`, got {raw:?}",
                i + 1
            )
        })?;
        let key = key.trim();
        let value = value.trim();
        if !TASK_KEYS.contains(&key) && !RUN_KEYS.contains(&key) {
            bail!("{origin}: line {}: unknown key {key:?}", i + 1);
        }
        out.set(key, value);
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(kv: &Overrides, key: &str, current: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match kv.get(key) {
        Some(v) => v
            .parse()
            .map_err(|e| anyhow!("bad value for {key}: {v:?} ({e})")),
        None => Ok(current),
    }
}

/// Build the task from defaults plus overrides.
pub fn resolve_task(kv: &Overrides) -> Result<TaskConfig> {
    let d = TaskConfig::default();
    let magnitude2 = match kv.get("magnitude2") {
        Some(v) => Some(
            v.parse::<f64>()
                .map_err(|e| anyhow!("bad value for magnitude2: {v:?} ({e})"))?,
        ),
        None => d.magnitude2,
    };
    let omega_ema = match kv.get("omega-ema") {
        Some("off") | Some("none") => None,
        Some(v) => Some(
            v.parse::<f64>()
                .map_err(|e| anyhow!("bad value for omega-ema: {v:?} ({e})"))?,
        ),
        None => d.omega_ema,
    };
    let task = TaskConfig {
        kind: match kv.get("scenario") {
            Some(v) => v.parse().map_err(|e| anyhow!("{e}"))?,
            None => d.kind,
        },
        magnitude: parse(kv, "magnitude", d.magnitude)?,
        magnitude2,
        seed: parse(kv, "seed", d.seed)?,
        data: DataParams {
            n_source: parse(kv, "n-source", d.data.n_source)?,
            n_target: parse(kv, "n-target", d.data.n_target)?,
            classes: parse(kv, "classes", d.data.classes)?,
            dim: parse(kv, "dim", d.data.dim)?,
            spread: parse(kv, "spread", d.data.spread)?,
        },
        lambda: parse(kv, "lambda", d.lambda)?,
        batch_size: parse(kv, "batch-size", d.batch_size)?,
        epochs: parse(kv, "epochs", d.epochs)?,
        eta0: parse(kv, "eta0", d.eta0)?,
        alpha: parse(kv, "alpha", d.alpha)?,
        beta: parse(kv, "beta", d.beta)?,
        momentum: parse(kv, "momentum", d.momentum)?,
        feature_dim: parse(kv, "feature-dim", d.feature_dim)?,
        hidden_width: parse(kv, "hidden-width", d.hidden_width)?,
        disc_hidden: parse(kv, "disc-hidden", d.disc_hidden)?,
        classifier_lr_mult: parse(kv, "classifier-lr-mult", d.classifier_lr_mult)?,
        detach_local_weights: parse(kv, "detach-local-weights", d.detach_local_weights)?,
        local_class_mean: parse(kv, "local-class-mean", d.local_class_mean)?,
        omega_mass_threshold: parse(kv, "omega-mass-threshold", d.omega_mass_threshold)?,
        omega_ema,
    };
    if task.magnitude < 0.0 {
        bail!("magnitude must be nonnegative, got {}", task.magnitude);
    }
    Ok(task)
}

/// Parse `dynamic` or `fixed:<v>`.
pub fn parse_omega_mode(s: &str) -> Result<OmegaMode<f64>> {
    if s == "dynamic" {
        return Ok(OmegaMode::Dynamic);
    }
    if let Some(v) = s.strip_prefix("fixed:") {
        let v: f64 = v
            .parse()
            .map_err(|e| anyhow!("bad fixed factor {v:?} ({e})"))?;
        if !(0.0..=1.0).contains(&v) {
            bail!("fixed factor must lie in [0,1], got {v}");
        }
        return Ok(OmegaMode::Fixed(v));
    }
    bail!("omega must be `dynamic` or `fixed:<v>`, got {s:?}")
}

/// Fully resolved invocation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub task: TaskConfig,
    pub out: PathBuf,
    pub omega: OmegaMode<f64>,
    pub repeats: usize,
    pub t: usize,
}

pub fn resolve(kv: &Overrides) -> Result<Resolved> {
    let task = resolve_task(kv)?;
    let out = PathBuf::from(kv.get("out").unwrap_or("daan-out"));
    let omega = match kv.get("omega") {
        Some(s) => parse_omega_mode(s)?,
        None => OmegaMode::Dynamic,
    };
    let repeats: usize = parse(kv, "repeats", 5)?;
    let t: usize = parse(kv, "t", 20)?;
    if repeats == 0 {
        bail!("repeats must be at least 1");
    }
    if t == 0 {
        bail!("t must be at least 1");
    }
    Ok(Resolved {
        task,
        out,
        omega,
        repeats,
        t,
    })
}
