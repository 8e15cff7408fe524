//! Strategy runners: dynamic-factor training, grid search over fixed
//! factors, random guessing, and average search, all sharing one persisted
//! dataset per task and a run cache keyed by `(factor, seed)`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use daan_core::datagen::{
    self, apply_scenario, make_source, ClusterSpec, LabeledDomain, TargetDomain,
};
use daan_core::trainer::{fit, read_metrics_csv, write_metrics_csv, MetricsRow, OmegaMode};

use crate::config::TaskConfig;

/// The eleven grid values `0.0, 0.1, ..., 1.0`.
pub fn grid_values() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Signed accuracy gap to the grid optimum, in percentage points. Negative
/// when the method beats every fixed factor.
pub fn omega_error(method_acc: f64, grid_best_acc: f64) -> f64 {
    (grid_best_acc - method_acc) * 100.0
}

/// One task's output directory: datasets under `data/`, run metrics under
/// `runs/`, summaries under `summary/`.
#[derive(Debug)]
pub struct Workspace {
    pub out: PathBuf,
    pub task: TaskConfig,
}

/// Outcome of one (possibly cached) training run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub path: PathBuf,
    pub rows: Vec<MetricsRow<f64>>,
    pub cached: bool,
}

impl RunRecord {
    pub fn final_target_accuracy(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.target_accuracy)
    }
}

/// Per-strategy outcome.
#[derive(Debug, Clone)]
pub struct StrategyResult {
    pub strategy: &'static str,
    /// The strategy's reported target accuracy.
    pub mean_accuracy: f64,
    /// Accuracies at the strategy's own granularity: one per repeat for
    /// dynamic and grid (per-seed best), one per grid point and seed for
    /// average search, one per draw for random guessing.
    pub per_run: Vec<f64>,
    /// Grid only: `(seed, best factor, best accuracy)` per repeat.
    pub grid_best: Vec<(u64, f64, f64)>,
    /// Gap to the grid ground truth when grid results exist.
    pub omega_error: Option<f64>,
}

impl Workspace {
    /// Open (or initialize) an output directory for the task. The resolved
    /// task is pinned in `task.cfg`; a later command with a different task
    /// is rejected rather than silently mixing runs.
    pub fn open(out: &Path, task: &TaskConfig) -> Result<Self> {
        fs::create_dir_all(out.join("runs"))?;
        fs::create_dir_all(out.join("data"))?;
        let cfg_path = out.join("task.cfg");
        let rendered = task.render();
        if cfg_path.exists() {
            let existing = fs::read_to_string(&cfg_path)?;
            if existing != rendered {
                bail!(
                    "{} was created with a different task configuration; \
                     use a fresh --out directory or delete it",
                    out.display()
                );
            }
        } else {
            daan_core::util::write_atomic(&cfg_path, &rendered)?;
        }
        Ok(Workspace {
            out: out.to_path_buf(),
            task: task.clone(),
        })
    }

    pub fn source_path(&self) -> PathBuf {
        self.out.join("data/source.csv")
    }

    pub fn target_x_path(&self) -> PathBuf {
        self.out.join("data/target_x.csv")
    }

    pub fn target_eval_path(&self) -> PathBuf {
        self.out.join("data/target_eval.csv")
    }

    /// Generate the task's domain pair if absent, then load it from disk so
    /// every run trains on the persisted decimal values.
    pub fn ensure_dataset(&self) -> Result<(LabeledDomain<f64>, TargetDomain<f64>)> {
        let spec = ClusterSpec::new(
            self.task.data.classes,
            self.task.data.dim,
            self.task.data.spread,
        );
        if !self.source_path().exists()
            || !self.target_x_path().exists()
            || !self.target_eval_path().exists()
        {
            let source = make_source(&spec, self.task.data.n_source, self.task.seed)?;
            let target = apply_scenario(&spec, self.task.data.n_target, &self.task.scenario())?;
            datagen::write_source_csv(&self.source_path(), &source)?;
            datagen::write_target_csv(&self.target_x_path(), &self.target_eval_path(), &target)?;
        }
        let source = datagen::read_source_csv(&self.source_path())?;
        let target = datagen::read_target_csv(&self.target_x_path(), &self.target_eval_path())?;
        Ok((source, target))
    }

    /// Metrics file for a run: the factor mode and seed identify it.
    pub fn run_path(&self, mode: OmegaMode<f64>, strategy_prefix: &str, seed: u64) -> PathBuf {
        let name = match mode {
            OmegaMode::Dynamic => format!("dynamic_seed{seed}.csv"),
            OmegaMode::Fixed(w) => format!("{strategy_prefix}_w{w:.6}_seed{seed}.csv"),
        };
        self.out.join("runs").join(name)
    }

    /// Run one fit, or reuse the cached metrics file if it already exists.
    pub fn run_cached(
        &self,
        mode: OmegaMode<f64>,
        strategy_prefix: &str,
        seed: u64,
        data: &(LabeledDomain<f64>, TargetDomain<f64>),
        force: bool,
    ) -> Result<RunRecord> {
        let path = self.run_path(mode, strategy_prefix, seed);
        if path.exists() && !force {
            let rows = read_metrics_csv(&path)
                .with_context(|| format!("cached run {} is unreadable", path.display()))?;
            return Ok(RunRecord {
                path,
                rows,
                cached: true,
            });
        }
        let cfg = self.task.train_config(seed, mode);
        let result = fit(&cfg, &data.0, &data.1)?;
        write_metrics_csv(&path, &result.metrics)?;
        // read back so fresh and cached runs report identical (persisted)
        // values
        let rows = read_metrics_csv(&path)?;
        Ok(RunRecord {
            path,
            rows,
            cached: false,
        })
    }

    /// Load the grid ground truth if every grid run for these seeds is on
    /// disk: the mean over seeds of the per-seed best accuracy.
    pub fn grid_ground_truth(&self, repeats: usize) -> Option<f64> {
        let mut best_sum = 0.0;
        for i in 0..repeats {
            let seed = self.task.run_seed(i);
            let mut best: Option<f64> = None;
            for w in grid_values() {
                let path = self.run_path(OmegaMode::Fixed(w), "fixed", seed);
                let rows = read_metrics_csv::<f64>(&path).ok()?;
                let acc = rows.last()?.target_accuracy;
                best = Some(best.map_or(acc, |b: f64| b.max(acc)));
            }
            best_sum += best?;
        }
        Some(best_sum / repeats as f64)
    }
}

/// `repeats` dynamic-factor fits over distinct seeds; reports the mean
/// final-epoch target accuracy.
pub fn run_dynamic(ws: &Workspace, repeats: usize, force: bool) -> Result<StrategyResult> {
    let data = ws.ensure_dataset()?;
    let mut per_run = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let seed = ws.task.run_seed(i);
        let rec = ws.run_cached(OmegaMode::Dynamic, "", seed, &data, force)?;
        per_run.push(rec.final_target_accuracy());
    }
    let mean_accuracy = mean(&per_run);
    Ok(StrategyResult {
        strategy: "dynamic",
        mean_accuracy,
        per_run,
        grid_best: Vec::new(),
        omega_error: ws
            .grid_ground_truth(repeats)
            .map(|g| omega_error(mean_accuracy, g)),
    })
}

/// Eleven fixed-factor runs per seed; the ground truth is the mean of the
/// per-seed maxima and its own error is zero by definition.
pub fn run_grid(ws: &Workspace, repeats: usize, force: bool) -> Result<StrategyResult> {
    let data = ws.ensure_dataset()?;
    let mut grid_best = Vec::with_capacity(repeats);
    let mut per_run = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let seed = ws.task.run_seed(i);
        let mut best: Option<(f64, f64)> = None;
        for w in grid_values() {
            let rec = ws.run_cached(OmegaMode::Fixed(w), "fixed", seed, &data, force)?;
            let acc = rec.final_target_accuracy();
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((w, acc));
            }
        }
        let (w, acc) = best.expect("grid has eleven values");
        grid_best.push((seed, w, acc));
        per_run.push(acc);
    }
    Ok(StrategyResult {
        strategy: "grid",
        mean_accuracy: mean(&per_run),
        per_run,
        grid_best,
        omega_error: Some(0.0),
    })
}

/// The same grid runs, scored as the mean over all eleven values instead of
/// the maximum.
pub fn run_average(ws: &Workspace, repeats: usize, force: bool) -> Result<StrategyResult> {
    let data = ws.ensure_dataset()?;
    let mut per_run = Vec::new();
    for i in 0..repeats {
        let seed = ws.task.run_seed(i);
        for w in grid_values() {
            let rec = ws.run_cached(OmegaMode::Fixed(w), "fixed", seed, &data, force)?;
            per_run.push(rec.final_target_accuracy());
        }
    }
    let mean_accuracy = mean(&per_run);
    Ok(StrategyResult {
        strategy: "average",
        mean_accuracy,
        per_run,
        grid_best: Vec::new(),
        omega_error: ws
            .grid_ground_truth(repeats)
            .map(|g| omega_error(mean_accuracy, g)),
    })
}

/// `t` runs at factors drawn uniformly from `[0,1]`, reported as their mean
/// accuracy. The draws depend only on the task seed. `truth_repeats` is the
/// seed count of the grid ground truth to compare against.
pub fn run_random(
    ws: &Workspace,
    t: usize,
    truth_repeats: usize,
    force: bool,
) -> Result<StrategyResult> {
    let data = ws.ensure_dataset()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ws.task.seed);
    rng.set_stream(2); // distinct from init and shuffle streams
    let draws: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let mut per_run = Vec::with_capacity(t);
    for (i, &w) in draws.iter().enumerate() {
        let seed = ws.task.run_seed(i);
        let rec = ws.run_cached(OmegaMode::Fixed(w), "random", seed, &data, force)?;
        per_run.push(rec.final_target_accuracy());
    }
    let mean_accuracy = mean(&per_run);
    Ok(StrategyResult {
        strategy: "random",
        mean_accuracy,
        per_run,
        grid_best: Vec::new(),
        omega_error: ws
            .grid_ground_truth(truth_repeats)
            .map(|g| omega_error(mean_accuracy, g)),
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Run a plain single fit (the `train` subcommand), cached like strategy
/// runs.
pub fn run_train(
    ws: &Workspace,
    mode: OmegaMode<f64>,
    force: bool,
    save_model: Option<&Path>,
) -> Result<RunRecord> {
    let data = ws.ensure_dataset()?;
    let seed = ws.task.run_seed(0);
    let rec = ws.run_cached(mode, "fixed", seed, &data, force)?;
    if let Some(path) = save_model {
        // cached metrics do not carry the model; refit deterministically
        let cfg = ws.task.train_config(seed, mode);
        let result = fit(&cfg, &data.0, &data.1)?;
        result.model.save_checkpoint(path)?;
    }
    Ok(rec)
}
