//! Summaries over a task's completed runs: one strategy table plus
//! plot-ready factor trajectories for every dynamic run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use daan_core::trainer::read_metrics_csv;
use daan_core::util::{format_sig, write_atomic};

use crate::strategies::{grid_values, omega_error, std_dev};

/// A parsed run file name.
#[derive(Debug, Clone, PartialEq)]
enum RunKind {
    Dynamic { seed: u64 },
    Fixed { omega: f64, seed: u64 },
    Random { omega: f64, seed: u64 },
}

fn parse_run_name(name: &str) -> Option<RunKind> {
    let stem = name.strip_suffix(".csv")?;
    if let Some(rest) = stem.strip_prefix("dynamic_seed") {
        return Some(RunKind::Dynamic {
            seed: rest.parse().ok()?,
        });
    }
    let fixed = stem.strip_prefix("fixed_w").map(|r| (r, false));
    let random = stem.strip_prefix("random_w").map(|r| (r, true));
    let (rest, is_random) = fixed.or(random)?;
    let (w, seed) = rest.split_once("_seed")?;
    let omega: f64 = w.parse().ok()?;
    let seed: u64 = seed.parse().ok()?;
    Some(if is_random {
        RunKind::Random { omega, seed }
    } else {
        RunKind::Fixed { omega, seed }
    })
}

/// One line of the strategy summary.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub strategy: String,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub omega_error: Option<f64>,
    pub runs: usize,
}

/// Everything `report` found and wrote.
#[derive(Debug)]
pub struct ReportOutcome {
    pub rows: Vec<SummaryRow>,
    /// Human-readable descriptions of expected-but-missing run files.
    pub missing: Vec<String>,
    pub summary_path: PathBuf,
    pub omega_traces: Vec<PathBuf>,
}

/// Aggregate the runs directory into `summary/strategies.csv`, a per-seed
/// grid detail file, and one factor-trajectory CSV per dynamic run.
///
/// Incomplete grids are reported as missing and skipped; the summary is
/// still written for whatever is present. Re-running over the same
/// directory reproduces the same files.
pub fn report(out: &Path) -> Result<ReportOutcome> {
    let runs_dir = out.join("runs");
    let mut dynamic_runs: Vec<(u64, PathBuf)> = Vec::new();
    let mut fixed_runs: Vec<(f64, u64, PathBuf)> = Vec::new();
    let mut random_runs: Vec<(f64, u64, PathBuf)> = Vec::new();

    let entries = fs::read_dir(&runs_dir)
        .with_context(|| format!("no runs directory in {}", out.display()))?;
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        match parse_run_name(&name) {
            Some(RunKind::Dynamic { seed }) => dynamic_runs.push((seed, entry.path())),
            Some(RunKind::Fixed { omega, seed }) => fixed_runs.push((omega, seed, entry.path())),
            Some(RunKind::Random { omega, seed }) => random_runs.push((omega, seed, entry.path())),
            None => {}
        }
    }
    if dynamic_runs.is_empty() && fixed_runs.is_empty() && random_runs.is_empty() {
        bail!(
            "no run files found in {} (expected dynamic_*, fixed_*, or random_* metrics)",
            runs_dir.display()
        );
    }
    dynamic_runs.sort_by_key(|(s, _)| *s);
    fixed_runs.sort_by_key(|r| (r.1, ordered(r.0)));
    random_runs.sort_by_key(|r| (r.1, ordered(r.0)));

    let summary_dir = out.join("summary");
    fs::create_dir_all(&summary_dir)?;

    let mut missing = Vec::new();
    let mut rows = Vec::new();

    let final_acc = |path: &Path| -> Result<f64> {
        let rows = read_metrics_csv::<f64>(path)
            .with_context(|| format!("unreadable metrics file {}", path.display()))?;
        rows.last()
            .map(|r| r.target_accuracy)
            .ok_or_else(|| anyhow::anyhow!("{} has no rows", path.display()))
    };

    // dynamic strategy + factor trajectories
    let mut omega_traces = Vec::new();
    let mut dynamic_accs = Vec::new();
    for (seed, path) in &dynamic_runs {
        dynamic_accs.push(final_acc(path)?);
        let metrics = read_metrics_csv::<f64>(path)?;
        let mut text = String::from("epoch,omega\n");
        for row in &metrics {
            text.push_str(&format!("{},{}\n", row.epoch, format_sig(row.omega, 9)));
        }
        let trace = summary_dir.join(format!("omega_trace_seed{seed}.csv"));
        write_atomic(&trace, &text)?;
        omega_traces.push(trace);
    }

    // grid: group fixed runs by seed, demand all eleven values per seed
    let mut grid_best: Vec<(u64, f64, f64)> = Vec::new();
    let mut all_fixed_accs: Vec<f64> = Vec::new();
    let mut seeds: Vec<u64> = fixed_runs.iter().map(|(_, s, _)| *s).collect();
    seeds.dedup();
    for &seed in &seeds {
        let of_seed: Vec<&(f64, u64, PathBuf)> =
            fixed_runs.iter().filter(|(_, s, _)| *s == seed).collect();
        let mut complete = true;
        for want in grid_values() {
            if !of_seed.iter().any(|(w, _, _)| (w - want).abs() < 1e-9) {
                missing.push(format!("fixed_w{want:.6}_seed{seed}.csv"));
                complete = false;
            }
        }
        if !complete {
            continue;
        }
        let mut best: Option<(f64, f64)> = None;
        for (w, _, path) in of_seed {
            let acc = final_acc(path)?;
            all_fixed_accs.push(acc);
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((*w, acc));
            }
        }
        let (w, acc) = best.expect("complete grid");
        grid_best.push((seed, w, acc));
    }
    let ground_truth = if grid_best.is_empty() {
        None
    } else {
        Some(grid_best.iter().map(|(_, _, a)| a).sum::<f64>() / grid_best.len() as f64)
    };

    if !dynamic_accs.is_empty() {
        let mean = dynamic_accs.iter().sum::<f64>() / dynamic_accs.len() as f64;
        rows.push(SummaryRow {
            strategy: "dynamic".into(),
            mean_acc: mean,
            std_acc: std_dev(&dynamic_accs),
            omega_error: ground_truth.map(|g| omega_error(mean, g)),
            runs: dynamic_accs.len(),
        });
    }
    if let Some(truth) = ground_truth {
        let bests: Vec<f64> = grid_best.iter().map(|(_, _, a)| *a).collect();
        rows.push(SummaryRow {
            strategy: "grid".into(),
            mean_acc: truth,
            std_acc: std_dev(&bests),
            omega_error: Some(0.0),
            runs: bests.len() * grid_values().len(),
        });
        let avg = all_fixed_accs.iter().sum::<f64>() / all_fixed_accs.len() as f64;
        rows.push(SummaryRow {
            strategy: "average".into(),
            mean_acc: avg,
            std_acc: std_dev(&all_fixed_accs),
            omega_error: Some(omega_error(avg, truth)),
            runs: all_fixed_accs.len(),
        });
    }
    if !random_runs.is_empty() {
        let mut accs = Vec::new();
        for (_, _, path) in &random_runs {
            accs.push(final_acc(path)?);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        rows.push(SummaryRow {
            strategy: "random".into(),
            mean_acc: mean,
            std_acc: std_dev(&accs),
            omega_error: ground_truth.map(|g| omega_error(mean, g)),
            runs: accs.len(),
        });
    }

    // strategies.csv
    let mut text = String::from("strategy,mean_acc,std_acc,omega_error\n");
    for row in &rows {
        let err = row
            .omega_error
            .map(|e| format_sig(e, 9))
            .unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.strategy,
            format_sig(row.mean_acc, 9),
            format_sig(row.std_acc, 9),
            err
        ));
    }
    let summary_path = summary_dir.join("strategies.csv");
    write_atomic(&summary_path, &text)?;

    // per-seed grid detail
    if !grid_best.is_empty() {
        let mut text = String::from("seed,best_omega,best_acc\n");
        for (seed, w, acc) in &grid_best {
            text.push_str(&format!(
                "{seed},{},{}\n",
                format_sig(*w, 9),
                format_sig(*acc, 9)
            ));
        }
        write_atomic(&summary_dir.join("grid_best.csv"), &text)?;
    }

    Ok(ReportOutcome {
        rows,
        missing,
        summary_path,
        omega_traces,
    })
}

fn ordered(w: f64) -> u64 {
    (w * 1e9) as u64
}
