//! Experiment driver for the dynamic adversarial adaptation laboratory.
//!
//! The binary exposes dataset generation (`gen`), single training runs
//! (`train`), the four factor strategies (`dynamic`, `grid`, `random`,
//! `avg`), and result aggregation (`report`). This library holds the logic
//! so the integration and acceptance suites can drive it in-process.

pub mod config;
pub mod report;
pub mod strategies;

use config::TaskConfig;
use daan_core::datagen::ShiftKind;

/// The default comparison protocol: two marginal-shift strengths and two
/// conditional-shift strengths, each run over `repeats` seeds.
pub fn default_protocol(base_seed: u64) -> Vec<TaskConfig> {
    let mut tasks = Vec::new();
    for (kind, magnitude) in [
        (ShiftKind::Marginal, 1.5),
        (ShiftKind::Marginal, 2.0),
        (ShiftKind::Conditional, 0.35),
        (ShiftKind::Conditional, 0.4),
    ] {
        let mut task = TaskConfig {
            kind,
            magnitude,
            ..TaskConfig::default()
        };
        task.seed = base_seed.wrapping_add(tasks.len() as u64 * 1000);
        tasks.push(task);
    }
    tasks
}
