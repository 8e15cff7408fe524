//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use daan_cli::config::{self, Overrides, Resolved};
use daan_cli::report::report;
use daan_cli::strategies::{
    run_average, run_dynamic, run_grid, run_random, run_train, StrategyResult, Workspace,
};

#[derive(Parser)]
#[command(
    name = "daan",
    about = "Adversarial domain adaptation lab: synthetic shift tasks, dynamically weighted alignment, and factor-strategy comparisons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonFlags {
    /// Flat `key = value` config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task seed: drives the dataset draw and the run-seed family.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (one task per directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shift regime: marginal, conditional, or mixed.
    #[arg(long)]
    scenario: Option<String>,
    /// Shift strength.
    #[arg(long)]
    magnitude: Option<f64>,
    /// Conditional strength of a mixed scenario (defaults to --magnitude).
    #[arg(long)]
    magnitude2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Trade-off between label loss and domain losses.
    #[arg(long)]
    lambda: Option<f64>,
    /// Factor mode: `dynamic` or `fixed:<v>`.
    #[arg(long)]
    omega: Option<String>,
    /// Fits per strategy (distinct seeds).
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    n_source: Option<usize>,
    #[arg(long)]
    n_target: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    disc_hidden: Option<usize>,
    /// Recompute runs even if cached metrics exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and persist the task's dataset files.
    Gen(CommonFlags),
    /// One training run; metrics are cached by factor mode and seed.
    Train {
        #[command(flatten)]
        common: CommonFlags,
        /// Write the final model checkpoint here.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Dynamic-factor strategy over `--repeats` seeds.
    Dynamic(CommonFlags),
    /// Grid search over the eleven fixed factors; defines the ground truth.
    Grid(CommonFlags),
    /// Average search: same grid runs, scored by their mean.
    Avg(CommonFlags),
    /// Random guessing: `--t` uniformly drawn factors.
    Random {
        #[command(flatten)]
        common: CommonFlags,
        /// Number of draws.
        #[arg(long)]
        t: Option<usize>,
    },
    /// Aggregate a task directory into summary CSVs.
    Report {
        /// Output directory to summarize.
        #[arg(long, default_value = "daan-out")]
        out: PathBuf,
    },
}

fn overrides_from(flags: &CommonFlags) -> Result<Overrides> {
    let mut file_kv = match &flags.config {
        Some(path) => config::parse_config_file(path)?,
        None => Overrides::default(),
    };
    let mut cli = Overrides::default();
    cli.set_opt("seed", &flags.seed);
    if let Some(out) = &flags.out {
        cli.set("out", out.display().to_string());
    }
    cli.set_opt("scenario", &flags.scenario);
    cli.set_opt("magnitude", &flags.magnitude);
    cli.set_opt("magnitude2", &flags.magnitude2);
    cli.set_opt("epochs", &flags.epochs);
    cli.set_opt("lambda", &flags.lambda);
    cli.set_opt("omega", &flags.omega);
    cli.set_opt("repeats", &flags.repeats);
    cli.set_opt("n-source", &flags.n_source);
    cli.set_opt("n-target", &flags.n_target);
    cli.set_opt("classes", &flags.classes);
    cli.set_opt("dim", &flags.dim);
    cli.set_opt("spread", &flags.spread);
    cli.set_opt("batch-size", &flags.batch_size);
    cli.set_opt("eta0", &flags.eta0);
    cli.set_opt("alpha", &flags.alpha);
    cli.set_opt("beta", &flags.beta);
    cli.set_opt("momentum", &flags.momentum);
    cli.set_opt("feature-dim", &flags.feature_dim);
    cli.set_opt("hidden-width", &flags.hidden_width);
    cli.set_opt("disc-hidden", &flags.disc_hidden);
    file_kv = file_kv.merged_with(&cli);
    Ok(file_kv)
}

fn open(flags: &CommonFlags) -> Result<(Resolved, Workspace)> {
    let resolved = config::resolve(&overrides_from(flags)?)?;
    let ws = Workspace::open(&resolved.out, &resolved.task)?;
    Ok((resolved, ws))
}

fn print_strategy(r: &StrategyResult) {
    let err = r
        .omega_error
        .map(|e| format!("{e:+.3}"))
        .unwrap_or_else(|| "n/a (run `grid` first)".into());
    println!(
        "{}: mean target accuracy {:.4} over {} runs, omega error {err} pp",
        r.strategy,
        r.mean_accuracy,
        r.per_run.len()
    );
    for (seed, w, acc) in &r.grid_best {
        println!("  seed {seed}: best omega {w:.1} (accuracy {acc:.4})");
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen(flags) => {
            let (_, ws) = open(&flags)?;
            let (source, target) = ws.ensure_dataset()?;
            println!(
                "dataset ready in {}: {} source / {} target samples, {} classes, dim {}",
                ws.out.join("data").display(),
                source.len(),
                target.len(),
                ws.task.data.classes,
                ws.task.data.dim,
            );
        }
        Command::Train { common, save_model } => {
            let (resolved, ws) = open(&common)?;
            let rec = run_train(&ws, resolved.omega, common.force, save_model.as_deref())?;
            let last = rec
                .rows
                .last()
                .context("training produced no epochs (epochs = 0)")?;
            println!(
                "{}{}: src_acc {:.4} tgt_acc {:.4} omega {:.3}",
                rec.path.display(),
                if rec.cached { " (cached)" } else { "" },
                last.source_accuracy,
                last.target_accuracy,
                last.omega,
            );
            if let Some(path) = save_model {
                println!("model checkpoint written to {}", path.display());
            }
        }
        Command::Dynamic(flags) => {
            let (resolved, ws) = open(&flags)?;
            print_strategy(&run_dynamic(&ws, resolved.repeats, flags.force)?);
        }
        Command::Grid(flags) => {
            let (resolved, ws) = open(&flags)?;
            print_strategy(&run_grid(&ws, resolved.repeats, flags.force)?);
        }
        Command::Avg(flags) => {
            let (resolved, ws) = open(&flags)?;
            print_strategy(&run_average(&ws, resolved.repeats, flags.force)?);
        }
        Command::Random { common, t } => {
            let mut kv = overrides_from(&common)?;
            kv.set_opt("t", &t);
            let resolved = config::resolve(&kv)?;
            let ws = Workspace::open(&resolved.out, &resolved.task)?;
            print_strategy(&run_random(
                &ws,
                resolved.t,
                resolved.repeats,
                common.force,
            )?);
        }
        Command::Report { out } => {
            let outcome = report(&out)?;
            for m in &outcome.missing {
                eprintln!("missing run file: {m}");
            }
            println!("summary written to {}", outcome.summary_path.display());
            for row in &outcome.rows {
                let err = row
                    .omega_error
                    .map(|e| format!("{e:+.3}"))
                    .unwrap_or_else(|| "n/a".into());
                println!(
                    "  {:<8} mean_acc {:.4} std {:.4} omega_error {err} ({} runs)",
                    row.strategy, row.mean_acc, row.std_acc, row.runs
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
