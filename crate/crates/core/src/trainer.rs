//! Minibatch SGD training loop with the inverse-decay learning-rate
//! schedule, per-epoch dynamic-factor updates, and evaluation.
//!
//! Each step trains on a balanced half-source/half-target minibatch: the
//! label loss sees the source half, the domain losses see the whole batch
//! through gradient reversal, and the per-epoch discriminator statistics
//! feed the factor estimate used for the next epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::Instant;

use crate::datagen::{LabeledDomain, TargetDomain};
use crate::losses;
use crate::net::{DaanGraph, DaanModel, DomainLabel, NetConfig, ParamGroup};
use crate::omega::OmegaState;
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape};
use crate::tensor::Tensor;
use crate::util::{format_sig, write_atomic};
use crate::{Error, Result};

/// How the mixing factor is chosen each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaMode<S> {
    /// Re-estimated from discriminator losses after every epoch.
    Dynamic,
    /// Held constant for the whole run.
    Fixed(S),
}

/// All run hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<S> {
    /// Trade-off between the label loss and the domain losses.
    pub lambda: S,
    /// Total minibatch size; each step draws `batch_size / 2` samples from
    /// each domain.
    pub batch_size: usize,
    pub epochs: usize,
    /// Schedule: `eta_k = eta0 / (1 + alpha k)^beta` with `k` the training
    /// progress in `[0,1]`.
    pub eta0: S,
    pub alpha: S,
    pub beta: S,
    pub momentum: S,
    pub omega_mode: OmegaMode<S>,
    pub net: NetConfig,
    /// Seed for minibatch shuffling (model init uses `net.init_seed`).
    pub seed: u64,
    /// The classifier head trains faster than the shared layers.
    pub classifier_lr_multiplier: S,
    /// Detach the pseudo-label weights feeding the local discriminators, so
    /// the domain losses cannot back-drive the classifier through them.
    pub detach_local_weights: bool,
    /// Report the local loss as a mean over classes instead of a sum.
    pub local_class_mean: bool,
    /// Low-mass class masking threshold for the factor estimate.
    pub omega_mass_threshold: S,
    /// Optional smoothing coefficient for the factor estimate.
    pub omega_ema: Option<S>,
}

impl<S: Scalar> TrainConfig<S> {
    pub fn new(net: NetConfig, seed: u64) -> Self {
        TrainConfig {
            lambda: S::one(),
            batch_size: 32,
            epochs: 30,
            eta0: S::from_f64(0.01),
            alpha: S::from_f64(10.0),
            beta: S::from_f64(0.75),
            momentum: S::from_f64(0.9),
            omega_mode: OmegaMode::Dynamic,
            net,
            seed,
            classifier_lr_multiplier: S::from_f64(10.0),
            detach_local_weights: true,
            local_class_mean: false,
            omega_mass_threshold: S::from_f64(crate::omega::DEFAULT_MASS_THRESHOLD),
            omega_ema: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        // NaN fails every comparison below and is rejected with the
        // out-of-range values
        let positive = |v: S| v.is_finite() && v > S::zero();
        let nonneg = |v: S| v.is_finite() && v >= S::zero();
        if !positive(self.eta0) {
            return Err(Error::InvalidArgument(format!(
                "eta0 must be positive, got {}",
                self.eta0
            )));
        }
        if !(nonneg(self.momentum) && self.momentum < S::one()) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if !nonneg(self.lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !nonneg(self.alpha) || !nonneg(self.beta) {
            return Err(Error::InvalidArgument(
                "schedule constants must be nonnegative".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if let OmegaMode::Fixed(v) = self.omega_mode {
            if !(nonneg(v) && v <= S::one()) {
                return Err(Error::InvalidArgument(format!(
                    "fixed omega must lie in [0,1], got {v}"
                )));
            }
        }
        if !positive(self.classifier_lr_multiplier) {
            return Err(Error::InvalidArgument(
                "classifier learning-rate multiplier must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at training progress `k` (completed / total steps).
pub fn lr_at<S: Scalar>(k: S, cfg: &TrainConfig<S>) -> Result<S> {
    let in_range = k >= S::zero() && k <= S::one();
    if !in_range {
        return Err(Error::InvalidArgument(format!(
            "training progress must lie in [0,1], got {k}"
        )));
    }
    Ok(cfg.eta0 / (S::one() + cfg.alpha * k).powf(cfg.beta))
}

/// One CSV row of per-epoch diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow<S> {
    pub epoch: usize,
    pub label_loss: S,
    pub global_loss: S,
    pub local_loss: S,
    /// Factor the epoch trained with.
    pub omega: S,
    /// Learning rate at the epoch's first step.
    pub lr: S,
    pub source_accuracy: S,
    pub target_accuracy: S,
    /// Measured wall time; everything else in the row is a pure function of
    /// (config, data, seed).
    pub wall_seconds: f64,
}

/// SGD-with-momentum state, one velocity buffer per parameter.
#[derive(Debug, Clone)]
pub struct SgdState<S> {
    velocity: Vec<Vec<S>>,
    momentum: S,
}

impl<S: Scalar> SgdState<S> {
    /// Zero-initialized buffers matching the model's parameter list.
    pub fn new(model: &DaanModel<S>, momentum: S) -> Self {
        SgdState {
            velocity: model
                .params()
                .iter()
                .map(|(t, _)| vec![S::zero(); t.numel()])
                .collect(),
            momentum,
        }
    }

    /// `v = momentum v + g; theta -= lr_group v`, with the classifier group
    /// scaled by its multiplier.
    fn step(
        &mut self,
        model: &mut DaanModel<S>,
        grads: &Gradients<S>,
        ids: &[crate::tape::NodeId],
        lr: S,
        classifier_multiplier: S,
    ) {
        for (slot, ((tensor, group), &id)) in model.params_mut().into_iter().zip(ids).enumerate() {
            let rate = match group {
                ParamGroup::Classifier => lr * classifier_multiplier,
                _ => lr,
            };
            let g = grads.wrt(id);
            let v = &mut self.velocity[slot];
            for ((w, &gj), vj) in tensor.values_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vj = self.momentum * *vj + gj;
                *w -= rate * *vj;
            }
        }
    }
}

/// Epoch-mean losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses<S> {
    pub label: S,
    pub global: S,
    pub local: S,
}

/// Reshuffling index stream: hands out sample indices, reshuffling whenever
/// the pool is exhausted so the shorter domain recycles within an epoch.
struct IndexStream {
    order: Vec<usize>,
    pos: usize,
}

impl IndexStream {
    fn new(n: usize) -> Self {
        IndexStream {
            order: (0..n).collect(),
            pos: n, // force a shuffle on first use
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

fn gather_rows<S: Scalar>(x: &Tensor<S>, indices: &[usize]) -> Tensor<S> {
    let cols = x.cols();
    let mut values = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        values.extend_from_slice(x.row_slice(i));
    }
    Tensor::matrix(indices.len(), cols, values).expect("gathered rows are finite")
}

/// One epoch of minibatch SGD with a fixed factor `omega`.
///
/// `k_range` is the `[start, end)` slice of overall training progress this
/// epoch covers. Discriminator statistics are accumulated into
/// `omega_state`; the caller decides whether to re-estimate afterwards.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<S: Scalar>(
    model: &mut DaanModel<S>,
    sgd: &mut SgdState<S>,
    source: &LabeledDomain<S>,
    target_x: &Tensor<S>,
    cfg: &TrainConfig<S>,
    omega: S,
    k_range: (f64, f64),
    rng: &mut ChaCha8Rng,
    omega_state: &mut OmegaState<S>,
) -> Result<EpochLosses<S>> {
    let half = cfg.batch_size / 2;
    let (n_s, n_t) = (source.len(), target_x.rows());
    if n_s == 0 || n_t == 0 {
        return Err(Error::InvalidArgument(
            "both domains must be non-empty".into(),
        ));
    }
    let steps = n_s.max(n_t).div_ceil(half);
    let mut source_stream = IndexStream::new(n_s);
    let mut target_stream = IndexStream::new(n_t);
    let num_classes = cfg.net.num_classes;
    let domains: Vec<DomainLabel> = std::iter::repeat_n(DomainLabel::Source, half)
        .chain(std::iter::repeat_n(DomainLabel::Target, half))
        .collect();

    let mut sums = EpochLosses {
        label: S::zero(),
        global: S::zero(),
        local: S::zero(),
    };

    for step in 0..steps {
        let k = k_range.0 + (k_range.1 - k_range.0) * step as f64 / steps as f64;
        let lr = lr_at(S::from_f64(k), cfg)?;

        let src_idx: Vec<usize> = (0..half).map(|_| source_stream.next(rng)).collect();
        let tgt_idx: Vec<usize> = (0..half).map(|_| target_stream.next(rng)).collect();
        let x_src = gather_rows(source.features(), &src_idx);
        let labels: Vec<usize> = src_idx.iter().map(|&i| source.labels()[i]).collect();
        let x_tgt = gather_rows(target_x, &tgt_idx);
        let x_cat = Tensor::vstack(&x_src, &x_tgt)?;

        let mut tape = Tape::new();
        let (grads, ids, bundle, masses) = {
            let mut graph = DaanGraph::new(model, &mut tape);
            let nodes = losses::build_objective(
                &mut graph,
                &x_cat,
                &labels,
                &domains,
                omega,
                cfg.lambda,
                S::one(),
                true,
                cfg.detach_local_weights,
                cfg.local_class_mean,
            )?;
            let grads = graph.tape.backward(nodes.objective)?;

            let yv = graph.tape.value(nodes.class_probs);
            let masses: Vec<S> = (0..num_classes)
                .map(|c| (0..yv.rows()).fold(S::zero(), |acc, i| acc + yv.get(i, c)))
                .collect();
            let bundle = losses::LossBundle::from_nodes(
                graph.tape,
                nodes.label,
                nodes.global,
                &nodes.local,
                nodes.objective,
            );
            (grads, graph.params().ids().to_vec(), bundle, masses)
        };

        sgd.step(model, &grads, &ids, lr, cfg.classifier_lr_multiplier);
        omega_state.accumulate(bundle.global, &bundle.per_class_local, &masses)?;

        sums.label += bundle.label;
        sums.global += bundle.global;
        sums.local += bundle.local;
    }

    let n = S::from_usize(steps);
    Ok(EpochLosses {
        label: sums.label / n,
        global: sums.global / n,
        local: sums.local / n,
    })
}

/// Fraction of samples whose arg-max prediction matches the label. Ties
/// resolve to the lowest class index.
pub fn evaluate<S: Scalar>(model: &DaanModel<S>, x: &Tensor<S>, y: &[usize]) -> Result<S> {
    if x.rows() != y.len() || y.is_empty() {
        return Err(Error::Shape(format!(
            "{} samples but {} labels",
            x.rows(),
            y.len()
        )));
    }
    let mut tape = Tape::new();
    let mut graph = DaanGraph::new(model, &mut tape);
    let f = graph.extract_features(x)?;
    let probs = graph.classify(f)?;
    let pv = graph.tape.value(probs);
    let mut correct = 0usize;
    for (i, &label) in y.iter().enumerate() {
        let row = pv.row_slice(i);
        let mut best = 0usize;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(S::from_usize(correct) / S::from_usize(y.len()))
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct FitResult<S> {
    pub metrics: Vec<MetricsRow<S>>,
    pub model: DaanModel<S>,
    /// `(epoch, omega)` trace including the initialization at 1.
    pub omega_history: Vec<(usize, S)>,
}

/// Train for `cfg.epochs` epochs and evaluate after each.
///
/// The factor is 1 in the first epoch; in dynamic mode it is re-estimated
/// after every epoch and applied to the next. Target labels feed only the
/// accuracy column.
pub fn fit<S: Scalar>(
    cfg: &TrainConfig<S>,
    source: &LabeledDomain<S>,
    target: &TargetDomain<S>,
) -> Result<FitResult<S>> {
    cfg.validate()?;
    if source.features().cols() != cfg.net.input_dim {
        return Err(Error::Shape(format!(
            "source has {} feature columns, network expects {}",
            source.features().cols(),
            cfg.net.input_dim
        )));
    }
    if target.features().cols() != cfg.net.input_dim {
        return Err(Error::Shape(format!(
            "target has {} feature columns, network expects {}",
            target.features().cols(),
            cfg.net.input_dim
        )));
    }
    if source.num_classes() > cfg.net.num_classes {
        return Err(Error::InvalidArgument(format!(
            "source has {} classes, network expects at most {}",
            source.num_classes(),
            cfg.net.num_classes
        )));
    }

    let mut model = DaanModel::init(&cfg.net)?;
    let mut sgd = SgdState::new(&model, cfg.momentum);
    let mut omega_state =
        OmegaState::with_options(cfg.net.num_classes, cfg.omega_mass_threshold, cfg.omega_ema);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1); // distinct from the init stream

    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let omega = match cfg.omega_mode {
            OmegaMode::Dynamic => omega_state.current(),
            OmegaMode::Fixed(v) => v,
        };
        let k_range = (
            epoch as f64 / cfg.epochs as f64,
            (epoch + 1) as f64 / cfg.epochs as f64,
        );
        let losses = train_epoch(
            &mut model,
            &mut sgd,
            source,
            target.features(),
            cfg,
            omega,
            k_range,
            &mut rng,
            &mut omega_state,
        )?;
        match cfg.omega_mode {
            OmegaMode::Dynamic => {
                omega_state.epoch_update()?;
            }
            OmegaMode::Fixed(_) => omega_state.discard_epoch(),
        }
        let source_accuracy = evaluate(&model, source.features(), source.labels())?;
        let target_accuracy = evaluate(&model, target.features(), target.eval_labels())?;
        metrics.push(MetricsRow {
            epoch,
            label_loss: losses.label,
            global_loss: losses.global,
            local_loss: losses.local,
            omega,
            lr: lr_at(S::from_f64(k_range.0), cfg)?,
            source_accuracy,
            target_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(FitResult {
        metrics,
        model,
        omega_history: omega_state.history().to_vec(),
    })
}

/// Metrics CSV header.
pub const METRICS_HEADER: &str = "epoch,loss_y,loss_g,loss_l,omega,lr,src_acc,tgt_acc,seconds";

/// Write per-epoch metrics with 9-significant-digit decimals.
pub fn write_metrics_csv<S: Scalar>(path: &Path, rows: &[MetricsRow<S>]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.epoch.to_string(),
            format_sig(r.label_loss.to_f64(), 9),
            format_sig(r.global_loss.to_f64(), 9),
            format_sig(r.local_loss.to_f64(), 9),
            format_sig(r.omega.to_f64(), 9),
            format_sig(r.lr.to_f64(), 9),
            format_sig(r.source_accuracy.to_f64(), 9),
            format_sig(r.target_accuracy.to_f64(), 9),
            format_sig(r.wall_seconds, 9),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_atomic(path, &out)?;
    Ok(())
}

/// Read a metrics file written by [`write_metrics_csv`].
pub fn read_metrics_csv<S: Scalar>(path: &Path) -> Result<Vec<MetricsRow<S>>> {
    let text = std::fs::read_to_string(path)?;
    let pstr = path.display().to_string();
    let fail = |line: u64, msg: String| Error::Parse {
        path: pstr.clone(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        other => {
            return Err(fail(
                1,
                format!("bad metrics header: {:?}", other.map(|(_, h)| h)),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i as u64 + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(fail(
                lineno,
                format!("expected 9 fields, got {}", fields.len()),
            ));
        }
        let num = |j: usize| -> Result<S> {
            fields[j]
                .parse()
                .map_err(|e| fail(lineno, format!("bad value {:?}: {e}", fields[j])))
        };
        rows.push(MetricsRow {
            epoch: fields[0]
                .parse()
                .map_err(|e| fail(lineno, format!("bad epoch: {e}")))?,
            label_loss: num(1)?,
            global_loss: num(2)?,
            local_loss: num(3)?,
            omega: num(4)?,
            lr: num(5)?,
            source_accuracy: num(6)?,
            target_accuracy: num(7)?,
            wall_seconds: fields[8]
                .parse()
                .map_err(|e| fail(lineno, format!("bad seconds: {e}")))?,
        });
    }
    Ok(rows)
}
