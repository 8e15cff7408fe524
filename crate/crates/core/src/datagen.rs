//! Synthetic domain pairs with controlled shift type.
//!
//! The source is a ring of Gaussian clusters: class means sit on a circle of
//! radius `4 * spread` in the first two dimensions, remaining dimensions are
//! pure noise. Targets are fresh draws from the same cluster model pushed
//! through one of two shift regimes:
//!
//! - marginal: a rigid motion of the whole cloud (rotation plus translation),
//!   so the input distribution moves while class structure is preserved;
//! - conditional: each class rotated about the global centroid by a
//!   class-dependent angle, so per-class distributions move while the global
//!   moments stay approximately fixed.
//!
//! All generators are pure functions of their parameters and seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::write_atomic;
use crate::{Error, Result};

/// Ring-of-clusters generative model. Class means lie on a circle of radius
/// `4 * spread`; within-class scatter is isotropic Gaussian with standard
/// deviation `spread`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec<S> {
    pub classes: usize,
    pub dim: usize,
    pub spread: S,
}

impl<S: Scalar> ClusterSpec<S> {
    pub fn new(classes: usize, dim: usize, spread: S) -> Self {
        ClusterSpec {
            classes,
            dim,
            spread,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "need dimension at least 2, got {}",
                self.dim
            )));
        }
        if n < self.classes {
            return Err(Error::InvalidArgument(format!(
                "need at least one sample per class: n={n} < {} classes",
                self.classes
            )));
        }
        if !self.spread.is_finite() || self.spread < S::zero() {
            return Err(Error::InvalidArgument(format!(
                "spread must be finite and nonnegative, got {}",
                self.spread
            )));
        }
        Ok(())
    }

    /// Mean of class `c`.
    fn class_mean(&self, c: usize) -> Vec<S> {
        let radius = S::from_f64(4.0) * self.spread;
        let angle = 2.0 * PI * c as f64 / self.classes as f64;
        let mut mean = vec![S::zero(); self.dim];
        mean[0] = radius * S::from_f64(angle.cos());
        mean[1] = radius * S::from_f64(angle.sin());
        mean
    }

    /// Per-class sample counts: equal up to remainder, earlier classes get
    /// the extra samples.
    fn class_counts(&self, n: usize) -> Vec<usize> {
        let base = n / self.classes;
        let extra = n % self.classes;
        (0..self.classes)
            .map(|c| base + usize::from(c < extra))
            .collect()
    }
}

/// Shift regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    Marginal,
    Conditional,
    Mixed,
}

impl ShiftKind {
    pub fn name(self) -> &'static str {
        match self {
            ShiftKind::Marginal => "marginal",
            ShiftKind::Conditional => "conditional",
            ShiftKind::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(ShiftKind::Marginal),
            "conditional" => Ok(ShiftKind::Conditional),
            "mixed" => Ok(ShiftKind::Mixed),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario {other:?} (expected marginal, conditional, or mixed)"
            ))),
        }
    }
}

/// A shift scenario: regime, strength, and the seed for the target draw.
/// `magnitude2` is the conditional strength of a mixed scenario (defaults to
/// `magnitude`).
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftScenario<S> {
    pub kind: ShiftKind,
    pub magnitude: S,
    pub magnitude2: Option<S>,
    pub seed: u64,
}

/// Labeled sample matrix: the source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDomain<S> {
    x: Tensor<S>,
    y: Vec<usize>,
}

impl<S: Scalar> LabeledDomain<S> {
    /// Build from a sample matrix and class labels, enforcing that every
    /// class up to the maximum label occurs at least once.
    pub fn new(x: Tensor<S>, y: Vec<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Shape(format!(
                "{} sample rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        let classes = y.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; classes];
        for &label in &y {
            seen[label] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "every class must have at least one sample".into(),
            ));
        }
        Ok(LabeledDomain { x, y })
    }

    pub fn features(&self) -> &Tensor<S> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.y.iter().max().map_or(0, |&m| m + 1)
    }
}

/// Unlabeled sample matrix plus held-out labels.
///
/// The held-out labels are reachable only through [`TargetDomain::eval_labels`];
/// the training loop receives the feature matrix alone.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDomain<S> {
    x: Tensor<S>,
    eval_labels: Vec<usize>,
}

impl<S: Scalar> TargetDomain<S> {
    pub fn new(x: Tensor<S>, eval_labels: Vec<usize>) -> Result<Self> {
        if x.rows() != eval_labels.len() {
            return Err(Error::Shape(format!(
                "{} sample rows but {} evaluation labels",
                x.rows(),
                eval_labels.len()
            )));
        }
        Ok(TargetDomain { x, eval_labels })
    }

    pub fn features(&self) -> &Tensor<S> {
        &self.x
    }

    /// Held-out labels, for evaluation only.
    pub fn eval_labels(&self) -> &[usize] {
        &self.eval_labels
    }

    pub fn len(&self) -> usize {
        self.eval_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eval_labels.is_empty()
    }
}

/// Draw `n` class-grouped samples from the cluster model.
fn sample_clusters<S: Scalar>(
    spec: &ClusterSpec<S>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<S>, Vec<usize>) {
    let counts = spec.class_counts(n);
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, &count) in counts.iter().enumerate() {
        let mean = spec.class_mean(c);
        for _ in 0..count {
            for m in &mean {
                let z = S::sample_standard_normal(rng);
                values.push(*m + spec.spread * z);
            }
            labels.push(c);
        }
    }
    (values, labels)
}

/// Rotate the `(dim0, dim1)` coordinates of a row about the origin.
fn rotate2<S: Scalar>(row: &mut [S], angle: f64) {
    let (sin, cos) = (S::from_f64(angle.sin()), S::from_f64(angle.cos()));
    let (x0, x1) = (row[0], row[1]);
    row[0] = cos * x0 - sin * x1;
    row[1] = sin * x0 + cos * x1;
}

/// Marginal rotation per unit magnitude, in radians.
const MARGINAL_ROTATION: f64 = 15.0 * PI / 180.0;

/// Half-width of the per-class conditional jitter, in radians.
const CONDITIONAL_JITTER: f64 = 3.0 * PI / 180.0;

/// Fresh target draw with both shift regimes applied. A magnitude of zero
/// disables the corresponding regime; the random draws do not depend on the
/// magnitudes, so the same seed yields the same underlying sample.
fn sample_shifted<S: Scalar>(
    spec: &ClusterSpec<S>,
    n: usize,
    marginal_mag: S,
    conditional_mag: S,
    seed: u64,
) -> Result<TargetDomain<S>> {
    spec.validate(n)?;
    let magnitude_ok = |m: S| m.is_finite() && m >= S::zero();
    if !magnitude_ok(marginal_mag) || !magnitude_ok(conditional_mag) {
        return Err(Error::InvalidArgument(
            "shift magnitudes must be finite and nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // transform parameters first, so the point draw is magnitude-independent
    let mut direction: Vec<f64> = (0..spec.dim)
        .map(|_| f64::sample_standard_normal(&mut rng))
        .collect();
    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for d in &mut direction {
            *d /= norm;
        }
    } else {
        direction[0] = 1.0;
    }
    let jitters: Vec<f64> = (0..spec.classes)
        .map(|_| f64::sample_uniform(&mut rng, -CONDITIONAL_JITTER, CONDITIONAL_JITTER))
        .collect();

    let (mut values, labels) = sample_clusters(spec, n, &mut rng);

    // conditional part: rotate each class about the global centroid (the
    // origin) by roughly magnitude * (full class step)
    let cond = conditional_mag.to_f64();
    if cond != 0.0 {
        let step = 2.0 * PI / spec.classes as f64;
        let angles: Vec<f64> = (0..spec.classes)
            .map(|c| cond * (step + jitters[c]))
            .collect();
        for (row, &label) in values.chunks_mut(spec.dim).zip(&labels) {
            rotate2(row, angles[label]);
        }
    }

    // marginal part: rigid motion of the whole cloud
    let marg = marginal_mag.to_f64();
    if marg != 0.0 {
        let angle = marg * MARGINAL_ROTATION;
        let shift: Vec<S> = direction
            .iter()
            .map(|&d| marginal_mag * spec.spread * S::from_f64(d))
            .collect();
        for row in values.chunks_mut(spec.dim) {
            rotate2(row, angle);
            for (v, s) in row.iter_mut().zip(&shift) {
                *v += *s;
            }
        }
    }

    let x = Tensor::matrix(n, spec.dim, values)?;
    TargetDomain::new(x, labels)
}

/// Labeled source draw from the cluster model.
pub fn make_source<S: Scalar>(
    spec: &ClusterSpec<S>,
    n: usize,
    seed: u64,
) -> Result<LabeledDomain<S>> {
    spec.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (values, labels) = sample_clusters(spec, n, &mut rng);
    let x = Tensor::matrix(n, spec.dim, values)?;
    LabeledDomain::new(x, labels)
}

/// Fresh target draw moved rigidly: rotation by `magnitude * 15` degrees in
/// the first two dimensions plus a translation of `magnitude * spread` along
/// a seeded random direction.
pub fn apply_marginal_shift<S: Scalar>(
    spec: &ClusterSpec<S>,
    n: usize,
    magnitude: S,
    seed: u64,
) -> Result<TargetDomain<S>> {
    sample_shifted(spec, n, magnitude, S::zero(), seed)
}

/// Fresh target draw with each class rotated about the global centroid by a
/// class-dependent seeded angle scaled by `magnitude`. At magnitude 1 each
/// class lands near the next class's position, so the global distribution is
/// nearly unchanged while every conditional moves.
pub fn apply_conditional_shift<S: Scalar>(
    spec: &ClusterSpec<S>,
    n: usize,
    magnitude: S,
    seed: u64,
) -> Result<TargetDomain<S>> {
    sample_shifted(spec, n, S::zero(), magnitude, seed)
}

/// Dispatch on the scenario kind. Mixed applies the marginal strength
/// `magnitude` and the conditional strength `magnitude2` (defaulting to
/// `magnitude`).
pub fn apply_scenario<S: Scalar>(
    spec: &ClusterSpec<S>,
    n: usize,
    scenario: &ShiftScenario<S>,
) -> Result<TargetDomain<S>> {
    match scenario.kind {
        ShiftKind::Marginal => {
            sample_shifted(spec, n, scenario.magnitude, S::zero(), scenario.seed)
        }
        ShiftKind::Conditional => {
            sample_shifted(spec, n, S::zero(), scenario.magnitude, scenario.seed)
        }
        ShiftKind::Mixed => sample_shifted(
            spec,
            n,
            scenario.magnitude,
            scenario.magnitude2.unwrap_or(scenario.magnitude),
            scenario.seed,
        ),
    }
}

// --- CSV persistence --------------------------------------------------

/// 17 significant digits: enough for a value-exact f64 round trip.
fn fmt_value<S: Scalar>(v: S) -> String {
    format!("{:.16e}", v)
}

fn feature_header(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("x{j}")).collect()
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn write_rows(path: &Path, header: &[String], rows: Vec<Vec<String>>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, &out)?;
    Ok(())
}

struct CsvTable {
    header: Vec<String>,
    /// (line number, fields)
    rows: Vec<(u64, Vec<String>)>,
}

fn read_rows(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(parse_err(path, 1, "empty file"));
    }
    let mut lines = text.lines().enumerate();
    let header: Vec<String> = lines
        .next()
        .map(|(_, l)| l.split(',').map(|f| f.trim().to_string()).collect())
        .unwrap_or_default();
    let width = header.len();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        let lineno = i as u64 + 1;
        if fields.len() != width {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {width} fields, got {}", fields.len()),
            ));
        }
        rows.push((lineno, fields));
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    Ok(CsvTable { header, rows })
}

fn parse_features<S: Scalar>(path: &Path, table: &CsvTable, dim: usize) -> Result<Vec<S>> {
    let mut values = Vec::with_capacity(table.rows.len() * dim);
    for (lineno, fields) in &table.rows {
        for field in &fields[..dim] {
            let v: S = field
                .parse()
                .map_err(|e| parse_err(path, *lineno, format!("bad value {field:?}: {e}")))?;
            values.push(v);
        }
    }
    Ok(values)
}

fn parse_label(path: &Path, lineno: u64, field: &str) -> Result<usize> {
    field
        .parse()
        .map_err(|e| parse_err(path, lineno, format!("bad label {field:?}: {e}")))
}

/// Write the source domain: columns `x0..x{d-1},label`.
pub fn write_source_csv<S: Scalar>(path: &Path, domain: &LabeledDomain<S>) -> Result<()> {
    let dim = domain.features().cols();
    let mut header = feature_header(dim);
    header.push("label".into());
    let rows = domain
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut row: Vec<String> = domain
                .features()
                .row_slice(i)
                .iter()
                .map(|&v| fmt_value(v))
                .collect();
            row.push(label.to_string());
            row
        })
        .collect();
    write_rows(path, &header, rows)
}

/// Read a source file written by [`write_source_csv`].
pub fn read_source_csv<S: Scalar>(path: &Path) -> Result<LabeledDomain<S>> {
    let table = read_rows(path)?;
    if table.header.last().map(String::as_str) != Some("label") {
        return Err(parse_err(
            path,
            1,
            format!(
                "missing label column, header is {:?}",
                table.header.join(",")
            ),
        ));
    }
    let dim = table.header.len() - 1;
    if table.header[..dim] != feature_header(dim) {
        return Err(parse_err(path, 1, "feature columns must be x0..x{d-1}"));
    }
    let values = parse_features::<S>(path, &table, dim)?;
    let labels = table
        .rows
        .iter()
        .map(|(lineno, fields)| parse_label(path, *lineno, &fields[dim]))
        .collect::<Result<Vec<_>>>()?;
    let x = Tensor::matrix(table.rows.len(), dim, values)?;
    LabeledDomain::new(x, labels)
}

/// Write the target domain as two files: features (`x0..x{d-1}`) and the
/// held-out evaluation labels (`label`).
pub fn write_target_csv<S: Scalar>(
    x_path: &Path,
    eval_path: &Path,
    domain: &TargetDomain<S>,
) -> Result<()> {
    let dim = domain.features().cols();
    let rows = (0..domain.len())
        .map(|i| {
            domain
                .features()
                .row_slice(i)
                .iter()
                .map(|&v| fmt_value(v))
                .collect()
        })
        .collect();
    write_rows(x_path, &feature_header(dim), rows)?;
    let label_rows = domain
        .eval_labels()
        .iter()
        .map(|l| vec![l.to_string()])
        .collect();
    write_rows(eval_path, &["label".into()], label_rows)
}

/// Read a target-domain pair written by [`write_target_csv`].
pub fn read_target_csv<S: Scalar>(x_path: &Path, eval_path: &Path) -> Result<TargetDomain<S>> {
    let table = read_rows(x_path)?;
    let dim = table.header.len();
    if table.header != feature_header(dim) {
        return Err(parse_err(
            x_path,
            1,
            "target feature file must have columns x0..x{d-1} and no label",
        ));
    }
    let values = parse_features::<S>(x_path, &table, dim)?;
    let x = Tensor::matrix(table.rows.len(), dim, values)?;

    let labels_table = read_rows(eval_path)?;
    if labels_table.header != ["label"] {
        return Err(parse_err(
            eval_path,
            1,
            "evaluation file must have a single label column",
        ));
    }
    let labels = labels_table
        .rows
        .iter()
        .map(|(lineno, fields)| parse_label(eval_path, *lineno, &fields[0]))
        .collect::<Result<Vec<_>>>()?;
    TargetDomain::new(x, labels)
}
