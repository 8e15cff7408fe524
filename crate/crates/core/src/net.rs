//! The adaptation network: feature extractor `G_f`, label classifier `G_y`,
//! global domain discriminator `G_d`, and one local discriminator `G_d^c`
//! per class, all fed through gradient reversal on the adversarial paths.
//!
//! A [`DaanModel`] owns the parameter tensors; a [`DaanGraph`] registers
//! them on a fresh tape and records one minibatch's forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::util::write_atomic;
use crate::{Error, Result};

/// Checkpoint format tag.
const CHECKPOINT_TAG: &str = "daan-model v1";

/// Which domain a sample came from. Source is 0, target is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainLabel {
    Source,
    Target,
}

impl DomainLabel {
    /// Class index in the discriminators' 2-way output.
    pub fn index(self) -> usize {
        match self {
            DomainLabel::Source => 0,
            DomainLabel::Target => 1,
        }
    }
}

/// Network dimensions and the initialization seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub num_classes: usize,
    pub discriminator_hidden: usize,
    pub init_seed: u64,
}

impl NetConfig {
    pub fn new(input_dim: usize, num_classes: usize, init_seed: u64) -> Self {
        NetConfig {
            input_dim,
            feature_dim: 32,
            hidden_width: 64,
            num_classes,
            discriminator_hidden: 64,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.feature_dim == 0
            || self.hidden_width == 0
            || self.discriminator_hidden == 0
        {
            return Err(Error::InvalidArgument(
                "network dimensions must be at least 1".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// One affine layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Parameter group, used for per-group learning-rate multipliers and for the
/// degenerate-mode isolation checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Extractor,
    Classifier,
    GlobalDiscriminator,
    LocalDiscriminator(usize),
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DaanModel<S> {
    pub config: NetConfig,
    /// Two hidden affine+ReLU layers, then affine to the feature dimension.
    pub extractor: Vec<AffineParams<S>>,
    /// Affine feature_dim -> C with a softmax head.
    pub classifier: AffineParams<S>,
    /// Affine feature_dim -> hidden, ReLU, affine -> 2, softmax.
    pub global_disc: Vec<AffineParams<S>>,
    /// One discriminator per class, same shape as the global one.
    pub local_discs: Vec<Vec<AffineParams<S>>>,
}

/// Glorot-uniform weight matrix: uniform on `[-s, s]`,
/// `s = sqrt(6 / (fan_in + fan_out))`. Biases start at zero.
fn glorot_layer<S: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> AffineParams<S> {
    let s = S::from_f64((6.0 / (fan_in + fan_out) as f64).sqrt());
    let values = (0..fan_in * fan_out)
        .map(|_| S::sample_uniform(rng, -s, s))
        .collect();
    AffineParams {
        weight: Tensor::new(vec![fan_in, fan_out], values).expect("init values are finite"),
        bias: Tensor::zeros(vec![1, fan_out]),
    }
}

impl<S: Scalar> DaanModel<S> {
    /// Deterministic initialization from the config. A pure function of
    /// `cfg`: the same config always yields parameter-identical models.
    pub fn init(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let extractor = vec![
            glorot_layer(&mut rng, cfg.input_dim, cfg.hidden_width),
            glorot_layer(&mut rng, cfg.hidden_width, cfg.hidden_width),
            glorot_layer(&mut rng, cfg.hidden_width, cfg.feature_dim),
        ];
        let classifier = glorot_layer(&mut rng, cfg.feature_dim, cfg.num_classes);
        let global_disc = vec![
            glorot_layer(&mut rng, cfg.feature_dim, cfg.discriminator_hidden),
            glorot_layer(&mut rng, cfg.discriminator_hidden, 2),
        ];
        let local_discs = (0..cfg.num_classes)
            .map(|_| {
                vec![
                    glorot_layer(&mut rng, cfg.feature_dim, cfg.discriminator_hidden),
                    glorot_layer(&mut rng, cfg.discriminator_hidden, 2),
                ]
            })
            .collect();
        Ok(DaanModel {
            config: cfg.clone(),
            extractor,
            classifier,
            global_disc,
            local_discs,
        })
    }

    /// Parameters in a fixed order, with their group.
    pub fn params(&self) -> Vec<(&Tensor<S>, ParamGroup)> {
        let mut out = Vec::new();
        for layer in &self.extractor {
            out.push((&layer.weight, ParamGroup::Extractor));
            out.push((&layer.bias, ParamGroup::Extractor));
        }
        out.push((&self.classifier.weight, ParamGroup::Classifier));
        out.push((&self.classifier.bias, ParamGroup::Classifier));
        for layer in &self.global_disc {
            out.push((&layer.weight, ParamGroup::GlobalDiscriminator));
            out.push((&layer.bias, ParamGroup::GlobalDiscriminator));
        }
        for (c, disc) in self.local_discs.iter().enumerate() {
            for layer in disc {
                out.push((&layer.weight, ParamGroup::LocalDiscriminator(c)));
                out.push((&layer.bias, ParamGroup::LocalDiscriminator(c)));
            }
        }
        out
    }

    /// Mutable view in the same order as [`DaanModel::params`].
    pub fn params_mut(&mut self) -> Vec<(&mut Tensor<S>, ParamGroup)> {
        let mut out = Vec::new();
        for layer in &mut self.extractor {
            out.push((&mut layer.weight, ParamGroup::Extractor));
            out.push((&mut layer.bias, ParamGroup::Extractor));
        }
        out.push((&mut self.classifier.weight, ParamGroup::Classifier));
        out.push((&mut self.classifier.bias, ParamGroup::Classifier));
        for layer in &mut self.global_disc {
            out.push((&mut layer.weight, ParamGroup::GlobalDiscriminator));
            out.push((&mut layer.bias, ParamGroup::GlobalDiscriminator));
        }
        for (c, disc) in self.local_discs.iter_mut().enumerate() {
            for layer in disc.iter_mut() {
                out.push((&mut layer.weight, ParamGroup::LocalDiscriminator(c)));
                out.push((&mut layer.bias, ParamGroup::LocalDiscriminator(c)));
            }
        }
        out
    }

    /// Serialize all parameters plus the config. Values are stored as hex
    /// bit patterns, so the round trip is bit-exact.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let cfg = &self.config;
        let mut out = String::new();
        out.push_str(CHECKPOINT_TAG);
        out.push('\n');
        out.push_str(&format!("scalar {}\n", S::TAG));
        out.push_str(&format!("input_dim {}\n", cfg.input_dim));
        out.push_str(&format!("feature_dim {}\n", cfg.feature_dim));
        out.push_str(&format!("hidden_width {}\n", cfg.hidden_width));
        out.push_str(&format!("num_classes {}\n", cfg.num_classes));
        out.push_str(&format!(
            "discriminator_hidden {}\n",
            cfg.discriminator_hidden
        ));
        out.push_str(&format!("init_seed {}\n", cfg.init_seed));
        for (name, tensor) in self.named_tensors() {
            let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("tensor {name} {}\n", dims.join(" ")));
            let mut line = String::new();
            for (i, v) in tensor.values().iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_hex_bits());
            }
            out.push_str(&line);
            out.push('\n');
        }
        write_atomic(path, &out)?;
        Ok(())
    }

    /// Load a checkpoint written by [`DaanModel::save_checkpoint`].
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let pstr = path.display().to_string();
        let fail = |line: u64, msg: String| Error::Parse {
            path: pstr.clone(),
            line,
            msg,
        };
        let lines: Vec<&str> = text.lines().collect();
        let mut cursor = 0usize;
        let next = |cursor: &mut usize, expect: &str| -> Result<(u64, &str)> {
            match lines.get(*cursor) {
                Some(&l) => {
                    *cursor += 1;
                    Ok((*cursor as u64, l))
                }
                None => Err(Error::Parse {
                    path: pstr.clone(),
                    line: lines.len() as u64,
                    msg: format!("unexpected end of file, wanted {expect}"),
                }),
            }
        };

        let (ln, tag) = next(&mut cursor, "format tag")?;
        if tag != CHECKPOINT_TAG {
            return Err(fail(ln, format!("unknown format tag {tag:?}")));
        }
        let (ln, scalar_line) = next(&mut cursor, "scalar tag")?;
        if scalar_line != format!("scalar {}", S::TAG) {
            return Err(fail(
                ln,
                format!(
                    "scalar type mismatch: file has {scalar_line:?}, wanted {}",
                    S::TAG
                ),
            ));
        }
        let field = |cursor: &mut usize, name: &str| -> Result<u64> {
            let (ln, l) = next(cursor, name)?;
            let rest = l
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| fail(ln, format!("expected `{name} <value>`, got {l:?}")))?;
            rest.trim()
                .parse::<u64>()
                .map_err(|e| fail(ln, format!("bad {name}: {e}")))
        };
        let cfg = NetConfig {
            input_dim: field(&mut cursor, "input_dim")? as usize,
            feature_dim: field(&mut cursor, "feature_dim")? as usize,
            hidden_width: field(&mut cursor, "hidden_width")? as usize,
            num_classes: field(&mut cursor, "num_classes")? as usize,
            discriminator_hidden: field(&mut cursor, "discriminator_hidden")? as usize,
            init_seed: field(&mut cursor, "init_seed")?,
        };
        let mut model = DaanModel::init(&cfg)?;
        for (name, tensor) in model.named_tensors_mut() {
            let (ln, header) = next(&mut cursor, "tensor header")?;
            let mut parts = header.split_whitespace();
            if parts.next() != Some("tensor") || parts.next() != Some(name.as_str()) {
                return Err(fail(ln, format!("expected tensor {name}, got {header:?}")));
            }
            let dims: Vec<usize> = parts
                .map(|p| p.parse().map_err(|e| fail(ln, format!("bad dim: {e}"))))
                .collect::<Result<_>>()?;
            if dims != tensor.shape() {
                return Err(fail(
                    ln,
                    format!(
                        "tensor {name}: shape {dims:?} does not match config {:?}",
                        tensor.shape()
                    ),
                ));
            }
            let (ln, data) = next(&mut cursor, "tensor values")?;
            let words: Vec<&str> = data.split_whitespace().collect();
            if words.len() != tensor.numel() {
                return Err(fail(
                    ln,
                    format!(
                        "tensor {name}: expected {} values, got {}",
                        tensor.numel(),
                        words.len()
                    ),
                ));
            }
            for (slot, word) in tensor.values_mut().iter_mut().zip(words) {
                *slot = S::from_hex_bits(word)
                    .ok_or_else(|| fail(ln, format!("bad value {word:?} in tensor {name}")))?;
            }
        }
        if cursor < lines.len() {
            return Err(fail(
                cursor as u64 + 1,
                format!("trailing content {:?}", lines[cursor]),
            ));
        }
        Ok(model)
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.extractor.len() {
            names.push(format!("extractor.{i}.weight"));
            names.push(format!("extractor.{i}.bias"));
        }
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        for i in 0..self.global_disc.len() {
            names.push(format!("global.{i}.weight"));
            names.push(format!("global.{i}.bias"));
        }
        for (c, disc) in self.local_discs.iter().enumerate() {
            for i in 0..disc.len() {
                names.push(format!("local.{c}.{i}.weight"));
                names.push(format!("local.{c}.{i}.bias"));
            }
        }
        names
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        self.tensor_names()
            .into_iter()
            .zip(self.params().into_iter().map(|(t, _)| t))
            .collect()
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let names = self.tensor_names();
        names
            .into_iter()
            .zip(self.params_mut().into_iter().map(|(t, _)| t))
            .collect()
    }
}

/// Tape ids of the registered parameters, in [`DaanModel::params`] order.
#[derive(Debug, Clone)]
pub struct ModelNodes {
    ids: Vec<NodeId>,
    groups: Vec<ParamGroup>,
    extractor: Vec<(NodeId, NodeId)>,
    classifier: (NodeId, NodeId),
    global: Vec<(NodeId, NodeId)>,
    locals: Vec<Vec<(NodeId, NodeId)>>,
}

impl ModelNodes {
    /// Parameter node ids in [`DaanModel::params`] order.
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    /// Group the flat id list into the architecture implied by `cfg`. The
    /// ids must follow [`DaanModel::params`] order.
    fn from_ids(cfg: &NetConfig, ids: &[NodeId]) -> Result<Self> {
        let pairs = 3 + 1 + 2 + 2 * cfg.num_classes;
        if ids.len() != 2 * pairs {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter nodes, got {}",
                2 * pairs,
                ids.len()
            )));
        }
        let mut groups = Vec::with_capacity(ids.len());
        for _ in 0..6 {
            groups.push(ParamGroup::Extractor);
        }
        groups.push(ParamGroup::Classifier);
        groups.push(ParamGroup::Classifier);
        for _ in 0..4 {
            groups.push(ParamGroup::GlobalDiscriminator);
        }
        for c in 0..cfg.num_classes {
            for _ in 0..4 {
                groups.push(ParamGroup::LocalDiscriminator(c));
            }
        }
        let mut cursor = ids.iter().copied();
        let mut pair = || {
            let w = cursor.next().expect("length checked");
            let b = cursor.next().expect("length checked");
            (w, b)
        };
        let extractor = (0..3).map(|_| pair()).collect();
        let classifier = pair();
        let global = (0..2).map(|_| pair()).collect();
        let locals = (0..cfg.num_classes)
            .map(|_| (0..2).map(|_| pair()).collect())
            .collect();
        Ok(ModelNodes {
            ids: ids.to_vec(),
            groups,
            extractor,
            classifier,
            global,
            locals,
        })
    }
}

/// One minibatch's forward graph.
pub struct DaanGraph<'t, S> {
    config: NetConfig,
    pub tape: &'t mut Tape<S>,
    nodes: ModelNodes,
}

impl<'t, S: Scalar> DaanGraph<'t, S> {
    /// Register every model parameter as a leaf on the tape.
    pub fn new(model: &DaanModel<S>, tape: &'t mut Tape<S>) -> Self {
        let params = model.params();
        let ids: Vec<NodeId> = params
            .iter()
            .map(|(tensor, _)| tape.leaf((*tensor).clone()))
            .collect();
        let nodes =
            ModelNodes::from_ids(&model.config, &ids).expect("model params match its config");
        DaanGraph {
            config: model.config.clone(),
            tape,
            nodes,
        }
    }

    /// Build over parameter leaves already on the tape (in
    /// [`DaanModel::params`] order); used by the gradient checker, which
    /// owns and perturbs the leaf values.
    pub fn over_leaves(cfg: &NetConfig, tape: &'t mut Tape<S>, ids: &[NodeId]) -> Result<Self> {
        Ok(DaanGraph {
            config: cfg.clone(),
            tape,
            nodes: ModelNodes::from_ids(cfg, ids)?,
        })
    }

    pub fn params(&self) -> &ModelNodes {
        &self.nodes
    }

    fn mlp(
        &mut self,
        mut h: NodeId,
        layers: &[(NodeId, NodeId)],
        relu_last: bool,
    ) -> Result<NodeId> {
        let n = layers.len();
        for (i, &(w, b)) in layers.iter().enumerate() {
            h = self.tape.affine(h, w, b)?;
            if relu_last || i + 1 < n {
                h = self.tape.relu(h);
            }
        }
        Ok(h)
    }

    /// `f = G_f(x)`: two hidden ReLU layers, then affine to feature_dim.
    pub fn extract_features(&mut self, x: &Tensor<S>) -> Result<NodeId> {
        if x.cols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.config.input_dim
            )));
        }
        let x = self.tape.leaf(x.clone());
        let layers = self.nodes.extractor.clone();
        self.mlp(x, &layers, false)
    }

    /// Class probability rows for each sample.
    pub fn classify(&mut self, f: NodeId) -> Result<NodeId> {
        self.check_feature_cols(f)?;
        let (w, b) = self.nodes.classifier;
        let logits = self.tape.affine(f, w, b)?;
        self.tape.softmax(logits)
    }

    /// Source/target probability rows from the global discriminator, with
    /// the feature input wrapped in gradient reversal.
    pub fn global_domain_probs(&mut self, f: NodeId, coeff: S) -> Result<NodeId> {
        self.check_feature_cols(f)?;
        let rev = self.tape.grad_reverse(f, coeff)?;
        let layers = self.nodes.global.clone();
        let logits = self.mlp(rev, &layers, false)?;
        self.tape.softmax(logits)
    }

    /// Per-class discriminator probability rows.
    ///
    /// Discriminator `c` sees each sample's features scaled by that sample's
    /// class-`c` probability, wrapped in gradient reversal. With
    /// `detach_weights` (the default in training) no gradient flows from the
    /// domain losses back into the classifier through the weighting.
    pub fn local_domain_probs(
        &mut self,
        f: NodeId,
        yhat: NodeId,
        coeff: S,
        detach_weights: bool,
    ) -> Result<Vec<NodeId>> {
        self.check_feature_cols(f)?;
        let c_classes = self.config.num_classes;
        let yv = self.tape.value(yhat);
        if yv.cols() != c_classes {
            return Err(Error::Shape(format!(
                "class probabilities have {} columns, network has {c_classes} classes",
                yv.cols()
            )));
        }
        if yv.rows() != self.tape.value(f).rows() {
            return Err(Error::Shape(format!(
                "{} probability rows for {} feature rows",
                yv.rows(),
                self.tape.value(f).rows()
            )));
        }
        let mut out = Vec::with_capacity(c_classes);
        for c in 0..c_classes {
            let scaled = if detach_weights {
                let weights: Vec<S> = {
                    let yv = self.tape.value(yhat);
                    (0..yv.rows()).map(|i| yv.get(i, c)).collect()
                };
                self.tape.scale_rows_const(f, &weights)?
            } else {
                let col = self.tape.column(yhat, c)?;
                self.tape.scale_rows(f, col)?
            };
            let rev = self.tape.grad_reverse(scaled, coeff)?;
            let layers = self.nodes.locals[c].clone();
            let logits = self.mlp(rev, &layers, false)?;
            out.push(self.tape.softmax(logits)?);
        }
        Ok(out)
    }

    fn check_feature_cols(&self, f: NodeId) -> Result<()> {
        let cols = self.tape.value(f).cols();
        if cols != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "features have {cols} columns, network expects {}",
                self.config.feature_dim
            )));
        }
        Ok(())
    }
}
