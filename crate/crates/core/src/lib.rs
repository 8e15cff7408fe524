//! Adversarial unsupervised domain adaptation with a dynamically weighted
//! mix of marginal and conditional alignment.
//!
//! The crate provides:
//!
//! - [`tape`]: a minimal define-by-run tensor tape with reverse-mode
//!   gradients and a gradient-reversal node;
//! - [`net`]: the adaptation network (feature extractor, label classifier,
//!   one global and `C` per-class domain discriminators);
//! - [`losses`]: the label, global, local, and combined training losses;
//! - [`omega`]: per-epoch proxy A-distances and the dynamic factor that
//!   weighs conditional against marginal alignment;
//! - [`datagen`]: synthetic domain-pair generators for controlled marginal
//!   and conditional shifts, with CSV persistence;
//! - [`trainer`]: the SGD training loop, schedule, evaluation, and metrics.
//!
//! All numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases at the crate root pin the `f64` instantiation used by the
//! training pipeline and the command-line harness.

pub mod datagen;
pub mod gradcheck;
pub mod losses;
pub mod net;
pub mod omega;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod util;

/// Errors surfaced by tensor ops, model plumbing, data generation, and file
/// formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use scalar::Scalar;

/// `f64` tensor used by the training pipeline.
pub type Tensor = tensor::Tensor<f64>;
/// `f64` tape.
pub type Tape = tape::Tape<f64>;
/// `f64` gradient map.
pub type Gradients = tape::Gradients<f64>;
/// `f64` model.
pub type DaanModel = net::DaanModel<f64>;
/// `f64` forward graph.
pub type DaanGraph<'a> = net::DaanGraph<'a, f64>;
/// `f64` dynamic-factor state.
pub type OmegaState = omega::OmegaState<f64>;
/// `f64` labeled domain.
pub type LabeledDomain = datagen::LabeledDomain<f64>;
/// `f64` target domain.
pub type TargetDomain = datagen::TargetDomain<f64>;
/// `f64` cluster description.
pub type ClusterSpec = datagen::ClusterSpec<f64>;
/// `f64` shift scenario.
pub type ShiftScenario = datagen::ShiftScenario<f64>;
/// `f64` training configuration.
pub type TrainConfig = trainer::TrainConfig<f64>;
/// `f64` per-epoch metrics row.
pub type MetricsRow = trainer::MetricsRow<f64>;
/// `f64` loss bundle.
pub type LossBundle = losses::LossBundle<f64>;
