//! Shared helpers for the integration tests: random small models and a
//! builder for the complete training objective over external parameter
//! leaves, so the finite-difference oracle can perturb every parameter.

#![allow(dead_code)] // not every test target uses every helper

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use daan_core::losses;
use daan_core::net::{DaanGraph, DaanModel, DomainLabel, NetConfig};
use daan_core::tape::{NodeId, Tape};
use daan_core::tensor::Tensor;
use daan_core::Result;

/// A half-source/half-target batch with labels.
pub struct Batch {
    pub x_cat: Tensor<f64>,
    pub labels: Vec<usize>,
    pub domains: Vec<DomainLabel>,
    pub half: usize,
}

pub fn small_config(seed: u64) -> NetConfig {
    NetConfig {
        input_dim: 3,
        feature_dim: 6,
        hidden_width: 8,
        num_classes: 3,
        discriminator_hidden: 5,
        init_seed: seed,
    }
}

pub fn random_batch(cfg: &NetConfig, half: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * half;
    let values = (0..n * cfg.input_dim)
        .map(|_| rng.gen_range(-2.0..2.0))
        .collect();
    let x_cat = Tensor::matrix(n, cfg.input_dim, values).unwrap();
    let labels = (0..half)
        .map(|_| rng.gen_range(0..cfg.num_classes))
        .collect();
    let domains = std::iter::repeat_n(DomainLabel::Source, half)
        .chain(std::iter::repeat_n(DomainLabel::Target, half))
        .collect();
    Batch {
        x_cat,
        labels,
        domains,
        half,
    }
}

/// Flat parameter tensors of a freshly initialized model.
pub fn model_params(cfg: &NetConfig) -> Vec<Tensor<f64>> {
    DaanModel::<f64>::init(cfg)
        .unwrap()
        .params()
        .into_iter()
        .map(|(t, _)| t.clone())
        .collect()
}

/// Build the full objective over the given parameter leaves.
///
/// `sign_is_plus = false` with `coeff = -1` realizes the written objective
/// `L_y - lambda(...)` with the reversal node acting as identity, which is a
/// true scalar function of the parameters (finite-difference checkable).
/// `sign_is_plus = true` with `coeff = +1` is the training target over
/// reversed paths.
#[allow(clippy::too_many_arguments)]
pub fn build_objective(
    cfg: &NetConfig,
    batch: &Batch,
    tape: &mut Tape<f64>,
    ids: &[NodeId],
    omega: f64,
    lambda: f64,
    coeff: f64,
    sign_is_plus: bool,
    detach_weights: bool,
) -> Result<NodeId> {
    let mut graph = DaanGraph::over_leaves(cfg, tape, ids)?;
    let nodes = losses::build_objective(
        &mut graph,
        &batch.x_cat,
        &batch.labels,
        &batch.domains,
        omega,
        lambda,
        coeff,
        sign_is_plus,
        detach_weights,
        false,
    )?;
    Ok(nodes.objective)
}
