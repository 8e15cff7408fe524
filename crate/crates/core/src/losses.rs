//! The four training losses: label classification, global domain
//! confusion, per-class local domain confusion, and the combined objective.
//!
//! The combined objective subtracts the weighted domain losses from the
//! label loss. During training that minus sign is realized by gradient
//! reversal, so the scalar handed to SGD is the *plus* combination over
//! reversal-wrapped discriminator paths; [`total_loss`] and [`sgd_target`]
//! expose the two forms. On the shared extractor/classifier parameters the
//! two produce identical gradients.

use crate::net::DomainLabel;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::{Error, Result};

/// Plain values of one minibatch's losses, read off the tape.
#[derive(Debug, Clone)]
pub struct LossBundle<S> {
    pub label: S,
    pub global: S,
    pub local: S,
    pub per_class_local: Vec<S>,
    /// Combined objective value (label minus weighted domain losses); may be
    /// negative even though every component is nonnegative.
    pub total: S,
}

/// Mean cross-entropy of the source predictions against their class labels.
///
/// Only source samples belong here; the target has no labels to train on.
pub fn label_loss<S: Scalar>(
    tape: &mut Tape<S>,
    yhat_src: NodeId,
    labels: &[usize],
) -> Result<NodeId> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "label loss needs a non-empty source batch".into(),
        ));
    }
    tape.mean_cross_entropy(yhat_src, labels)
}

fn require_both_domains(domains: &[DomainLabel]) -> Result<()> {
    let sources = domains
        .iter()
        .filter(|d| **d == DomainLabel::Source)
        .count();
    if sources == 0 || sources == domains.len() {
        return Err(Error::InvalidArgument(
            "domain loss needs both source and target rows in the batch".into(),
        ));
    }
    Ok(())
}

/// Mean binary cross-entropy of the global discriminator's predictions over
/// the combined source-and-target batch.
pub fn global_domain_loss<S: Scalar>(
    tape: &mut Tape<S>,
    dhat: NodeId,
    domains: &[DomainLabel],
) -> Result<NodeId> {
    require_both_domains(domains)?;
    let targets: Vec<usize> = domains.iter().map(|d| d.index()).collect();
    tape.mean_cross_entropy(dhat, &targets)
}

/// Local loss nodes: the summed loss driving training and the per-class
/// means feeding the dynamic-factor estimate.
#[derive(Debug, Clone)]
pub struct LocalLosses {
    pub total: NodeId,
    pub per_class: Vec<NodeId>,
}

/// Per-class domain confusion losses.
///
/// Each class discriminator contributes the mean cross-entropy of its
/// predictions over the whole batch; the total sums those means over
/// classes, so it can exceed the global loss by up to a factor of `C`.
/// `class_mean` switches the total to the mean over classes instead, making
/// the local and global terms commensurate (exposed for ablations).
pub fn local_domain_loss<S: Scalar>(
    tape: &mut Tape<S>,
    dhat_per_class: &[NodeId],
    domains: &[DomainLabel],
    class_mean: bool,
) -> Result<LocalLosses> {
    if dhat_per_class.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 class discriminators, got {}",
            dhat_per_class.len()
        )));
    }
    require_both_domains(domains)?;
    for &d in dhat_per_class {
        let rows = tape.value(d).rows();
        if rows != domains.len() {
            return Err(Error::Shape(format!(
                "discriminator output has {rows} rows for {} domain labels",
                domains.len()
            )));
        }
    }
    let targets: Vec<usize> = domains.iter().map(|d| d.index()).collect();
    let per_class: Vec<NodeId> = dhat_per_class
        .iter()
        .map(|&d| tape.mean_cross_entropy(d, &targets))
        .collect::<Result<_>>()?;
    let mut total = per_class[0];
    for &l in &per_class[1..] {
        total = tape.add(total, l)?;
    }
    if class_mean {
        total = tape.scale(total, S::one() / S::from_usize(per_class.len()));
    }
    Ok(LocalLosses { total, per_class })
}

fn check_weights<S: Scalar>(omega: S, lambda: S) -> Result<()> {
    // NaN fails both comparisons and is rejected along with out-of-range
    let in_unit = omega >= S::zero() && omega <= S::one();
    if !in_unit {
        return Err(Error::InvalidArgument(format!(
            "omega must lie in [0,1], got {omega}"
        )));
    }
    if !(lambda.is_finite() && lambda >= S::zero()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

fn combine<S: Scalar>(
    tape: &mut Tape<S>,
    l_y: NodeId,
    l_g: NodeId,
    l_l: NodeId,
    omega: S,
    lambda: S,
    sign: S,
) -> Result<NodeId> {
    let g_term = tape.scale(l_g, sign * lambda * (S::one() - omega));
    let l_term = tape.scale(l_l, sign * lambda * omega);
    let domain = tape.add(g_term, l_term)?;
    tape.add(l_y, domain)
}

/// Combined objective value: `L_y - lambda * ((1-omega) L_g + omega L_l)`.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    l_y: NodeId,
    l_g: NodeId,
    l_l: NodeId,
    omega: S,
    lambda: S,
) -> Result<NodeId> {
    check_weights(omega, lambda)?;
    combine(tape, l_y, l_g, l_l, omega, lambda, -S::one())
}

/// The scalar handed to SGD: `L_y + lambda * ((1-omega) L_g + omega L_l)`,
/// valid when the domain losses were computed through gradient reversal.
pub fn sgd_target<S: Scalar>(
    tape: &mut Tape<S>,
    l_y: NodeId,
    l_g: NodeId,
    l_l: NodeId,
    omega: S,
    lambda: S,
) -> Result<NodeId> {
    check_weights(omega, lambda)?;
    combine(tape, l_y, l_g, l_l, omega, lambda, S::one())
}

/// Loss nodes of one assembled minibatch objective.
#[derive(Debug, Clone)]
pub struct ObjectiveNodes {
    pub label: NodeId,
    pub global: NodeId,
    pub local: LocalLosses,
    /// The combined scalar: SGD target (plus form) or the written objective
    /// (minus form), per `sgd_form`.
    pub objective: NodeId,
    /// Class probability rows over the whole batch.
    pub class_probs: NodeId,
}

/// Assemble the complete training objective for a half-source batch.
///
/// `x_cat` stacks the source rows (with `source_labels`) on top of the
/// target rows; `domains` labels every row. With `sgd_form` the domain
/// terms enter with a plus sign (for reversal-wrapped paths, coefficient
/// +1); without it the written minus-sign objective is built, which paired
/// with `reversal_coeff = -1` is a plain scalar function of the parameters.
#[allow(clippy::too_many_arguments)]
pub fn build_objective<S: Scalar>(
    graph: &mut crate::net::DaanGraph<'_, S>,
    x_cat: &crate::tensor::Tensor<S>,
    source_labels: &[usize],
    domains: &[DomainLabel],
    omega: S,
    lambda: S,
    reversal_coeff: S,
    sgd_form: bool,
    detach_weights: bool,
    class_mean: bool,
) -> Result<ObjectiveNodes> {
    let half = source_labels.len();
    let f = graph.extract_features(x_cat)?;
    let class_probs = graph.classify(f)?;
    let yhat_src = graph.tape.slice_rows(class_probs, 0, half)?;
    let label = label_loss(graph.tape, yhat_src, source_labels)?;
    let gprobs = graph.global_domain_probs(f, reversal_coeff)?;
    let global = global_domain_loss(graph.tape, gprobs, domains)?;
    let local_probs = graph.local_domain_probs(f, class_probs, reversal_coeff, detach_weights)?;
    let local = local_domain_loss(graph.tape, &local_probs, domains, class_mean)?;
    let objective = if sgd_form {
        sgd_target(graph.tape, label, global, local.total, omega, lambda)?
    } else {
        total_loss(graph.tape, label, global, local.total, omega, lambda)?
    };
    Ok(ObjectiveNodes {
        label,
        global,
        local,
        objective,
        class_probs,
    })
}

impl<S: Scalar> LossBundle<S> {
    /// Read the loss values off the tape after the forward pass.
    pub fn from_nodes(
        tape: &Tape<S>,
        l_y: NodeId,
        l_g: NodeId,
        locals: &LocalLosses,
        total: NodeId,
    ) -> Self {
        LossBundle {
            label: tape.scalar_value(l_y),
            global: tape.scalar_value(l_g),
            local: tape.scalar_value(locals.total),
            per_class_local: locals
                .per_class
                .iter()
                .map(|&n| tape.scalar_value(n))
                .collect(),
            total: tape.scalar_value(total),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    const LN2: f64 = std::f64::consts::LN_2;

    fn probs(tape: &mut Tape<f64>, rows: &[[f64; 2]]) -> NodeId {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        tape.leaf(Tensor::matrix(rows.len(), 2, flat).unwrap())
    }

    #[test]
    fn label_loss_examples() {
        let mut tape = Tape::new();
        let perfect = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let l = label_loss(&mut tape, perfect, &[0, 2]).unwrap();
        assert_eq!(tape.scalar_value(l), 0.0);

        let uniform = tape.leaf(Tensor::matrix(2, 3, vec![1.0 / 3.0; 6]).unwrap());
        let l = label_loss(&mut tape, uniform, &[1, 0]).unwrap();
        assert!((tape.scalar_value(l) - 3f64.ln()).abs() < 1e-12);

        let two = probs(&mut tape, &[[0.5, 0.5], [0.9, 0.1]]);
        let l = label_loss(&mut tape, two, &[0, 1]).unwrap();
        assert!((tape.scalar_value(l) - 1.4978661367769955).abs() < 1e-12);
    }

    #[test]
    fn label_loss_rejects_empty_batch() {
        let mut tape = Tape::new();
        let p = probs(&mut tape, &[[0.5, 0.5]]);
        assert!(label_loss(&mut tape, p, &[]).is_err());
    }

    #[test]
    fn global_loss_examples() {
        use DomainLabel::{Source, Target};
        let mut tape = Tape::new();
        let chance = probs(&mut tape, &[[0.5, 0.5], [0.5, 0.5]]);
        let l = global_domain_loss(&mut tape, chance, &[Source, Target]).unwrap();
        assert!((tape.scalar_value(l) - LN2).abs() < 1e-15);

        let perfect = probs(&mut tape, &[[1.0, 0.0], [0.0, 1.0]]);
        let l = global_domain_loss(&mut tape, perfect, &[Source, Target]).unwrap();
        assert_eq!(tape.scalar_value(l), 0.0);

        let two = probs(&mut tape, &[[0.9, 0.1], [0.2, 0.8]]);
        let l = global_domain_loss(&mut tape, two, &[Source, Target]).unwrap();
        assert!((tape.scalar_value(l) - 0.164252033486018).abs() < 1e-12);
    }

    #[test]
    fn global_loss_rejects_single_domain_batch() {
        use DomainLabel::Source;
        let mut tape = Tape::new();
        let p = probs(&mut tape, &[[0.5, 0.5], [0.5, 0.5]]);
        assert!(global_domain_loss(&mut tape, p, &[Source, Source]).is_err());
    }

    #[test]
    fn local_loss_examples() {
        use DomainLabel::{Source, Target};
        let domains = [Source, Target];

        let mut tape = Tape::new();
        let chance: Vec<NodeId> = (0..3)
            .map(|_| probs(&mut tape, &[[0.5, 0.5], [0.5, 0.5]]))
            .collect();
        let losses = local_domain_loss(&mut tape, &chance, &domains, false).unwrap();
        for &c in &losses.per_class {
            assert!((tape.scalar_value(c) - LN2).abs() < 1e-15);
        }
        assert!((tape.scalar_value(losses.total) - 3.0 * LN2).abs() < 1e-14);

        // the class-mean variant divides by C
        let losses = local_domain_loss(&mut tape, &chance, &domains, true).unwrap();
        assert!((tape.scalar_value(losses.total) - LN2).abs() < 1e-14);

        let perfect: Vec<NodeId> = (0..3)
            .map(|_| probs(&mut tape, &[[1.0, 0.0], [0.0, 1.0]]))
            .collect();
        let losses = local_domain_loss(&mut tape, &perfect, &domains, false).unwrap();
        assert_eq!(tape.scalar_value(losses.total), 0.0);

        let mixed = vec![
            probs(&mut tape, &[[1.0, 0.0], [0.0, 1.0]]),
            probs(&mut tape, &[[0.5, 0.5], [0.5, 0.5]]),
        ];
        let losses = local_domain_loss(&mut tape, &mixed, &domains, false).unwrap();
        assert!((tape.scalar_value(losses.total) - LN2).abs() < 1e-15);
    }

    #[test]
    fn local_loss_rejects_mismatches() {
        use DomainLabel::{Source, Target};
        let mut tape = Tape::new();
        let one = vec![probs(&mut tape, &[[0.5, 0.5], [0.5, 0.5]])];
        assert!(local_domain_loss(&mut tape, &one, &[Source, Target], false).is_err());

        let short = vec![
            probs(&mut tape, &[[0.5, 0.5]]),
            probs(&mut tape, &[[0.5, 0.5]]),
        ];
        assert!(local_domain_loss(&mut tape, &short, &[Source, Target], false).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let mut tape = Tape::new();
        let l_y = tape.leaf(Tensor::scalar(1.0));
        let l_g = tape.leaf(Tensor::scalar(0.6));
        let l_l = tape.leaf(Tensor::scalar(0.4));
        let t0 = total_loss(&mut tape, l_y, l_g, l_l, 0.0f64, 1.0).unwrap();
        assert!((tape.scalar_value(t0) - 0.4).abs() < 1e-15);
        let t1 = total_loss(&mut tape, l_y, l_g, l_l, 1.0, 1.0).unwrap();
        assert!((tape.scalar_value(t1) - 0.6).abs() < 1e-15);
        let th = total_loss(&mut tape, l_y, l_g, l_l, 0.5, 1.0).unwrap();
        assert!((tape.scalar_value(th) - 0.5).abs() < 1e-15);

        assert!(total_loss(&mut tape, l_y, l_g, l_l, 1.5, 1.0).is_err());
        assert!(total_loss(&mut tape, l_y, l_g, l_l, -0.1, 1.0).is_err());
        assert!(total_loss(&mut tape, l_y, l_g, l_l, 0.5, -1.0).is_err());
        assert!(total_loss(&mut tape, l_y, l_g, l_l, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn total_loss_is_affine_in_omega() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (ly, lg, ll): (f64, f64, f64) = (
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..3.0),
            );
            let lambda = rng.gen_range(0.0..2.0);
            let w: f64 = rng.gen_range(0.0..1.0);
            let mut tape = Tape::new();
            let y = tape.leaf(Tensor::scalar(ly));
            let g = tape.leaf(Tensor::scalar(lg));
            let l = tape.leaf(Tensor::scalar(ll));
            let at_w = total_loss(&mut tape, y, g, l, w, lambda).unwrap();
            let at_0 = total_loss(&mut tape, y, g, l, 0.0, lambda).unwrap();
            let at_1 = total_loss(&mut tape, y, g, l, 1.0, lambda).unwrap();
            let lhs = tape.scalar_value(at_w);
            let rhs = (1.0 - w) * tape.scalar_value(at_0) + w * tape.scalar_value(at_1);
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }
}
