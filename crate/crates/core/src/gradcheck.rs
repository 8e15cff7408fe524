//! Finite-difference gradient oracle.
//!
//! The checker replays a deterministic graph builder with perturbed
//! parameters and compares central differences against the tape's reverse
//! pass. Components whose perturbation interval straddles a ReLU kink are
//! skipped and counted: the secant is not a derivative estimate there. The
//! oracle lives on the test side of the fence; nothing in the training path
//! depends on it.

use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::Result;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative-error denominator floor.
pub const ERROR_FLOOR: f64 = 1e-8;

/// Loss value plus the ReLU activation pattern of the evaluation.
fn eval_loss<S, F>(params: &[Tensor<S>], build: &F) -> Result<(S, Vec<bool>)>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    Ok((tape.scalar_value(loss), tape.relu_pattern()))
}

/// Gradients from one reverse pass of the builder's graph.
pub fn analytic_gradients<S, F>(params: &[Tensor<S>], build: F) -> Result<Vec<Tensor<S>>>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;
    ids.iter()
        .zip(params)
        .map(|(&id, p)| Tensor::new(p.shape().to_vec(), grads.wrt(id).to_vec()))
        .collect()
}

/// Central differences of the builder's loss.
pub struct FiniteDifferences<S> {
    /// `(f(p+h) - f(p-h)) / 2h` per component.
    pub gradients: Vec<Tensor<S>>,
    /// Components whose perturbation interval crossed a ReLU kink; their
    /// secant is not a derivative estimate.
    pub kink_crossings: Vec<Vec<bool>>,
    /// Largest `|f|` seen across evaluations, for the noise bound.
    pub loss_scale: S,
    pub step: S,
}

impl<S: Scalar> FiniteDifferences<S> {
    /// Smallest discrepancy the oracle can resolve: the difference
    /// `f(p+h) - f(p-h)` carries rounding noise of order `eps * |f|`, so
    /// below this bound analytic and numeric values are indistinguishable.
    pub fn noise_bound(&self) -> S {
        S::from_f64(8.0) * S::epsilon() * self.loss_scale.max(S::one())
            / (S::from_f64(2.0) * self.step)
    }
}

/// Central differences `(f(p+h) - f(p-h)) / 2h` per component.
pub fn finite_difference_gradients<S, F>(
    params: &[Tensor<S>],
    build: F,
    step: S,
) -> Result<FiniteDifferences<S>>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[NodeId]) -> Result<NodeId>,
{
    let mut work: Vec<Tensor<S>> = params.to_vec();
    let two = S::from_f64(2.0);
    let mut grads = Vec::with_capacity(params.len());
    let mut crossed = Vec::with_capacity(params.len());
    let mut loss_scale = S::zero();
    for pi in 0..params.len() {
        let mut grad = vec![S::zero(); params[pi].numel()];
        let mut kinks = vec![false; params[pi].numel()];
        for j in 0..params[pi].numel() {
            let orig = work[pi].values()[j];
            work[pi].values_mut()[j] = orig + step;
            let (plus, pattern_plus) = eval_loss(&work, &build)?;
            work[pi].values_mut()[j] = orig - step;
            let (minus, pattern_minus) = eval_loss(&work, &build)?;
            work[pi].values_mut()[j] = orig;
            grad[j] = (plus - minus) / (two * step);
            kinks[j] = pattern_plus != pattern_minus;
            loss_scale = loss_scale.max(plus.abs()).max(minus.abs());
        }
        grads.push(Tensor::new(params[pi].shape().to_vec(), grad)?);
        crossed.push(kinks);
    }
    Ok(FiniteDifferences {
        gradients: grads,
        kink_crossings: crossed,
        loss_scale,
        step,
    })
}

/// Worst relative error `|a - n| / max(|a|, |n|, floor)` over all
/// components, ignoring masked ones.
pub fn max_relative_error_masked<S: Scalar>(
    analytic: &[Tensor<S>],
    numeric: &[Tensor<S>],
    skip: Option<&[Vec<bool>]>,
) -> S {
    let floor = S::from_f64(ERROR_FLOOR);
    let mut worst = S::zero();
    for (pi, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (j, (&av, &nv)) in a.values().iter().zip(n.values()).enumerate() {
            if skip.is_some_and(|s| s[pi][j]) {
                continue;
            }
            let denom = av.abs().max(nv.abs()).max(floor);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

/// Worst relative error over every component (no masking).
pub fn max_relative_error<S: Scalar>(analytic: &[Tensor<S>], numeric: &[Tensor<S>]) -> S {
    max_relative_error_masked(analytic, numeric, None)
}

/// Outcome of one gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport<S> {
    /// Worst relative error over the comparable components.
    pub max_relative_error: S,
    /// Components compared.
    pub checked: usize,
    /// Components skipped because the perturbation crossed a ReLU kink.
    pub skipped_nondifferentiable: usize,
    /// Components whose discrepancy sat below the oracle's own rounding
    /// noise; counted as agreement.
    pub below_noise: usize,
}

/// Compare the tape's reverse pass against central differences over every
/// parameter component. Kink crossings are skipped, and discrepancies below
/// the finite-difference noise bound count as agreement: the oracle cannot
/// flag errors it cannot resolve.
///
/// The builder must be a pure function of the parameter values.
pub fn check_gradients<S, F>(params: &[Tensor<S>], build: F) -> Result<GradCheckReport<S>>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[NodeId]) -> Result<NodeId>,
{
    let analytic = analytic_gradients(params, &build)?;
    let fd = finite_difference_gradients(params, &build, S::from_f64(DEFAULT_STEP))?;
    let noise = fd.noise_bound();
    let floor = S::from_f64(ERROR_FLOOR);
    let mut worst = S::zero();
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut below_noise = 0usize;
    for (pi, (a, n)) in analytic.iter().zip(&fd.gradients).enumerate() {
        for (j, (&av, &nv)) in a.values().iter().zip(n.values()).enumerate() {
            if fd.kink_crossings[pi][j] {
                skipped += 1;
                continue;
            }
            checked += 1;
            let diff = (av - nv).abs();
            if diff <= noise {
                below_noise += 1;
                continue;
            }
            worst = worst.max(diff / av.abs().max(nv.abs()).max(floor));
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        checked,
        skipped_nondifferentiable: skipped,
        below_noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_squared_loss_is_exact() {
        // loss = sum((xW)^2) is quadratic in W, central differences are exact
        // up to rounding.
        let x = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let w = Tensor::matrix(2, 2, vec![0.3, 0.7, -0.2, 0.9]).unwrap();
        let b = Tensor::row(vec![0.0, 0.0]).unwrap();
        let params = [w];
        let report = check_gradients(&params, |tape, ids| {
            let xl = tape.leaf(x.clone());
            let bl = tape.leaf(b.clone());
            let y = tape.affine(xl, ids[0], bl)?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
        assert_eq!(report.skipped_nondifferentiable, 0);
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let x = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let w = Tensor::matrix(2, 2, vec![0.3, 0.7, -0.2, 0.9]).unwrap();
        let b = Tensor::row(vec![0.1, -0.3]).unwrap();
        let params = vec![w];
        let build = |tape: &mut Tape<f64>, ids: &[NodeId]| {
            let xl = tape.leaf(x.clone());
            let bl = tape.leaf(b.clone());
            let y = tape.affine(xl, ids[0], bl)?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum(sq))
        };
        let mut analytic = analytic_gradients(&params, build).unwrap();
        let fd = finite_difference_gradients(&params, build, DEFAULT_STEP).unwrap();
        // inject a known perturbation into one component
        analytic[0].values_mut()[2] += 0.5;
        let err = max_relative_error_masked(&analytic, &fd.gradients, Some(&fd.kink_crossings));
        assert!(err > 1e-2, "oracle failed to notice corruption: {err}");
    }

    #[test]
    fn two_layer_net_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut t = |r: usize, c: usize| {
            Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let x = t(3, 4);
        let params = vec![t(4, 5), t(1, 5), t(5, 2), t(1, 2)];
        let targets = [0usize, 1, 0];
        let report = check_gradients(&params, |tape, ids| {
            let xl = tape.leaf(x.clone());
            let h = tape.affine(xl, ids[0], ids[1])?;
            let a = tape.relu(h);
            let z = tape.affine(a, ids[2], ids[3])?;
            let p = tape.softmax(z)?;
            tape.mean_cross_entropy(p, &targets)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn kink_crossings_are_detected_and_skipped() {
        // one relu unit parked exactly at a kink: perturbing its input
        // weight flips the activation pattern
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let w = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let b = Tensor::row(vec![0.0]).unwrap();
        let params = vec![w];
        let build = |tape: &mut Tape<f64>, ids: &[NodeId]| {
            let xl = tape.leaf(x.clone());
            let bl = tape.leaf(b.clone());
            let h = tape.affine(xl, ids[0], bl)?;
            let a = tape.relu(h);
            Ok(tape.sum(a))
        };
        let report = check_gradients(&params, build).unwrap();
        assert_eq!(report.skipped_nondifferentiable, 1);
        assert_eq!(report.checked, 0);
    }
}
