//! The dynamic adversarial factor.
//!
//! Per-epoch discriminator losses are turned into proxy A-distances,
//! `d = 2(1 - 2L)` with clamping, and the factor is their ratio:
//! `omega = d_global / (d_global + mean_c d_local^c)`. The factor starts at
//! 1, is re-estimated after every epoch, and weighs the local (conditional)
//! against the global (marginal) alignment term in the objective.

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Denominator floor below which the previous factor is retained.
const DENOM_FLOOR: f64 = 1e-9;

/// Default low-mass class masking threshold, relative to the epoch's total
/// soft sample mass.
pub const DEFAULT_MASS_THRESHOLD: f64 = 1e-6;

/// Proxy A-distance of a discriminator loss: `2(1 - 2L)`, with the loss
/// clamped to `[0,1]` first and the result clamped to `[0,2]`.
///
/// Cross-entropy stands in for the classifier error of the classical
/// definition; it exceeds 1 early in training, which is what the clamping
/// absorbs. Chance-level loss (`ln 2`) therefore maps to distance 0.
pub fn a_distance<S: Scalar>(loss: S) -> S {
    let two = S::from_f64(2.0);
    let l = loss.max(S::zero()).min(S::one());
    let d = two * (S::one() - two * l);
    d.max(S::zero()).min(two)
}

/// Per-epoch accumulators and the current factor.
#[derive(Debug, Clone)]
pub struct OmegaState<S> {
    current: S,
    history: Vec<(usize, S)>,
    global_loss_sum: S,
    batch_count: usize,
    per_class_loss_sums: Vec<S>,
    per_class_mass: Vec<S>,
    mass_threshold: S,
    ema: Option<S>,
}

impl<S: Scalar> OmegaState<S> {
    /// State for `num_classes` local discriminators. The factor starts at 1
    /// so the first epoch trains with full local weighting.
    pub fn new(num_classes: usize) -> Self {
        Self::with_options(num_classes, S::from_f64(DEFAULT_MASS_THRESHOLD), None)
    }

    /// As [`OmegaState::new`] with an explicit masking threshold and an
    /// optional smoothing coefficient `alpha` (new = alpha * estimate +
    /// (1-alpha) * previous). `None` keeps the raw per-epoch estimate.
    pub fn with_options(num_classes: usize, mass_threshold: S, ema: Option<S>) -> Self {
        OmegaState {
            current: S::one(),
            history: vec![(0, S::one())],
            global_loss_sum: S::zero(),
            batch_count: 0,
            per_class_loss_sums: vec![S::zero(); num_classes],
            per_class_mass: vec![S::zero(); num_classes],
            mass_threshold,
            ema,
        }
    }

    /// Factor to use for the current epoch.
    pub fn current(&self) -> S {
        self.current
    }

    /// `(epoch, omega)` pairs; entry 0 is the initialization at 1.
    pub fn history(&self) -> &[(usize, S)] {
        &self.history
    }

    pub fn num_classes(&self) -> usize {
        self.per_class_loss_sums.len()
    }

    /// Fold one minibatch's discriminator losses into the epoch sums.
    ///
    /// `class_mass[c]` is the batch's summed soft class weight
    /// (`sum_i yhat_i^c`), used to detect classes the classifier never
    /// predicts.
    pub fn accumulate(
        &mut self,
        batch_global_loss: S,
        batch_per_class_losses: &[S],
        batch_class_mass: &[S],
    ) -> Result<()> {
        let c = self.num_classes();
        if batch_per_class_losses.len() != c || batch_class_mass.len() != c {
            return Err(Error::Shape(format!(
                "expected {c} per-class losses and masses, got {} and {}",
                batch_per_class_losses.len(),
                batch_class_mass.len()
            )));
        }
        let all = std::iter::once(&batch_global_loss).chain(batch_per_class_losses);
        for &l in all {
            if !l.is_finite() || l < S::zero() {
                return Err(Error::InvalidArgument(format!(
                    "discriminator losses must be finite and nonnegative, got {l}"
                )));
            }
        }
        if batch_class_mass
            .iter()
            .any(|m| !m.is_finite() || *m < S::zero())
        {
            return Err(Error::InvalidArgument(
                "class masses must be finite and nonnegative".into(),
            ));
        }
        self.global_loss_sum += batch_global_loss;
        for (sum, &l) in self
            .per_class_loss_sums
            .iter_mut()
            .zip(batch_per_class_losses)
        {
            *sum += l;
        }
        for (sum, &m) in self.per_class_mass.iter_mut().zip(batch_class_mass) {
            *sum += m;
        }
        self.batch_count += 1;
        Ok(())
    }

    /// Factor estimate from epoch-mean losses. The local distance is
    /// averaged over unmasked classes only; when both distances vanish the
    /// previous factor is retained.
    pub fn estimate(
        &self,
        global_loss: S,
        per_class_losses: &[S],
        class_mask: &[bool],
    ) -> Result<S> {
        if per_class_losses.len() != class_mask.len() {
            return Err(Error::Shape(format!(
                "{} losses for {} mask entries",
                per_class_losses.len(),
                class_mask.len()
            )));
        }
        let mut locals = Vec::with_capacity(per_class_losses.len());
        for (&l, &keep) in per_class_losses.iter().zip(class_mask) {
            if keep {
                locals.push(a_distance(l));
            }
        }
        if locals.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot estimate the factor with every class masked".into(),
            ));
        }
        let d_global = a_distance(global_loss);
        // equal distances average to themselves exactly; the summed form
        // would round for some class counts and break the exact-0.5 identity
        let mean_local = if locals.iter().all(|&d| d == locals[0]) {
            locals[0]
        } else {
            locals.iter().fold(S::zero(), |a, &d| a + d) / S::from_usize(locals.len())
        };
        let denom = d_global + mean_local;
        if denom < S::from_f64(DENOM_FLOOR) {
            return Ok(self.current);
        }
        Ok(d_global / denom)
    }

    /// Finish an epoch: average the accumulated losses, mask classes with
    /// negligible soft mass, re-estimate the factor, record it, and reset
    /// the accumulators. The returned factor applies to the whole next
    /// epoch.
    pub fn epoch_update(&mut self) -> Result<S> {
        if self.batch_count == 0 {
            return Err(Error::InvalidArgument(
                "epoch update without any accumulated batches".into(),
            ));
        }
        let n = S::from_usize(self.batch_count);
        let global_mean = self.global_loss_sum / n;
        let per_class_means: Vec<S> = self.per_class_loss_sums.iter().map(|&s| s / n).collect();
        let total_mass = self
            .per_class_mass
            .iter()
            .fold(S::zero(), |acc, &m| acc + m);
        let mask: Vec<bool> = self
            .per_class_mass
            .iter()
            .map(|&m| m >= self.mass_threshold * total_mass)
            .collect();
        let raw = self.estimate(global_mean, &per_class_means, &mask)?;
        self.current = match self.ema {
            Some(alpha) => alpha * raw + (S::one() - alpha) * self.current,
            None => raw,
        };
        self.history.push((self.history.len(), self.current));
        self.reset_accumulators();
        Ok(self.current)
    }

    /// Drop the epoch's accumulators without re-estimating; used by
    /// fixed-factor training runs.
    pub fn discard_epoch(&mut self) {
        self.reset_accumulators();
    }

    /// Epoch-mean global discriminator loss accumulated so far, if any.
    pub fn pending_global_mean(&self) -> Option<S> {
        if self.batch_count == 0 {
            None
        } else {
            Some(self.global_loss_sum / S::from_usize(self.batch_count))
        }
    }

    fn reset_accumulators(&mut self) {
        self.global_loss_sum = S::zero();
        self.batch_count = 0;
        for s in &mut self.per_class_loss_sums {
            *s = S::zero();
        }
        for m in &mut self.per_class_mass {
            *m = S::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_distance_identities() {
        assert!((a_distance(0.0f64) - 2.0).abs() < 1e-12);
        assert!((a_distance(0.5f64) - 0.0).abs() < 1e-12);
        assert!((a_distance(0.25f64) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn a_distance_monotone_and_clamped() {
        let mut prev = f64::INFINITY;
        for i in 0..=1000 {
            let l = 0.5 * i as f64 / 1000.0;
            let d = a_distance(l);
            assert!(d <= prev, "not nonincreasing at {l}");
            assert!((0.0..=2.0).contains(&d));
            prev = d;
        }
        assert_eq!(a_distance(0.5), 0.0);
        assert_eq!(a_distance(0.7), 0.0);
        assert_eq!(a_distance(std::f64::consts::LN_2), 0.0);
        assert_eq!(a_distance(100.0), 0.0);
        assert_eq!(a_distance(-3.0), 2.0);
    }

    #[test]
    fn accumulate_epoch_means() {
        let mut st = OmegaState::<f64>::new(2);
        st.accumulate(0.4, &[0.4, 0.4], &[1.0, 1.0]).unwrap();
        assert_eq!(st.pending_global_mean(), Some(0.4));

        let mut st = OmegaState::<f64>::new(2);
        st.accumulate(0.3, &[0.1, 0.2], &[1.0, 1.0]).unwrap();
        st.accumulate(0.5, &[0.3, 0.2], &[1.0, 1.0]).unwrap();
        assert!((st.pending_global_mean().unwrap() - 0.4).abs() < 1e-15);

        let mut empty = OmegaState::<f64>::new(2);
        assert!(empty.epoch_update().is_err());
    }

    #[test]
    fn accumulate_rejects_negative_loss() {
        let mut st = OmegaState::<f64>::new(2);
        assert!(st.accumulate(-0.1, &[0.1, 0.1], &[1.0, 1.0]).is_err());
        assert!(st.accumulate(0.1, &[0.1, -0.1], &[1.0, 1.0]).is_err());
        assert!(st.accumulate(0.1, &[0.1], &[1.0]).is_err());
    }

    #[test]
    fn estimate_examples() {
        let st = OmegaState::<f64>::new(2);
        // zero numerator: chance-level global loss
        let w = st.estimate(0.5, &[0.1, 0.2], &[true, true]).unwrap();
        assert_eq!(w, 0.0);

        // all losses equal below 0.5: global and mean local distances agree
        let w = st.estimate(0.3, &[0.3, 0.3], &[true, true]).unwrap();
        assert!((w - 0.5).abs() < 1e-12);

        // global 0.25 -> d_g = 1; locals 0.5 -> 0 and 0.25 -> 1, mean 0.5
        let w = st.estimate(0.25, &[0.5, 0.25], &[true, true]).unwrap();
        assert!((w - 2.0 / 3.0).abs() < 1e-12);

        assert!(st.estimate(0.25, &[0.5, 0.25], &[false, false]).is_err());
    }

    #[test]
    fn estimate_masking_changes_the_mean() {
        let st = OmegaState::<f64>::new(3);
        // masked class would otherwise drag the local mean to zero
        let w_all = st
            .estimate(0.25, &[0.25, 0.25, 0.5], &[true, true, true])
            .unwrap();
        let w_masked = st
            .estimate(0.25, &[0.25, 0.25, 0.5], &[true, true, false])
            .unwrap();
        assert!((w_all - 1.0 / (1.0 + 2.0 / 3.0)).abs() < 1e-12);
        assert!((w_masked - 0.5).abs() < 1e-12);
    }

    #[test]
    fn estimate_is_scale_consistent() {
        // loss pairs realizing distances (0.4, [0.8, 0.2]) and the same
        // distances scaled by 2: the ratio is unchanged
        let st = OmegaState::<f64>::new(2);
        let loss_of = |d: f64| (2.0 - d) / 4.0;
        let w1 = st
            .estimate(loss_of(0.4), &[loss_of(0.8), loss_of(0.2)], &[true, true])
            .unwrap();
        let w2 = st
            .estimate(loss_of(0.8), &[loss_of(1.6), loss_of(0.4)], &[true, true])
            .unwrap();
        assert!((w1 - w2).abs() < 1e-12);
        assert!((w1 - 0.4 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn epoch_update_lifecycle() {
        let mut st = OmegaState::<f64>::new(2);
        assert_eq!(st.current(), 1.0);
        assert_eq!(st.history(), &[(0, 1.0)]);

        // chance-level everywhere: ln 2 clamps to distance 0, denominator
        // underflows, previous factor is retained
        st.accumulate(std::f64::consts::LN_2, &[0.8, 0.9], &[4.0, 4.0])
            .unwrap();
        let w = st.epoch_update().unwrap();
        assert_eq!(w, 1.0);

        st.accumulate(0.25, &[0.5, 0.25], &[4.0, 4.0]).unwrap();
        let w = st.epoch_update().unwrap();
        assert!((w - 2.0 / 3.0).abs() < 1e-12);

        assert_eq!(st.history().len(), 3);
        for (i, &(e, w)) in st.history().iter().enumerate() {
            assert_eq!(e, i);
            assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn epoch_update_masks_low_mass_classes() {
        let mut st = OmegaState::<f64>::new(2);
        // class 1 gets essentially no soft mass; its chance-level loss must
        // not drag the local mean down
        st.accumulate(0.25, &[0.25, 0.7], &[8.0, 1e-9]).unwrap();
        let w = st.epoch_update().unwrap();
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ema_smooths_the_estimate() {
        let mut st = OmegaState::<f64>::with_options(2, 1e-6, Some(0.5));
        st.accumulate(0.25, &[0.5, 0.5], &[1.0, 1.0]).unwrap();
        // raw estimate 1.0 -> smoothed 0.5*1 + 0.5*1 = 1; then raw 0 below
        let w = st.epoch_update().unwrap();
        assert_eq!(w, 1.0);
        st.accumulate(0.5, &[0.25, 0.25], &[1.0, 1.0]).unwrap();
        let w = st.epoch_update().unwrap();
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn determinism_identical_sequences() {
        let run = || {
            let mut st = OmegaState::<f64>::new(3);
            for i in 0..5 {
                let l = 0.1 + 0.05 * i as f64;
                st.accumulate(l, &[l, l * 0.5, l * 1.5], &[2.0, 3.0, 4.0])
                    .unwrap();
                st.epoch_update().unwrap();
            }
            st.history().to_vec()
        };
        assert_eq!(run(), run());
    }
}
