//! Trainer-level behavior: degenerate-factor parameter freezing, the role
//! of target labels, and dynamic-factor bookkeeping across a real fit.

use daan_core::datagen::{apply_marginal_shift, make_source, ClusterSpec, TargetDomain};
use daan_core::net::{DaanModel, ParamGroup};
use daan_core::trainer::{fit, OmegaMode, TrainConfig};

fn task(seed: u64) -> (daan_core::LabeledDomain, daan_core::TargetDomain) {
    let spec = ClusterSpec::new(3, 4, 1.0);
    let source = make_source(&spec, 60, seed).unwrap();
    let target = apply_marginal_shift(&spec, 60, 1.5, seed + 1).unwrap();
    (source, target)
}

fn config(seed: u64) -> TrainConfig<f64> {
    let mut net = daan_core::net::NetConfig::new(4, 3, seed);
    net.feature_dim = 8;
    net.hidden_width = 12;
    net.discriminator_hidden = 8;
    let mut cfg = TrainConfig::new(net, seed);
    cfg.batch_size = 8;
    cfg.epochs = 4;
    cfg
}

#[test]
fn fixed_omega_zero_freezes_local_discriminators() {
    let (source, target) = task(11);
    let mut cfg = config(11);
    cfg.omega_mode = OmegaMode::Fixed(0.0);
    let init = DaanModel::<f64>::init(&cfg.net).unwrap();
    let result = fit(&cfg, &source, &target).unwrap();
    for ((after, group), (before, _)) in result.model.params().iter().zip(init.params().iter()) {
        match group {
            ParamGroup::LocalDiscriminator(_) => {
                for (a, b) in after.values().iter().zip(before.values()) {
                    assert_eq!(a.to_bits(), b.to_bits(), "{group:?} moved");
                }
            }
            ParamGroup::GlobalDiscriminator => {
                assert_ne!(after.values(), before.values(), "global should train");
            }
            _ => {}
        }
    }
}

#[test]
fn fixed_omega_one_freezes_global_discriminator() {
    let (source, target) = task(12);
    let mut cfg = config(12);
    cfg.omega_mode = OmegaMode::Fixed(1.0);
    let init = DaanModel::<f64>::init(&cfg.net).unwrap();
    let result = fit(&cfg, &source, &target).unwrap();
    let mut some_local_moved = false;
    for ((after, group), (before, _)) in result.model.params().iter().zip(init.params().iter()) {
        match group {
            ParamGroup::GlobalDiscriminator => {
                for (a, b) in after.values().iter().zip(before.values()) {
                    assert_eq!(a.to_bits(), b.to_bits(), "{group:?} moved");
                }
            }
            ParamGroup::LocalDiscriminator(_) => {
                some_local_moved |= after.values() != before.values();
            }
            _ => {}
        }
    }
    assert!(some_local_moved);
}

#[test]
fn target_labels_influence_only_accuracy_columns() {
    let (source, target) = task(13);
    let cfg = config(13);
    let baseline = fit(&cfg, &source, &target).unwrap();

    // permute the held-out labels; every non-accuracy column must be
    // untouched
    let n = target.len();
    let permuted: Vec<usize> = (0..n).map(|i| target.eval_labels()[(i + 1) % n]).collect();
    let shuffled = TargetDomain::new(target.features().clone(), permuted).unwrap();
    let other = fit(&cfg, &source, &shuffled).unwrap();

    assert_eq!(baseline.model, other.model);
    let mut accuracy_changed = false;
    for (a, b) in baseline.metrics.iter().zip(&other.metrics) {
        assert_eq!(a.label_loss, b.label_loss);
        assert_eq!(a.global_loss, b.global_loss);
        assert_eq!(a.local_loss, b.local_loss);
        assert_eq!(a.omega, b.omega);
        assert_eq!(a.lr, b.lr);
        assert_eq!(a.source_accuracy, b.source_accuracy);
        accuracy_changed |= a.target_accuracy != b.target_accuracy;
    }
    assert!(
        accuracy_changed,
        "permuting labels should move target accuracy"
    );
}

#[test]
fn dynamic_factor_history_tracks_epochs() {
    let (source, target) = task(14);
    let mut cfg = config(14);
    cfg.epochs = 5;
    let result = fit(&cfg, &source, &target).unwrap();
    assert_eq!(result.omega_history.len(), 6);
    assert_eq!(result.omega_history[0], (0, 1.0));
    // the factor recorded in epoch e's metrics row is the one estimated
    // after epoch e-1
    for (e, row) in result.metrics.iter().enumerate() {
        assert_eq!(row.omega, result.omega_history[e].1);
    }
}

#[test]
fn unequal_domain_sizes_recycle_the_shorter_stream() {
    let spec = ClusterSpec::new(3, 4, 1.0);
    let source = make_source(&spec, 30, 3).unwrap();
    let target = apply_marginal_shift(&spec, 90, 1.0, 4).unwrap();
    let mut cfg = config(3);
    cfg.epochs = 2;
    let result = fit(&cfg, &source, &target).unwrap();
    assert_eq!(result.metrics.len(), 2);
    // and the reverse imbalance
    let source = make_source(&spec, 90, 5).unwrap();
    let target = apply_marginal_shift(&spec, 30, 1.0, 6).unwrap();
    let result = fit(&cfg, &source, &target).unwrap();
    assert_eq!(result.metrics.len(), 2);
}
