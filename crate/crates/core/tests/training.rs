//! Training loop behaviour on small synthetic problems.

use tactile_core::dataset::{build_dataset, synthetic_recordings};
use tactile_core::model::{evaluate, evaluate_split, train, Arch, Model, ModelConfig, TrainConfig, TrainError};
use tactile_core::{Dataset, GestureClass, Recording, Split};

/// A one-finger swipe against a five-finger pinch: 200 windows of two
/// spatially distinct gestures.
fn swipe_or_pinch() -> Dataset {
    let recs: Vec<Recording> = synthetic_recordings(2, 21)
        .iter()
        .filter(|r| matches!(r.class, GestureClass::TranslateZPos | GestureClass::AuxHome))
        .map(|r| r.process().unwrap())
        .collect();
    assert_eq!(recs.len(), 4);
    build_dataset(&recs, 50, 4).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 2e-3,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn hybrid_separates_two_gestures_within_five_epochs() {
    let ds = swipe_or_pinch();
    assert_eq!(ds.len(), 200);
    let out = train(&ds, ModelConfig::standard(Arch::Hybrid), &quick(5), |_| {}).unwrap();
    assert!(out.history.len() <= 5);
    let acc = out.best_val.accuracy;
    assert!(acc >= 0.99, "validation accuracy {acc}");
    // The returned parameters are the ones that scored best.
    assert_eq!(evaluate_split(&out.model, &ds, Split::Val).unwrap().accuracy, acc);
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let ds = swipe_or_pinch();
    let a = train(&ds, ModelConfig::standard(Arch::Hybrid), &quick(1), |_| {}).unwrap();
    let b = train(&ds, ModelConfig::standard(Arch::Hybrid), &quick(1), |_| {}).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    let c = train(&ds, ModelConfig::standard(Arch::Hybrid), &TrainConfig { seed: 6, ..quick(1) }, |_| {}).unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn absurd_learning_rate_is_reported_as_divergence() {
    let ds = swipe_or_pinch();
    let cfg = TrainConfig { lr: 1e3, ..quick(3) };
    let err = train(&ds, ModelConfig::standard(Arch::Lstm), &cfg, |_| {}).unwrap_err();
    assert!(matches!(err, TrainError::Diverged { .. }), "{err}");
}

#[test]
fn epoch_callback_sees_every_epoch() {
    let ds = swipe_or_pinch();
    let mut seen = Vec::new();
    let cfg = TrainConfig { patience: 10, ..quick(2) };
    let out = train(&ds, ModelConfig::standard(Arch::Lstm), &cfg, |r| seen.push(r.clone())).unwrap();
    assert_eq!(seen, out.history);
    assert_eq!(seen.iter().map(|r| r.epoch).collect::<Vec<_>>(), (1..=seen.len()).collect::<Vec<_>>());
    assert!(seen.iter().all(|r| r.train_loss.is_finite() && (0.0..=1.0).contains(&r.val_accuracy)));
}

#[test]
fn perfect_predictions_give_a_diagonal_confusion() {
    let ds = swipe_or_pinch();
    for class in [GestureClass::TranslateZPos, GestureClass::AuxHome] {
        // A model that always answers `class` scores exactly the share of `class`.
        let mut m: Model<f32> = Model::zeroed(ModelConfig::standard(Arch::Hybrid));
        m.tensor_mut("head.b2").unwrap()[class.index()] = 10.0;
        let only: Vec<_> = ds.samples.iter().filter(|s| s.label == class).collect();
        let r = evaluate(&m, only.iter().copied()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.samples, 100);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                assert_eq!(n, if i == j && i == class.index() { 100 } else { 0 });
            }
        }
        let all = evaluate(&m, &ds.samples).unwrap();
        assert_eq!(all.accuracy, 0.5);
        assert_eq!(all.row_sums().iter().sum::<usize>(), 200);
    }
}
