//! Toy trainer behavior over many steps.

use nnscene_core::pretrain::{toy_train_step, LossConfig, PretrainState, ToyConfig, ToyData, TrainConfig};

const WINDOW: usize = 20;

fn run(cfg: TrainConfig, data: &ToyData, steps: usize) -> Vec<f64> {
    let mut state = PretrainState::new(cfg, data.config().patch_dim).unwrap();
    (0..steps)
        .map(|s| toy_train_step(&mut state, &data.batch(s as u64)).unwrap().total)
        .collect()
}

/// Trailing mean over `WINDOW` steps ending at `step` (1-based).
fn smoothed(losses: &[f64], step: usize) -> f64 {
    losses[step - WINDOW..step].iter().sum::<f64>() / WINDOW as f64
}

#[test]
fn smoothed_loss_decreases_over_200_steps() {
    let data = ToyData::new(ToyConfig::default()).unwrap();
    assert_eq!((data.config().num_classes, data.config().batch_size), (4, 16));
    let losses = run(TrainConfig::default(), &data, 200);
    let (early, late) = (smoothed(&losses, 20), smoothed(&losses, 200));
    assert!(late < early, "smoothed loss {early} -> {late}");
}

#[test]
fn memory_path_changes_the_trajectory() {
    let data = ToyData::new(ToyConfig::default()).unwrap();
    let base = TrainConfig::default();
    let without = run(
        TrainConfig {
            loss: LossConfig { lambda: 0.0, ..base.loss },
            ..base
        },
        &data,
        5,
    );
    let with = run(base, &data, 5);
    assert_ne!(without, with);
}

#[test]
fn runs_are_deterministic() {
    let data = ToyData::new(ToyConfig::default()).unwrap();
    let a = run(TrainConfig::default(), &data, 3);
    let b = run(TrainConfig::default(), &data, 3);
    assert_eq!(a, b);
}
