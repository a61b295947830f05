//! Reverse-mode gradients of the pretraining loss against central finite
//! differences.

use nnscene_core::pretrain::trainer::{loss_and_grads, loss_value};
use nnscene_core::pretrain::{LossConfig, PoolingMode, PretrainState, ToyConfig, ToyData, TrainConfig};

const EPS: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const ABS_FLOOR: f64 = 1e-6;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ABS_FLOOR)
}

/// Worst relative error over every online parameter.
fn worst_error(lambda: f64, pooling: PoolingMode, alpha: f64, seed: u64) -> f64 {
    let data = ToyData::new(ToyConfig {
        positions: 3,
        patch_dim: 3,
        batch_size: 3,
        num_classes: 3,
        seed,
        ..ToyConfig::default()
    })
    .unwrap();
    let loss = LossConfig {
        lambda,
        pooling,
        alpha,
        ..LossConfig::default()
    };
    let mut state = PretrainState::new(
        TrainConfig {
            loss,
            dim: 4,
            value_hidden: 5,
            proj_dim: 3,
            memory_size: 16,
            batch_norm: false,
            seed,
            ..TrainConfig::default()
        },
        3,
    )
    .unwrap();
    state.push_batch(&data.batch(1000)).unwrap();
    // Move the target away from the online network.
    let mut theta = state.online.flatten();
    for (i, t) in theta.iter_mut().enumerate() {
        *t += 0.05 * ((i as f64) * 0.7).sin();
    }
    state.online.unflatten(&theta).unwrap();

    let batch = data.batch(0);
    let (_, grads) = loss_and_grads(&state.online, &state.target, &state.bank, &loss, &batch).unwrap();
    let analytic = grads.flatten();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let eval = |delta: f64| {
            let mut p = theta.clone();
            p[i] += delta;
            let mut params = state.online.clone();
            params.unflatten(&p).unwrap();
            loss_value(&params, &state.target, &state.bank, &loss, &batch)
                .unwrap()
                .total
        };
        let fd = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
        worst = worst.max(relative_error(analytic[i], fd));
    }
    worst
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut configs = 0;
    for (seed, &lambda) in [0.0, 0.2, 1.0].iter().enumerate() {
        for pooling in [PoolingMode::Mean, PoolingMode::Qk, PoolingMode::Qkv] {
            for alpha in [0.0, 0.05] {
                let err = worst_error(lambda, pooling, alpha, seed as u64 * 7 + 1);
                assert!(
                    err < REL_TOL,
                    "lambda {lambda} pooling {pooling} alpha {alpha}: rel err {err:e}"
                );
                configs += 1;
            }
        }
    }
    assert_eq!(configs, 18);
    for seed in 100..102 {
        assert!(worst_error(0.2, PoolingMode::Qkv, 0.05, seed) < REL_TOL);
    }
}
