//! With one-hot features, the Gauss-Newton scale makes the learned *function*
//! independent of any per-feature rescaling: scaling feature j by φ_j turns
//! the update into Δw_j = α·δ/φ_j, so predictions φ_j·w_j reproduce the
//! unscaled run exactly. Plain SGD has no such protection: its effective step
//! picks up a factor φ_j², which wrecks training for large scales.

use ignd::model::{tabular_features, FlatWeights, Model};
use ignd::numkit::{DenseVector, SeededRng};
use ignd::optim::{step, LrSchedule, OptimConfig, OptimState, Rule};

/// Random integer scales in [-10^4, 10^4] \ {0}, the adversarial range used
/// throughout the experiments.
fn random_scales(rng: &mut SeededRng, dim: usize) -> DenseVector {
    DenseVector::from_raw(
        (0..dim)
            .map(|_| loop {
                let k = rng.int_range(-10_000, 10_000);
                if k != 0 {
                    break k as f64;
                }
            })
            .collect(),
    )
}

fn config(rule: Rule, alpha: f64) -> OptimConfig {
    OptimConfig {
        epsilon: 0.0,
        ..OptimConfig::new(rule, LrSchedule::Constant { alpha0: alpha })
    }
}

struct Stream {
    indices: Vec<usize>,
    targets: Vec<f64>,
}

fn sample_stream(rng: &mut SeededRng, dim: usize, len: usize) -> Stream {
    Stream {
        indices: (0..len).map(|_| rng.index(dim)).collect(),
        targets: (0..len).map(|_| rng.uniform(-2.0, 2.0)).collect(),
    }
}

/// Runs one optimizer over the one-hot stream; returns per-step predictions
/// (after each update, at the step's sample) and per-step squared errors
/// before the update.
fn run(
    rule: Rule,
    alpha: f64,
    stream: &Stream,
    dim: usize,
    phi: Option<&DenseVector>,
) -> (Vec<f64>, Vec<f64>) {
    let model = Model::linear(dim);
    let mut w = FlatWeights::zeros(model.layout());
    let cfg = config(rule, alpha);
    let mut st = OptimState::new();
    let mut predictions = Vec::with_capacity(stream.indices.len());
    let mut losses = Vec::with_capacity(stream.indices.len());
    for (&j, &y) in stream.indices.iter().zip(stream.targets.iter()) {
        let x = tabular_features(j, 0, dim, 1, phi).unwrap();
        let ev = model.eval_with_gradient(&w, x.as_slice(), y).unwrap();
        losses.push(0.5 * ev.residual * ev.residual);
        step(&cfg, &mut st, &mut w, &ev).unwrap();
        predictions.push(model.value(&w, x.as_slice()).unwrap());
    }
    (predictions, losses)
}

#[test]
fn gauss_newton_scale_cancels_feature_scaling_exactly() {
    let rng = SeededRng::new(314);
    let dim = 12;
    let phi = random_scales(&mut rng.split(0), dim);
    let stream = sample_stream(&mut rng.split(1), dim, 800);

    for alpha in [1.0, 0.5, 0.05] {
        let (plain_preds, plain_losses) = run(Rule::Ignd, alpha, &stream, dim, None);
        let (scaled_preds, scaled_losses) = run(Rule::Ignd, alpha, &stream, dim, Some(&phi));
        for t in 0..stream.indices.len() {
            assert!(
                (plain_preds[t] - scaled_preds[t]).abs() <= 1e-9,
                "alpha {alpha} step {t}: predictions {} vs {}",
                plain_preds[t],
                scaled_preds[t]
            );
            assert!((plain_losses[t] - scaled_losses[t]).abs() <= 1e-9);
        }
    }
}

#[test]
fn sgd_is_not_scale_invariant_witness() {
    let rng = SeededRng::new(314);
    let dim = 12;
    let phi = random_scales(&mut rng.split(0), dim);
    let stream = sample_stream(&mut rng.split(1), dim, 120);

    // α tuned for the unscaled design.
    let alpha = 0.5;
    let (_, plain_losses) = run(Rule::Sgd, alpha, &stream, dim, None);
    let (_, scaled_losses) = run(Rule::Sgd, alpha, &stream, dim, Some(&phi));
    let t = 100;
    let relative_gap =
        (plain_losses[t] - scaled_losses[t]).abs() / plain_losses[t].abs().max(1e-12);
    assert!(
        relative_gap > 0.10,
        "sgd losses unexpectedly close at step {t}: {} vs {}",
        plain_losses[t],
        scaled_losses[t]
    );
}

#[test]
fn scaled_weights_reproduce_unscaled_weights_through_phi() {
    // φ_j · w̃_j(t) tracks w_j(t) for every step t, asserted at the level of
    // predicted values on every basis vector.
    let rng = SeededRng::new(99);
    let dim = 6;
    let phi = random_scales(&mut rng.split(0), dim);
    let stream = sample_stream(&mut rng.split(1), dim, 300);

    let model = Model::linear(dim);
    let mut w_plain = FlatWeights::zeros(model.layout());
    let mut w_scaled = FlatWeights::zeros(model.layout());
    let cfg = config(Rule::Ignd, 0.7);
    let mut st_plain = OptimState::new();
    let mut st_scaled = OptimState::new();
    for (&j, &y) in stream.indices.iter().zip(stream.targets.iter()) {
        let x_plain = tabular_features(j, 0, dim, 1, None).unwrap();
        let x_scaled = tabular_features(j, 0, dim, 1, Some(&phi)).unwrap();
        let ev_plain = model
            .eval_with_gradient(&w_plain, x_plain.as_slice(), y)
            .unwrap();
        let ev_scaled = model
            .eval_with_gradient(&w_scaled, x_scaled.as_slice(), y)
            .unwrap();
        step(&cfg, &mut st_plain, &mut w_plain, &ev_plain).unwrap();
        step(&cfg, &mut st_scaled, &mut w_scaled, &ev_scaled).unwrap();
        for k in 0..dim {
            let plain_value = w_plain.values()[k];
            let scaled_value = phi[k] * w_scaled.values()[k];
            assert!(
                (plain_value - scaled_value).abs() <= 1e-9,
                "weight {k}: {plain_value} vs {scaled_value}"
            );
        }
    }
}
