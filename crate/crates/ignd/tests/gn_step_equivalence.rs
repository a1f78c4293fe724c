//! The incremental scaled update must coincide with the dense regularized
//! Gauss-Newton solve, and must zero the linearized residual, for any model
//! whose evaluation produces an exact gradient. These checks are the backbone
//! of the whole crate: the cheap O(m) rule and the O(m³) reference solve the
//! same subproblem.

use ignd::model::{FlatWeights, Model};
use ignd::numkit::{solve_regularized_gn_oracle, DenseVector, SeededRng};
use ignd::optim::{step, LrSchedule, OptimConfig, OptimState, Rule};

fn unit_step_config() -> OptimConfig {
    OptimConfig {
        epsilon: 0.0,
        ..OptimConfig::new(Rule::Ignd, LrSchedule::Constant { alpha0: 1.0 })
    }
}

/// Random model with parameter count in 2..=30: either linear or a small MLP.
fn random_case(rng: &mut SeededRng, case: usize) -> (Model, FlatWeights, Vec<f64>) {
    let model = if case % 2 == 0 {
        Model::linear(2 + rng.index(29))
    } else {
        let input_dim = 1 + rng.index(4);
        let hidden = 1 + rng.index(3);
        let model = Model::mlp_relu(input_dim, &[hidden]).unwrap();
        debug_assert!(model.param_count() <= 30);
        model
    };
    let mut w = match &model {
        Model::Linear { input_dim } => {
            let values: Vec<f64> = (0..*input_dim).map(|_| rng.uniform(-2.0, 2.0)).collect();
            FlatWeights::new(DenseVector::from_raw(values), model.layout()).unwrap()
        }
        Model::Mlp { .. } => model.init(rng),
    };
    // Shift biases too so MLP cases are generic, not zero-bias.
    if let Model::Mlp { .. } = model {
        for v in w.values_mut().as_mut_slice() {
            *v += 0.01 * (rng.unit() - 0.5);
        }
    }
    let x: Vec<f64> = (0..model.input_dim())
        .map(|_| rng.uniform(-2.0, 2.0))
        .collect();
    (model, w, x)
}

#[test]
fn incremental_step_matches_dense_oracle() {
    let mut rng = SeededRng::new(2024);
    let cfg = unit_step_config();
    let mut verified = 0usize;
    while verified < 400 {
        let (model, w0, x) = random_case(&mut rng, verified);
        let y = rng.uniform(-2.0, 2.0);
        let ev = model.eval_with_gradient(&w0, &x, y).unwrap();
        if ev.grad_sq_norm < 1e-12 {
            continue; // dead network for this input; the subproblem is undefined
        }
        let mut w = w0.clone();
        let mut st = OptimState::new();
        step(&cfg, &mut st, &mut w, &ev).unwrap();

        // Oracle consumes the residual gradient ∇r = -∇f.
        let grad_r = ev.gradient.scaled(-1.0);
        let dw_oracle = solve_regularized_gn_oracle(ev.residual, &grad_r).unwrap();
        for i in 0..w.len() {
            let incremental = w.values()[i] - w0.values()[i];
            assert!(
                (incremental - dw_oracle[i]).abs() <= 1e-9,
                "coordinate {i}: incremental {incremental} vs oracle {}",
                dw_oracle[i]
            );
        }
        verified += 1;
    }
}

#[test]
fn unit_step_zeroes_the_linearized_residual() {
    // r + ∇rᵀΔw = r - ∇fᵀΔw must vanish after an α=1, ε=0 step.
    let mut rng = SeededRng::new(77);
    let cfg = unit_step_config();
    let mut verified = 0usize;
    while verified < 400 {
        let (model, w0, x) = random_case(&mut rng, verified);
        let y = rng.uniform(-3.0, 3.0);
        let ev = model.eval_with_gradient(&w0, &x, y).unwrap();
        if ev.grad_sq_norm < 1e-12 {
            continue;
        }
        let mut w = w0.clone();
        let mut st = OptimState::new();
        step(&cfg, &mut st, &mut w, &ev).unwrap();
        let dw = DenseVector::from_raw(
            w.values()
                .as_slice()
                .iter()
                .zip(w0.values().as_slice())
                .map(|(a, b)| a - b)
                .collect(),
        );
        let linearized = ev.residual - ev.gradient.dot(&dw);
        assert!(
            linearized.abs() <= 1e-10 * ev.residual.abs().max(1.0),
            "linearized residual {linearized}"
        );
        verified += 1;
    }
}
