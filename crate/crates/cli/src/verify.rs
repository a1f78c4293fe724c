//! The `verify` subcommand: an oracle and property battery over the whole
//! library, one pass/fail line per invariant. The checks are parameterized
//! by case count so the acceptance suite can run them at full size with its
//! own timing bounds.

use ignd::lqr::{
    feature_dim, m_to_weights, policy_evaluation, quadratic_features, weights_to_m, EvalConfig,
    LqrSystem, PolicyGain, QuadraticQ, TdRule,
};
use ignd::model::{FlatWeights, Model};
use ignd::numkit::{solve_regularized_gn_oracle, DenseMatrix, DenseVector, SeededRng};
use ignd::optim::{step, LrSchedule, OptimConfig, OptimState, Rule};
use ignd::supervised::{synthetic_regression, Preprocessor, SyntheticSpec};

fn fail(msg: String) -> Result<(), String> {
    Err(msg)
}

/// Random incremental problem with 2..=30 parameters, alternating linear
/// and small-MLP models; mirrors the shape distribution of the equivalence
/// suite.
fn random_case(rng: &mut SeededRng, case: usize) -> (Model, FlatWeights, Vec<f64>) {
    let model = if case % 2 == 0 {
        Model::linear(2 + rng.index(29))
    } else {
        let input_dim = 1 + rng.index(4);
        let hidden = 1 + rng.index(3);
        Model::mlp_relu(input_dim, &[hidden]).unwrap()
    };
    let mut w = match &model {
        Model::Linear { input_dim } => {
            let values: Vec<f64> = (0..*input_dim).map(|_| rng.uniform(-2.0, 2.0)).collect();
            FlatWeights::new(DenseVector::from_raw(values), model.layout()).unwrap()
        }
        Model::Mlp { .. } => model.init(rng),
    };
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

fn unit_step_config() -> OptimConfig {
    OptimConfig {
        epsilon: 0.0,
        ..OptimConfig::new(Rule::Ignd, LrSchedule::Constant { alpha0: 1.0 })
    }
}

/// The incremental update at α=1, ε=0 must equal the dense regularized
/// Gauss-Newton solve coordinate-wise.
pub fn check_gn_equivalence(cases: usize, tol: f64) -> Result<(), String> {
    let mut rng = SeededRng::new(2024);
    let cfg = unit_step_config();
    let mut verified = 0usize;
    while verified < cases {
        let (model, w0, x) = random_case(&mut rng, verified);
        let y = rng.uniform(-2.0, 2.0);
        let ev = model
            .eval_with_gradient(&w0, &x, y)
            .map_err(|e| e.to_string())?;
        if ev.grad_sq_norm < 1e-12 {
            continue;
        }
        let mut w = w0.clone();
        let mut st = OptimState::new();
        step(&cfg, &mut st, &mut w, &ev).map_err(|e| e.to_string())?;
        let dw = solve_regularized_gn_oracle(ev.residual, &ev.gradient.scaled(-1.0))
            .map_err(|e| e.to_string())?;
        for i in 0..w.len() {
            let inc = w.values()[i] - w0.values()[i];
            if (inc - dw[i]).abs() > tol {
                return fail(format!(
                    "case {verified} coord {i}: incremental {inc} vs dense solve {}",
                    dw[i]
                ));
            }
        }
        verified += 1;
    }
    Ok(())
}

/// r + ∇rᵀΔw must vanish after every unit Gauss-Newton step.
pub fn check_linearized_residual(cases: usize, tol: f64) -> Result<(), String> {
    let mut rng = SeededRng::new(4077);
    let cfg = unit_step_config();
    let mut verified = 0usize;
    while verified < cases {
        let (model, w0, x) = random_case(&mut rng, verified);
        let y = rng.uniform(-2.0, 2.0);
        let ev = model
            .eval_with_gradient(&w0, &x, y)
            .map_err(|e| e.to_string())?;
        if ev.grad_sq_norm < 1e-12 {
            continue;
        }
        let mut w = w0.clone();
        let mut st = OptimState::new();
        step(&cfg, &mut st, &mut w, &ev).map_err(|e| e.to_string())?;
        let mut grad_dot_dw = 0.0;
        for i in 0..w.len() {
            grad_dot_dw += ev.gradient[i] * (w.values()[i] - w0.values()[i]);
        }
        // ∇r = −∇f, so the linearized residual is r − ∇fᵀΔw.
        let linearized = ev.residual - grad_dot_dw;
        if linearized.abs() > tol {
            return fail(format!(
                "case {verified}: linearized residual {linearized:e}"
            ));
        }
        verified += 1;
    }
    Ok(())
}

/// Reverse-mode MLP gradients vs central differences, ReLU kinks excluded.
pub fn check_mlp_gradients(cases: usize, rel_tol: f64) -> Result<(), String> {
    let mut rng = SeededRng::new(33);
    let mut checked = 0usize;
    for case in 0..cases {
        let hidden: Vec<usize> = match case % 3 {
            0 => vec![3],
            1 => vec![4, 3],
            _ => vec![2, 2, 2],
        };
        let input_dim = 2 + case % 3;
        let model = Model::mlp_relu(input_dim, &hidden).map_err(|e| e.to_string())?;
        let w = model.init(&mut rng);
        let x: Vec<f64> = (0..input_dim).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let ev = model
            .eval_with_gradient(&w, &x, 0.0)
            .map_err(|e| e.to_string())?;
        let h = 1e-6;
        for i in 0..w.len() {
            let mut plus = w.clone();
            plus.values_mut()[i] += h;
            let mut minus = w.clone();
            minus.values_mut()[i] -= h;
            let gap = model
                .relu_kink_gap(&w, &x)
                .map_err(|e| e.to_string())?
                .min(model.relu_kink_gap(&plus, &x).map_err(|e| e.to_string())?)
                .min(model.relu_kink_gap(&minus, &x).map_err(|e| e.to_string())?);
            if gap <= 1e-7 {
                continue;
            }
            let fd = (model.value(&plus, &x).map_err(|e| e.to_string())?
                - model.value(&minus, &x).map_err(|e| e.to_string())?)
                / (2.0 * h);
            let ad = ev.gradient[i];
            if (fd - ad).abs() > rel_tol * fd.abs().max(ad.abs()).max(1.0) {
                return fail(format!("case {case} coord {i}: fd {fd} vs reverse-mode {ad}"));
            }
            checked += 1;
        }
    }
    if checked < cases {
        return fail(format!(
            "kink exclusion left only {checked} checked coordinates"
        ));
    }
    Ok(())
}

/// On a one-hot design, per-feature rescaling must leave the Gauss-Newton
/// run's predictions unchanged.
pub fn check_one_hot_rescaling() -> Result<(), String> {
    let dim = 12;
    let steps = 400;
    let root = SeededRng::new(314);
    let mut scale_rng = root.split(0);
    let phi = DenseVector::from_raw(
        (0..dim)
            .map(|_| loop {
                let k = scale_rng.int_range(-10_000, 10_000);
                if k != 0 {
                    break k as f64;
                }
            })
            .collect(),
    );
    let mut stream_rng = root.split(1);
    let stream: Vec<(usize, f64)> = (0..steps)
        .map(|_| (stream_rng.index(dim), stream_rng.uniform(-2.0, 2.0)))
        .collect();
    let cfg = unit_step_config();
    let run = |scaled: bool| -> Result<Vec<f64>, String> {
        let model = Model::linear(dim);
        let mut w = FlatWeights::zeros(model.layout());
        let mut st = OptimState::new();
        let mut preds = Vec::with_capacity(steps);
        for &(j, y) in &stream {
            let x = ignd::model::tabular_features(j, 0, dim, 1, scaled.then_some(&phi))
                .map_err(|e| e.to_string())?;
            let ev = model
                .eval_with_gradient(&w, x.as_slice(), y)
                .map_err(|e| e.to_string())?;
            step(&cfg, &mut st, &mut w, &ev).map_err(|e| e.to_string())?;
            preds.push(model.value(&w, x.as_slice()).map_err(|e| e.to_string())?);
        }
        Ok(preds)
    };
    let plain = run(false)?;
    let scaled = run(true)?;
    for (t, (a, b)) in plain.iter().zip(&scaled).enumerate() {
        if (a - b).abs() > 1e-9 {
            return fail(format!("step {t}: prediction {a} vs {b} under rescaling"));
        }
    }
    Ok(())
}

/// Inverse-time schedule: Σα diverges (≥ 13 by 10⁶ terms) while Σα²
/// converges to π²/6 (within 1e-6 at 10⁶ terms). Kahan-compensated sums.
pub fn check_robbins_monro(terms: u64) -> Result<(), String> {
    let sched = LrSchedule::InverseTime { alpha0: 1.0, b: 1.0 };
    let mut sum = 0.0f64;
    let mut sum_c = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut sum_sq_c = 0.0f64;
    let kahan = |acc: &mut f64, comp: &mut f64, v: f64| {
        let y = v - *comp;
        let t = *acc + y;
        *comp = (t - *acc) - y;
        *acc = t;
    };
    for t in 0..terms {
        let a = sched.alpha(t);
        kahan(&mut sum, &mut sum_c, a);
        kahan(&mut sum_sq, &mut sum_sq_c, a * a);
    }
    if sum < 13.0 {
        return fail(format!("Σα = {sum} after {terms} terms; expected ≥ 13"));
    }
    let limit = std::f64::consts::PI * std::f64::consts::PI / 6.0;
    if (limit - sum_sq).abs() > 1e-6 {
        return fail(format!(
            "Σα² = {sum_sq}, limit {limit}, gap {:e}",
            limit - sum_sq
        ));
    }
    Ok(())
}

/// Same seed ⇒ same stream; different split labels ⇒ different streams;
/// a Bernoulli draw consumes exactly one uniform.
pub fn check_rng_streams() -> Result<(), String> {
    let mut a = SeededRng::new(99);
    let mut b = SeededRng::new(99);
    for i in 0..1000 {
        let (x, y) = (a.unit(), b.unit());
        if x != y {
            return fail(format!("same-seed streams diverged at draw {i}"));
        }
    }
    let mut s0 = SeededRng::new(5).split(0);
    let mut s1 = SeededRng::new(5).split(1);
    let same = (0..32).all(|_| s0.unit() == s1.unit());
    if same {
        return fail("split(0) and split(1) produced identical streams".into());
    }
    let mut c = SeededRng::new(7);
    let mut d = SeededRng::new(7);
    c.chance(0.3);
    d.unit();
    if c.unit() != d.unit() {
        return fail("chance(p) does not consume exactly one uniform".into());
    }
    Ok(())
}

/// Fitting the preprocessor must never read the test rows.
pub fn check_preprocessor_train_only() -> Result<(), String> {
    let ds = synthetic_regression(&SyntheticSpec::default());
    let split = ignd::supervised::SplitSpec::default();
    let (train_idx, test_idx) = split.split(ds.len()).map_err(|e| e.to_string())?;
    let fitted = Preprocessor::fit(&ds, &train_idx).map_err(|e| e.to_string())?;
    let mut perturbed = ds.clone();
    for &i in &test_idx {
        for cell in &mut perturbed.rows[i] {
            if let ignd::supervised::Cell::Num(v) = cell {
                *v += 1e6;
            }
        }
    }
    let refitted = Preprocessor::fit(&perturbed, &train_idx).map_err(|e| e.to_string())?;
    let probe = &ds.rows[test_idx[0]];
    let (a, _) = fitted.transform(probe);
    let (b, _) = refitted.transform(probe);
    for i in 0..a.len() {
        if a[i] != b[i] {
            return fail(format!(
                "transform changed after perturbing test rows (coord {i})"
            ));
        }
    }
    Ok(())
}

/// weights ↔ (M, c) is a bijection and wᵀφ(s,a) equals the quadratic form.
pub fn check_lqr_bijection(cases: usize) -> Result<(), String> {
    let mut rng = SeededRng::new(61);
    for case in 0..cases {
        let d = 2 + rng.index(4);
        let mut m = DenseMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let v = rng.uniform(-2.0, 2.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let q = QuadraticQ {
            m: m.clone(),
            c: rng.uniform(-1.0, 1.0),
        };
        let w = m_to_weights(&q).map_err(|e| e.to_string())?;
        let back = weights_to_m(&w, d).map_err(|e| e.to_string())?;
        if back.m.sub(&m).max_abs() > 1e-12 || (back.c - q.c).abs() > 1e-12 {
            return fail(format!("case {case}: round trip drifted"));
        }
        let n_a = 1 + rng.index(d - 1);
        let n_s = d - n_a;
        let s: Vec<f64> = (0..n_s).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let a: Vec<f64> = (0..n_a).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let x = quadratic_features(&s, &a);
        if x.len() != feature_dim(n_s, n_a) {
            return fail(format!("case {case}: feature length {}", x.len()));
        }
        let lin = w.dot(&x);
        let z: Vec<f64> = s.iter().chain(a.iter()).copied().collect();
        let mut form = q.c;
        for i in 0..d {
            for j in 0..d {
                form += z[i] * m[(i, j)] * z[j];
            }
        }
        if (lin - form).abs() > 1e-9 {
            return fail(format!("case {case}: wᵀφ = {lin} vs zᵀMz+c = {form}"));
        }
    }
    Ok(())
}

/// On a noiseless system the TD fixed point must reproduce the closed-form
/// policy Q-matrix from the Lyapunov recursion.
pub fn check_lqr_td_fixed_point() -> Result<(), String> {
    let base = LqrSystem::two_state();
    let sys = LqrSystem::new(
        base.a.clone(),
        base.b.clone(),
        base.q.clone(),
        base.r.clone(),
        DenseMatrix::zeros(2, 2),
        base.gamma,
    )
    .map_err(|e| e.to_string())?;
    let k = DenseMatrix::from_rows(&[vec![-0.1, -0.3]]).map_err(|e| e.to_string())?;
    let a_cl = sys.a.add(&sys.b.matmul(&k));
    let cost = sys.q.add(&k.transpose().matmul(&sys.r).matmul(&k));
    let mut p = DenseMatrix::zeros(2, 2);
    for _ in 0..200_000 {
        let next = cost.add(&a_cl.transpose().matmul(&p).matmul(&a_cl).scaled(sys.gamma));
        let gap = next.sub(&p).max_abs();
        p = next;
        if gap < 1e-15 {
            break;
        }
    }
    let m_aa_true = sys
        .r
        .add(&sys.b.transpose().matmul(&p).matmul(&sys.b).scaled(sys.gamma));

    let steps = 60_000;
    let cfg = EvalConfig {
        rule: TdRule::Igndq,
        alpha: LrSchedule::Geometric {
            alpha0: 1.0,
            alpha_end: 1e-3,
            horizon: steps,
        },
        epsilon: 1e-8,
        exploration_sd: 0.9,
        tol: 0.0,
        max_steps: steps,
        schedule_offset: 0,
        feature_scale: None,
        initial_state: None,
        record_q: false,
    };
    let w0 = DenseVector::zeros(feature_dim(2, 1));
    let mut rng = SeededRng::new(11);
    let out = policy_evaluation(&sys, &PolicyGain { k }, &w0, &cfg, &mut rng)
        .map_err(|e| e.to_string())?;
    let fitted = weights_to_m(&out.weights, 3).map_err(|e| e.to_string())?;
    let m_ss_true = sys
        .q
        .add(&sys.a.transpose().matmul(&p).matmul(&sys.a).scaled(sys.gamma));
    let m_sa_true = sys.a.transpose().matmul(&p).matmul(&sys.b).scaled(sys.gamma);
    let checks = [
        ("state-state", fitted.m_ss(2).sub(&m_ss_true).max_abs()),
        ("state-action", fitted.m_sa(2, 1).sub(&m_sa_true).max_abs()),
        ("action-action", fitted.m_aa(2, 1).sub(&m_aa_true).max_abs()),
        ("constant", fitted.c.abs()),
    ];
    for (name, gap) in checks {
        if gap > 1e-6 {
            return fail(format!("{name} block off by {gap:e}"));
        }
    }
    Ok(())
}

/// The Riccati recursion must agree with the frozen value-iteration gain
/// for the scalar benchmark (a=0.9, b=1, q=−1, r=−1, γ=0.9).
pub fn check_scalar_riccati() -> Result<(), String> {
    let k_star = -0.511_055_526_511_948_74;
    let sys = LqrSystem::new(
        DenseMatrix::from_rows(&[vec![0.9]]).unwrap(),
        DenseMatrix::from_rows(&[vec![1.0]]).unwrap(),
        DenseMatrix::from_rows(&[vec![-1.0]]).unwrap(),
        DenseMatrix::from_rows(&[vec![-1.0]]).unwrap(),
        DenseMatrix::from_rows(&[vec![0.01]]).unwrap(),
        0.9,
    )
    .map_err(|e| e.to_string())?;
    let solved = sys.riccati_optimum().map_err(|e| e.to_string())?;
    let gap = (solved.k[(0, 0)] - k_star).abs();
    if gap > 1e-10 {
        return fail(format!("riccati gain off the frozen oracle by {gap:e}"));
    }
    Ok(())
}

pub struct Check {
    pub name: &'static str,
    pub run: fn() -> Result<(), String>,
}

pub fn all_checks() -> Vec<Check> {
    vec![
        Check {
            name: "gauss-newton step equals dense regularized solve (1000 cases, 1e-9)",
            run: || check_gn_equivalence(1000, 1e-9),
        },
        Check {
            name: "unit step zeroes the linearized residual (1000 cases, 1e-10)",
            run: || check_linearized_residual(1000, 1e-10),
        },
        Check {
            name: "mlp reverse-mode gradients match central differences (200 cases, 1e-5)",
            run: || check_mlp_gradients(200, 1e-5),
        },
        Check {
            name: "one-hot feature rescaling leaves gauss-newton predictions unchanged",
            run: check_one_hot_rescaling,
        },
        Check {
            name: "inverse-time schedule: Σα diverges, Σα² reaches π²/6",
            run: || check_robbins_monro(1_000_000),
        },
        Check {
            name: "seeded rng streams are reproducible and split-independent",
            run: check_rng_streams,
        },
        Check {
            name: "preprocessor fits on the train split only",
            run: check_preprocessor_train_only,
        },
        Check {
            name: "lqr weights ↔ quadratic-form matrix is a bijection",
            run: || check_lqr_bijection(100),
        },
        Check {
            name: "lqr td fixed point matches the lyapunov policy value",
            run: check_lqr_td_fixed_point,
        },
        Check {
            name: "scalar riccati gain matches the frozen value-iteration oracle",
            run: check_scalar_riccati,
        },
    ]
}

/// Runs every check, prints one line each, returns the number of failures.
pub fn run_battery() -> usize {
    let mut failures = 0;
    for check in all_checks() {
        match (check.run)() {
            Ok(()) => println!("pass: {}", check.name),
            Err(msg) => {
                failures += 1;
                println!("FAIL: {} — {msg}", check.name);
            }
        }
    }
    failures
}
