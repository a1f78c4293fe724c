//! Incremental update rules over flat weights. All of them consume one
//! [`GradEval`] per step and move along the prediction gradient; they differ
//! only in the scalar scale ξ applied to it:
//!
//! * `sgd`        ξ = 1
//! * `ignd`       ξ = 1 / (‖∇f‖² + ε)        (Gauss-Newton scale)
//! * `cgd`        ξ = min(1/η, 1/‖∇L‖)        (clipped)
//! * `ngd`        ξ = 1 / (‖∇L‖ + β)          (normalized)
//! * `adam`       moment-averaged loss gradient
//! * `ignd_adam`  ξ·∇L fed into the same moment accumulator (scaled before
//!   accumulation, so the Gauss-Newton geometry reaches the moments)
//!
//! where ∇L = −residual·∇f is the squared-loss gradient at the sample.

use thiserror::Error;

use crate::model::{FlatWeights, GradEval};
use crate::numkit::DenseVector;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("degenerate scale: denominator {denominator} is not positive")]
    DegenerateScale { denominator: f64 },
    #[error("bad optimizer config: {0}")]
    BadConfig(String),
    #[error("gradient length {got} does not match weight length {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Sgd,
    Ignd,
    Cgd,
    Ngd,
    Adam,
    IgndAdam,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Sgd => "sgd",
            Rule::Ignd => "ignd",
            Rule::Cgd => "cgd",
            Rule::Ngd => "ngd",
            Rule::Adam => "adam",
            Rule::IgndAdam => "ignd_adam",
        }
    }
}

impl std::str::FromStr for Rule {
    type Err = OptimError;
    fn from_str(s: &str) -> Result<Self, OptimError> {
        match s {
            "sgd" => Ok(Rule::Sgd),
            "ignd" => Ok(Rule::Ignd),
            "cgd" => Ok(Rule::Cgd),
            "ngd" => Ok(Rule::Ngd),
            "adam" => Ok(Rule::Adam),
            "ignd_adam" => Ok(Rule::IgndAdam),
            other => Err(OptimError::BadConfig(format!(
                "unknown rule '{other}' (expected sgd|ignd|cgd|ngd|adam|ignd_adam)"
            ))),
        }
    }
}

/// Step-size schedule α_t, indexed by the number of steps already taken.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant { alpha0: f64 },
    /// α_t = alpha0 / (1 + t / b); square-summable but not summable, the
    /// classic stochastic-approximation choice.
    InverseTime { alpha0: f64, b: f64 },
    /// Log-linear decay from `alpha0` at t=0 to `alpha_end` at t=horizon,
    /// flat afterwards.
    Geometric {
        alpha0: f64,
        alpha_end: f64,
        horizon: u64,
    },
}

impl LrSchedule {
    pub fn alpha(&self, t: u64) -> f64 {
        match *self {
            LrSchedule::Constant { alpha0 } => alpha0,
            LrSchedule::InverseTime { alpha0, b } => alpha0 / (1.0 + t as f64 / b),
            LrSchedule::Geometric {
                alpha0,
                alpha_end,
                horizon,
            } => {
                let progress = (t as f64 / horizon.max(1) as f64).min(1.0);
                alpha0 * (alpha_end / alpha0).powf(progress)
            }
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let ok = match *self {
            LrSchedule::Constant { alpha0 } => alpha0 > 0.0,
            LrSchedule::InverseTime { alpha0, b } => alpha0 > 0.0 && b > 0.0,
            LrSchedule::Geometric {
                alpha0,
                alpha_end,
                horizon,
            } => alpha0 > 0.0 && alpha_end > 0.0 && horizon > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(OptimError::BadConfig(
                "schedule parameters must be positive".into(),
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub rule: Rule,
    pub schedule: LrSchedule,
    /// Levenberg-Marquardt offset ε in the ignd scale; keeps ξ ≤ 1/ε.
    pub epsilon: f64,
    /// CGD cap η; ξ never exceeds 1/η.
    pub eta: f64,
    /// NGD offset β added to the loss-gradient norm.
    pub ngd_beta: f64,
    pub adam: AdamParams,
}

impl OptimConfig {
    pub fn new(rule: Rule, schedule: LrSchedule) -> Self {
        Self {
            rule,
            schedule,
            epsilon: 1e-8,
            eta: 1.0,
            ngd_beta: 1e-8,
            adam: AdamParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        self.schedule.validate()?;
        if self.epsilon < 0.0 {
            return Err(OptimError::BadConfig("epsilon must be >= 0".into()));
        }
        if self.rule == Rule::Cgd && !(self.eta > 0.0) {
            return Err(OptimError::BadConfig("cgd requires eta > 0".into()));
        }
        if self.ngd_beta < 0.0 {
            return Err(OptimError::BadConfig("ngd beta must be >= 0".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(OptimError::BadConfig(
                "adam requires beta1, beta2 in [0,1) and eps > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Mutable per-run optimizer state. `max_grad_sq_seen` monitors the bounded-
/// gradient assumption the convergence analysis leans on.
#[derive(Clone, Debug, Default)]
pub struct OptimState {
    pub t: u64,
    pub max_grad_sq_seen: f64,
    moment1: Option<DenseVector>,
    moment2: Option<DenseVector>,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Per-step diagnostics; `xi` is the scalar actually applied this step
/// (1 for sgd/adam).
#[derive(Clone, Copy, Debug)]
pub struct StepDiagnostics {
    pub alpha: f64,
    pub xi: f64,
    pub loss_grad_norm: f64,
    pub effective_step_norm: f64,
}

/// Gauss-Newton scalar ξ = 1 / (‖∇f‖² + ε). Errors when the denominator is
/// not strictly positive (zero gradient with ε = 0).
pub fn ignd_scale(grad_sq_norm: f64, epsilon: f64) -> Result<f64, OptimError> {
    let denominator = grad_sq_norm + epsilon;
    if denominator > 0.0 {
        Ok(1.0 / denominator)
    } else {
        Err(OptimError::DegenerateScale { denominator })
    }
}

/// Apply one incremental update in place and advance the state. The weight
/// move is `Δw = α·ξ·residual·∇f` for the scaled-gradient family, or the
/// bias-corrected Adam step on (optionally ξ-scaled) loss gradients.
pub fn step(
    cfg: &OptimConfig,
    state: &mut OptimState,
    w: &mut FlatWeights,
    ev: &GradEval,
) -> Result<StepDiagnostics, OptimError> {
    cfg.validate()?;
    if ev.gradient.len() != w.len() {
        return Err(OptimError::DimensionMismatch {
            expected: w.len(),
            got: ev.gradient.len(),
        });
    }
    let alpha = cfg.schedule.alpha(state.t);
    state.max_grad_sq_seen = state.max_grad_sq_seen.max(ev.grad_sq_norm);
    let loss_grad_norm = ev.residual.abs() * ev.grad_sq_norm.sqrt();

    let (xi, step_norm) = match cfg.rule {
        Rule::Sgd | Rule::Ignd | Rule::Cgd | Rule::Ngd => {
            let xi = match cfg.rule {
                Rule::Sgd => 1.0,
                Rule::Ignd => ignd_scale(ev.grad_sq_norm, cfg.epsilon)?,
                Rule::Cgd => {
                    if loss_grad_norm > 0.0 {
                        (1.0 / cfg.eta).min(1.0 / loss_grad_norm)
                    } else {
                        1.0 / cfg.eta
                    }
                }
                Rule::Ngd => {
                    let denominator = loss_grad_norm + cfg.ngd_beta;
                    if denominator <= 0.0 {
                        return Err(OptimError::DegenerateScale { denominator });
                    }
                    1.0 / denominator
                }
                _ => unreachable!(),
            };
            let coeff = alpha * xi * ev.residual;
            w.values_mut().axpy(coeff, &ev.gradient);
            (xi, coeff.abs() * ev.grad_sq_norm.sqrt())
        }
        Rule::Adam | Rule::IgndAdam => {
            let xi = if cfg.rule == Rule::IgndAdam {
                ignd_scale(ev.grad_sq_norm, cfg.epsilon)?
            } else {
                1.0
            };
            let n = w.len();
            let m = state
                .moment1
                .get_or_insert_with(|| DenseVector::zeros(n));
            if m.len() != n {
                return Err(OptimError::DimensionMismatch {
                    expected: n,
                    got: m.len(),
                });
            }
            state
                .moment2
                .get_or_insert_with(|| DenseVector::zeros(n));
            let AdamParams { beta1, beta2, eps } = cfg.adam;
            let t = (state.t + 1) as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let mut step_sq = 0.0;
            {
                let m = state.moment1.as_mut().unwrap();
                let v = state.moment2.as_mut().unwrap();
                for i in 0..n {
                    // Loss gradient at the sample, optionally ξ-scaled first.
                    let g = -ev.residual * ev.gradient[i] * xi;
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    let delta = -alpha * m_hat / (v_hat.sqrt() + eps);
                    w.values_mut()[i] += delta;
                    step_sq += delta * delta;
                }
            }
            (xi, step_sq.sqrt())
        }
    };
    state.t += 1;
    Ok(StepDiagnostics {
        alpha,
        xi,
        loss_grad_norm,
        effective_step_norm: step_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;

    fn linear_eval(w: &FlatWeights, x: &[f64], y: f64) -> GradEval {
        Model::linear(x.len()).eval_with_gradient(w, x, y).unwrap()
    }

    fn fresh_linear(dim: usize) -> FlatWeights {
        FlatWeights::zeros(Model::linear(dim).layout())
    }

    #[test]
    fn ignd_scale_examples() {
        assert_eq!(ignd_scale(4.0, 1.0).unwrap(), 0.2);
        assert!(matches!(
            ignd_scale(0.0, 0.0),
            Err(OptimError::DegenerateScale { .. })
        ));
        // ε bounds the scale above by 1/ε.
        for gsq in [0.0, 0.5, 10.0, 1e12] {
            assert!(ignd_scale(gsq, 1e-3).unwrap() <= 1.0 / 1e-3 + 1e-9);
        }
    }

    #[test]
    fn ignd_interpolates_in_one_unit_step() {
        // w = 0, x = (1,2), y = 1, α = 1, ε = 0: ξ = 1/5, w' = (0.2, 0.4),
        // and the new prediction equals the target exactly.
        let model = Model::linear(2);
        let mut w = fresh_linear(2);
        let cfg = OptimConfig {
            epsilon: 0.0,
            ..OptimConfig::new(Rule::Ignd, LrSchedule::Constant { alpha0: 1.0 })
        };
        let mut st = OptimState::new();
        let ev = linear_eval(&w, &[1.0, 2.0], 1.0);
        let diag = step(&cfg, &mut st, &mut w, &ev).unwrap();
        assert!((diag.xi - 0.2).abs() < 1e-15);
        assert!((w.values()[0] - 0.2).abs() < 1e-15);
        assert!((w.values()[1] - 0.4).abs() < 1e-15);
        let pred = model.value(&w, &[1.0, 2.0]).unwrap();
        assert!((pred - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sgd_overshoots_where_ignd_interpolates() {
        let model = Model::linear(2);
        let mut w = fresh_linear(2);
        let cfg = OptimConfig::new(Rule::Sgd, LrSchedule::Constant { alpha0: 1.0 });
        let mut st = OptimState::new();
        let ev = linear_eval(&w, &[1.0, 2.0], 1.0);
        let diag = step(&cfg, &mut st, &mut w, &ev).unwrap();
        assert_eq!(diag.xi, 1.0);
        let pred = model.value(&w, &[1.0, 2.0]).unwrap();
        assert_eq!(pred, 5.0); // α r ‖x‖² = 5, far past the target of 1.
    }

    #[test]
    fn cgd_clips_and_ngd_normalizes() {
        // Loss-gradient norm 5 (w = 0, x = (3,4), y = 1 gives |r|·‖∇f‖ = 5).
        let mut w = fresh_linear(2);
        let ev = linear_eval(&w, &[3.0, 4.0], 1.0);
        assert_eq!(ev.grad_sq_norm, 25.0);

        let mut cfg = OptimConfig::new(Rule::Cgd, LrSchedule::Constant { alpha0: 1.0 });
        cfg.eta = 0.1;
        let mut st = OptimState::new();
        let diag = step(&cfg, &mut st, &mut w.clone(), &ev).unwrap();
        assert!((diag.xi - 0.2).abs() < 1e-15); // min(10, 1/5)

        // Tiny gradient: the η cap binds instead.
        let tiny = linear_eval(&w, &[0.003, 0.004], 1.0);
        let diag = step(&cfg, &mut st, &mut w.clone(), &tiny).unwrap();
        assert!((diag.xi - 10.0).abs() < 1e-12);

        let mut cfg = OptimConfig::new(Rule::Ngd, LrSchedule::Constant { alpha0: 1.0 });
        cfg.ngd_beta = 1.0;
        let mut st = OptimState::new();
        let diag = step(&cfg, &mut st, &mut w, &ev).unwrap();
        assert!((diag.xi - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_unit_step() {
        // After one step m̂ = g, v̂ = g², so Δw = -α g / (|g| + eps·√bc2...)
        // ≈ -α sign(g) up to eps.
        let mut w = fresh_linear(1);
        let cfg = OptimConfig::new(Rule::Adam, LrSchedule::Constant { alpha0: 0.1 });
        let mut st = OptimState::new();
        let ev = linear_eval(&w, &[2.0], 1.0); // loss grad = -r x = -2
        step(&cfg, &mut st, &mut w, &ev).unwrap();
        assert!((w.values()[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn adam_and_ignd_adam_coincide_when_xi_is_one() {
        // One-hot inputs make ‖∇f‖² = 1; with ε = 0 the ignd scale is exactly
        // 1 and the two rules must produce bit-identical iterates.
        let dim = 4;
        let mut w_a = fresh_linear(dim);
        let mut w_b = fresh_linear(dim);
        let adam = OptimConfig::new(Rule::Adam, LrSchedule::Constant { alpha0: 0.05 });
        let ignd_adam = OptimConfig {
            epsilon: 0.0,
            ..OptimConfig::new(Rule::IgndAdam, LrSchedule::Constant { alpha0: 0.05 })
        };
        let mut st_a = OptimState::new();
        let mut st_b = OptimState::new();
        let mut rng = crate::numkit::SeededRng::new(4);
        for t in 0..100 {
            let hot = (t as usize + rng.index(dim)) % dim;
            let mut x = vec![0.0; dim];
            x[hot] = 1.0;
            let y = rng.uniform(-1.0, 1.0);
            let ev_a = linear_eval(&w_a, &x, y);
            let ev_b = linear_eval(&w_b, &x, y);
            let da = step(&adam, &mut st_a, &mut w_a, &ev_a).unwrap();
            let db = step(&ignd_adam, &mut st_b, &mut w_b, &ev_b).unwrap();
            assert_eq!(db.xi, 1.0);
            assert_eq!(da.xi, 1.0);
        }
        assert_eq!(w_a.values().as_slice(), w_b.values().as_slice());
    }

    #[test]
    fn xi_shrinks_monotonically_in_epsilon() {
        let gsq = 3.7;
        let mut last = f64::INFINITY;
        for eps in [0.0, 1e-8, 1e-4, 1e-1, 1.0, 10.0] {
            let xi = ignd_scale(gsq, eps).unwrap();
            assert!(xi < last);
            last = xi;
        }
    }

    #[test]
    fn schedule_examples_and_validation() {
        let s = LrSchedule::InverseTime {
            alpha0: 1.0,
            b: 1.0,
        };
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.alpha(3), 0.25);
        let c = LrSchedule::Constant { alpha0: 0.3 };
        assert_eq!(c.alpha(1_000_000), 0.3);
        assert!(LrSchedule::Constant { alpha0: 0.0 }.validate().is_err());
        assert!(LrSchedule::InverseTime {
            alpha0: 1.0,
            b: 0.0
        }
        .validate()
        .is_err());
        let g = LrSchedule::Geometric {
            alpha0: 1.0,
            alpha_end: 0.001,
            horizon: 1000,
        };
        assert_eq!(g.alpha(0), 1.0);
        assert!((g.alpha(500) - (0.001f64).sqrt()).abs() < 1e-15);
        assert!((g.alpha(1000) - 0.001).abs() < 1e-15);
        assert_eq!(g.alpha(5000), g.alpha(1000)); // flat past the horizon
        assert!(LrSchedule::Geometric {
            alpha0: 1.0,
            alpha_end: 0.0,
            horizon: 10
        }
        .validate()
        .is_err());
    }

    #[test]
    fn inverse_time_partial_sums_certify_robbins_monro() {
        // With alpha0 = b = 1, α_t = 1/(1+t): the 1e6-term partial sum of α
        // exceeds 13 (divergence trend) while Σα² approaches π²/6 to 1e-6.
        // Kahan compensation keeps the float summation error ~1 ulp.
        let s = LrSchedule::InverseTime {
            alpha0: 1.0,
            b: 1.0,
        };
        let (mut sum, mut sum_sq) = (0.0_f64, 0.0_f64);
        let (mut c1, mut c2) = (0.0_f64, 0.0_f64);
        // Ascending term magnitudes: iterate t downward.
        for t in (0..1_000_000u64).rev() {
            let a = s.alpha(t);
            let y = a - c1;
            let t1 = sum + y;
            c1 = (t1 - sum) - y;
            sum = t1;
            let y2 = a * a - c2;
            let t2 = sum_sq + y2;
            c2 = (t2 - sum_sq) - y2;
            sum_sq = t2;
        }
        assert!(sum >= 13.0, "partial sum {sum} below divergence bound");
        let basel = std::f64::consts::PI * std::f64::consts::PI / 6.0;
        assert!(
            (basel - sum_sq).abs() <= 1e-6,
            "sum of squares {sum_sq} not within 1e-6 of {basel}"
        );
    }

    #[test]
    fn state_monitors_max_grad_sq() {
        let mut w = fresh_linear(2);
        let cfg = OptimConfig::new(Rule::Sgd, LrSchedule::Constant { alpha0: 0.1 });
        let mut st = OptimState::new();
        for x in [[1.0, 0.0], [3.0, 4.0], [0.5, 0.5]] {
            let ev = linear_eval(&w, &x, 0.0);
            step(&cfg, &mut st, &mut w, &ev).unwrap();
        }
        assert_eq!(st.max_grad_sq_seen, 25.0);
        assert_eq!(st.t, 3);
    }

    #[test]
    fn config_validation_errors() {
        let mut cfg = OptimConfig::new(Rule::Cgd, LrSchedule::Constant { alpha0: 1.0 });
        cfg.eta = 0.0;
        let mut st = OptimState::new();
        let mut w = fresh_linear(1);
        let ev = linear_eval(&w, &[1.0], 1.0);
        assert!(matches!(
            step(&cfg, &mut st, &mut w, &ev),
            Err(OptimError::BadConfig(_))
        ));
    }
}
