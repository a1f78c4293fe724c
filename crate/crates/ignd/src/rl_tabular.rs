//! 4×4 gridworld ("frozen lake") and tabular Q-learning on the linear
//! one-hot model, with optional per-feature scaling — the setting where the
//! Gauss-Newton scale makes the learner exactly immune to feature rescaling
//! while the plain TD update is destroyed by it.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{tabular_features, FlatWeights, Model, ModelError};
use crate::numkit::{DenseVector, SeededRng};
use crate::optim::{step, OptimConfig, OptimError, OptimState};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("cannot step from terminal state {state}")]
    SteppedTerminal { state: usize },
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Grid actions, indexed 0..4.
pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;
pub const N_ACTIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

/// Square gridworld with absorbing holes and a single rewarding goal.
/// Cells index row-major from the top-left; moving off the grid leaves the
/// agent in place. Episodes end on goal, hole, or `step_limit` steps
/// (enforced by the training loop).
#[derive(Clone, Debug)]
pub struct GridWorld {
    pub size: usize,
    pub start: usize,
    pub goal: usize,
    pub holes: BTreeSet<usize>,
    pub step_limit: u64,
    pub slippery: bool,
}

impl GridWorld {
    /// The standard 4×4 lake: start top-left, goal bottom-right, four holes.
    pub fn frozen_lake(slippery: bool) -> Self {
        let holes: BTreeSet<usize> = [5, 7, 11, 12].into_iter().collect();
        let gw = Self {
            size: 4,
            start: 0,
            goal: 15,
            holes,
            step_limit: 100,
            slippery,
        };
        debug_assert!(!gw.holes.contains(&gw.start) && !gw.holes.contains(&gw.goal));
        gw
    }

    pub fn n_states(&self) -> usize {
        self.size * self.size
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        state == self.goal || self.holes.contains(&state)
    }

    fn moved(&self, state: usize, action: usize) -> usize {
        let (row, col) = (state / self.size, state % self.size);
        let (row, col) = match action {
            LEFT => (row, col.saturating_sub(1)),
            DOWN => ((row + 1).min(self.size - 1), col),
            RIGHT => (row, (col + 1).min(self.size - 1)),
            UP => (row.saturating_sub(1), col),
            _ => (row, col),
        };
        row * self.size + col
    }

    /// One environment transition. When slippery, the executed move is the
    /// intended direction or either perpendicular, each with probability 1/3.
    pub fn step(
        &self,
        state: usize,
        action: usize,
        rng: &mut SeededRng,
    ) -> Result<Transition, RlError> {
        if self.is_terminal(state) {
            return Err(RlError::SteppedTerminal { state });
        }
        if action >= N_ACTIONS || state >= self.n_states() {
            return Err(RlError::BadConfig(format!(
                "state {state} / action {action} out of range"
            )));
        }
        let executed = if self.slippery {
            let candidates = [(action + 3) % 4, action, (action + 1) % 4];
            candidates[rng.index(3)]
        } else {
            action
        };
        let next_state = self.moved(state, executed);
        let reward = if next_state == self.goal { 1.0 } else { 0.0 };
        Ok(Transition {
            state,
            action,
            reward,
            next_state,
            terminal: self.is_terminal(next_state),
        })
    }
}

/// Exploration-rate schedule over the global step budget.
#[derive(Clone, Copy, Debug)]
pub enum EpsilonSchedule {
    Constant(f64),
    /// Linear interpolation from `start` to `end` over the first
    /// `fraction` of the step budget, then flat at `end`.
    Linear { start: f64, end: f64, fraction: f64 },
    /// Flat at `start` for the first `hold_fraction` of the budget, then
    /// linear down to `end` by the end of the budget. Useful when the
    /// environment's rewards are sparse enough that annealing must not begin
    /// before the first reward has plausibly been found.
    HoldThenLinear {
        start: f64,
        end: f64,
        hold_fraction: f64,
    },
}

impl EpsilonSchedule {
    pub fn at(&self, global_step: u64, step_budget: u64) -> f64 {
        match *self {
            EpsilonSchedule::Constant(e) => e,
            EpsilonSchedule::Linear {
                start,
                end,
                fraction,
            } => {
                let horizon = (step_budget as f64 * fraction).max(1.0);
                let t = (global_step as f64 / horizon).min(1.0);
                start + (end - start) * t
            }
            EpsilonSchedule::HoldThenLinear {
                start,
                end,
                hold_fraction,
            } => {
                let hold = step_budget as f64 * hold_fraction;
                let ramp = (step_budget as f64 - hold).max(1.0);
                let t = ((global_step as f64 - hold) / ramp).clamp(0.0, 1.0);
                start + (end - start) * t
            }
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let ok = |e: f64| (0.0..=1.0).contains(&e);
        let valid = match *self {
            EpsilonSchedule::Constant(e) => ok(e),
            EpsilonSchedule::Linear {
                start,
                end,
                fraction,
            } => ok(start) && ok(end) && fraction > 0.0 && fraction <= 1.0,
            EpsilonSchedule::HoldThenLinear {
                start,
                end,
                hold_fraction,
            } => ok(start) && ok(end) && (0.0..1.0).contains(&hold_fraction),
        };
        if valid {
            Ok(())
        } else {
            Err(RlError::BadConfig(
                "epsilon schedule values must lie in [0,1] with fraction in (0,1]".into(),
            ))
        }
    }
}

#[derive(Clone, Debug)]
pub struct TabularConfig {
    /// `Rule::Sgd` is classic Q-learning (ξ≡1); `Rule::Ignd` is the
    /// Gauss-Newton-scaled variant.
    pub optim: OptimConfig,
    pub gamma: f64,
    /// Total environment steps across all episodes.
    pub total_steps: u64,
    pub epsilon: EpsilonSchedule,
    /// Fixed per-feature scaling φ of the one-hot features; None means 1s.
    pub feature_scale: Option<DenseVector>,
    /// Record the per-step (state, action, predicted q) trace.
    pub record_steps: bool,
}

impl TabularConfig {
    pub fn new(optim: OptimConfig) -> Self {
        Self {
            optim,
            gamma: 0.95,
            total_steps: 5000,
            epsilon: EpsilonSchedule::Constant(0.1),
            feature_scale: None,
            record_steps: false,
        }
    }

    fn validate(&self, env: &GridWorld) -> Result<(), RlError> {
        self.optim.validate()?;
        self.epsilon.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(RlError::BadConfig(format!(
                "gamma {} outside [0,1]",
                self.gamma
            )));
        }
        if let Some(phi) = &self.feature_scale {
            let dim = env.n_states() * N_ACTIONS;
            if phi.len() != dim {
                return Err(RlError::BadConfig(format!(
                    "feature scale has {} entries, expected {dim}",
                    phi.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Undiscounted return (for this environment: 1 iff the goal was reached).
    pub ret: f64,
    pub steps: u64,
    pub xi_mean: f64,
    pub epsilon: f64,
    pub td_error_abs_mean: f64,
    pub max_abs_q: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct StepTrace {
    pub state: usize,
    pub action: usize,
    /// Predicted q(S,A) before the update.
    pub q_pred: f64,
}

#[derive(Clone, Debug)]
pub struct TabularOutcome {
    pub records: Vec<EpisodeRecord>,
    pub weights: FlatWeights,
    /// True if any post-update |q| exceeded R_max/(1−γ) plus slack — the
    /// bounded-value monitor; expected to fire when a badly scaled learner
    /// blows up.
    pub q_bound_exceeded: bool,
    pub steps_run: u64,
    pub step_trace: Vec<StepTrace>,
}

struct QTable<'a> {
    model: Model,
    env_states: usize,
    scale: Option<&'a DenseVector>,
}

impl<'a> QTable<'a> {
    fn features(&self, state: usize, action: usize) -> Result<DenseVector, RlError> {
        Ok(tabular_features(
            state,
            action,
            self.env_states,
            N_ACTIONS,
            self.scale,
        )?)
    }

    fn q(&self, w: &FlatWeights, state: usize, action: usize) -> Result<f64, RlError> {
        let x = self.features(state, action)?;
        Ok(self.model.value(w, x.as_slice())?)
    }

    /// Highest-valued action; ties resolve to the lowest index.
    fn greedy(&self, w: &FlatWeights, state: usize) -> Result<(usize, f64), RlError> {
        let mut best = (0usize, self.q(w, state, 0)?);
        for a in 1..N_ACTIONS {
            let q = self.q(w, state, a)?;
            if q > best.1 {
                best = (a, q);
            }
        }
        Ok(best)
    }
}

/// Tabular TD(0) control on the one-hot linear model, ε-greedy behavior,
/// TD target y = R + γ·max_a' q(S',a') with zero bootstrap at terminal
/// states. The optimizer rule decides the step scale: plain TD for `Sgd`,
/// ξ = 1/(‖∇q‖²+ε) for `Ignd`. Runs exactly `total_steps` environment steps;
/// a trailing partial episode is recorded with the return it accumulated.
pub fn tabular_q_learning(
    env: &GridWorld,
    cfg: &TabularConfig,
    rng: &mut SeededRng,
) -> Result<TabularOutcome, RlError> {
    cfg.validate(env)?;
    let table = QTable {
        model: Model::linear(env.n_states() * N_ACTIONS),
        env_states: env.n_states(),
        scale: cfg.feature_scale.as_ref(),
    };
    let mut w = FlatWeights::zeros(table.model.layout());
    let mut st = OptimState::new();
    let q_bound = 1.0 / (1.0 - cfg.gamma).max(1e-12) + 1e-9;
    let mut q_bound_exceeded = false;
    let mut records = Vec::new();
    let mut step_trace = Vec::new();
    let mut global_step = 0u64;
    let mut episode = 0usize;
    while global_step < cfg.total_steps {
        let mut state = env.start;
        let mut ep_return = 0.0;
        let mut ep_steps = 0u64;
        let mut xi_sum = 0.0;
        let mut td_sum = 0.0;
        let mut max_abs_q: f64 = 0.0;
        let mut epsilon = cfg.epsilon.at(global_step, cfg.total_steps);
        while !env.is_terminal(state)
            && ep_steps < env.step_limit
            && global_step < cfg.total_steps
        {
            epsilon = cfg.epsilon.at(global_step, cfg.total_steps);
            let action = if rng.chance(epsilon) {
                rng.index(N_ACTIONS)
            } else {
                table.greedy(&w, state)?.0
            };
            let tr = env.step(state, action, rng)?;
            let bootstrap = if tr.terminal {
                0.0
            } else {
                table.greedy(&w, tr.next_state)?.1
            };
            let target = tr.reward + cfg.gamma * bootstrap;
            let x = table.features(state, action)?;
            let ev = table.model.eval_with_gradient(&w, x.as_slice(), target)?;
            if cfg.record_steps {
                step_trace.push(StepTrace {
                    state,
                    action,
                    q_pred: ev.value,
                });
            }
            let diag = step(&cfg.optim, &mut st, &mut w, &ev)?;
            xi_sum += diag.xi;
            td_sum += ev.residual.abs();
            let q_after = table.q(&w, state, action)?;
            max_abs_q = max_abs_q.max(q_after.abs());
            if !q_after.is_finite() || q_after.abs() > q_bound {
                q_bound_exceeded = true;
            }
            ep_return += tr.reward;
            state = tr.next_state;
            ep_steps += 1;
            global_step += 1;
        }
        let denom = ep_steps.max(1) as f64;
        records.push(EpisodeRecord {
            episode,
            ret: ep_return,
            steps: ep_steps,
            xi_mean: xi_sum / denom,
            epsilon,
            td_error_abs_mean: td_sum / denom,
            max_abs_q,
        });
        episode += 1;
    }
    Ok(TabularOutcome {
        records,
        weights: w,
        q_bound_exceeded,
        steps_run: global_step,
        step_trace,
    })
}

/// Mean return of the greedy policy over `episodes` fresh episodes, no
/// learning and no exploration.
pub fn greedy_rollout(
    env: &GridWorld,
    weights: &FlatWeights,
    feature_scale: Option<&DenseVector>,
    episodes: usize,
    rng: &mut SeededRng,
) -> Result<f64, RlError> {
    let table = QTable {
        model: Model::linear(env.n_states() * N_ACTIONS),
        env_states: env.n_states(),
        scale: feature_scale,
    };
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut state = env.start;
        let mut steps = 0u64;
        while !env.is_terminal(state) && steps < env.step_limit {
            let (action, _) = table.greedy(weights, state)?;
            let tr = env.step(state, action, rng)?;
            total += tr.reward;
            state = tr.next_state;
            steps += 1;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Mean return over the last `window_fraction` of recorded episodes — the
/// end-of-training summary the sweep tooling reports.
pub fn final_window_return(records: &[EpisodeRecord], window_fraction: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let window = ((records.len() as f64 * window_fraction).ceil() as usize)
        .clamp(1, records.len());
    let tail = &records[records.len() - window..];
    tail.iter().map(|r| r.ret).sum::<f64>() / window as f64
}
