//! Cart-pole swing-keeping with a ReLU Q-network trained by strictly
//! incremental TD steps against a periodically copied target network — no
//! replay buffer, no mini-batches. Includes the modified dense ("MP") reward
//! shapes for cart-pole and acrobot.

use crate::model::{FlatWeights, Model};
use crate::numkit::SeededRng;
use crate::optim::{step, OptimConfig, OptimState};
use crate::rl_tabular::{EpisodeRecord, EpsilonSchedule, RlError};

/// Cart-pole with the community-standard constants, Euler-integrated at
/// 0.02 s. All values are pinned here so trajectories are reproducible
/// bit-for-bit.
#[derive(Clone, Copy, Debug)]
pub struct CartPole {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length (the dynamics use the centre of mass).
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
    pub step_limit: u64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            theta_threshold: 12.0 * std::f64::consts::PI / 180.0,
            x_threshold: 2.4,
            step_limit: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }
}

pub const CARTPOLE_ACTIONS: usize = 2;

impl CartPole {
    /// All four components uniform in [−0.05, 0.05].
    pub fn reset(&self, rng: &mut SeededRng) -> CartPoleState {
        CartPoleState {
            x: rng.uniform(-0.05, 0.05),
            x_dot: rng.uniform(-0.05, 0.05),
            theta: rng.uniform(-0.05, 0.05),
            theta_dot: rng.uniform(-0.05, 0.05),
        }
    }

    pub fn is_beyond_limits(&self, s: &CartPoleState) -> bool {
        s.x.abs() > self.x_threshold || s.theta.abs() > self.theta_threshold
    }

    /// One Euler step under force ±force_mag; original reward is 1 per step.
    /// Action 0 pushes left, 1 pushes right.
    pub fn step(
        &self,
        s: &CartPoleState,
        action: usize,
    ) -> Result<(CartPoleState, f64), RlError> {
        if self.is_beyond_limits(s) {
            return Err(RlError::SteppedTerminal { state: 0 });
        }
        if action >= CARTPOLE_ACTIONS {
            return Err(RlError::BadConfig(format!("action {action} out of range")));
        }
        let force = if action == 1 {
            self.force_mag
        } else {
            -self.force_mag
        };
        let total_mass = self.mass_cart + self.mass_pole;
        let polemass_length = self.mass_pole * self.half_length;
        let cos_t = s.theta.cos();
        let sin_t = s.theta.sin();
        let temp = (force + polemass_length * s.theta_dot * s.theta_dot * sin_t) / total_mass;
        let theta_acc = (self.gravity * sin_t - cos_t * temp)
            / (self.half_length * (4.0 / 3.0 - self.mass_pole * cos_t * cos_t / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;
        let next = CartPoleState {
            x: s.x + self.tau * s.x_dot,
            x_dot: s.x_dot + self.tau * x_acc,
            theta: s.theta + self.tau * s.theta_dot,
            theta_dot: s.theta_dot + self.tau * theta_acc,
        };
        Ok((next, 1.0))
    }
}

/// Dense shaped reward for cart-pole: 5 minus quadratic penalties on angle
/// and angular velocity, clipped at zero. Range [0, 5].
pub fn cartpole_mp_reward(theta: f64, theta_dot: f64) -> f64 {
    (5.0 - 100.0 * theta * theta - theta_dot * theta_dot).max(0.0)
}

/// Dense shaped reward for acrobot: negative squared height of the free end
/// below the top, minus 1 for torque-spending actions {1, 3}. Range [−17, 0].
pub fn acrobot_mp_reward(s1_angle: f64, s2_angle: f64, torque_action: usize) -> f64 {
    let tip = 2.0 + s1_angle.cos() + (s1_angle + s2_angle).cos();
    let torque_cost = if torque_action == 1 || torque_action == 3 {
        1.0
    } else {
        0.0
    };
    -(tip * tip) - torque_cost
}

#[derive(Clone, Debug)]
pub struct DeepQConfig {
    /// `Rule::Sgd` is plain semi-gradient TD; `Rule::Ignd` scales each step
    /// by ξ = 1/(‖∇q‖²+ε).
    pub optim: OptimConfig,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    /// Copy the online weights into the target network every p global steps.
    pub target_update_period: u64,
    pub epsilon: EpsilonSchedule,
    /// Global-step basis for the exploration anneal.
    pub step_budget: u64,
    pub episodes: usize,
    /// Train on the shaped reward instead of the constant 1.
    pub use_mp_reward: bool,
    pub record_steps: bool,
}

impl DeepQConfig {
    pub fn new(optim: OptimConfig) -> Self {
        Self {
            optim,
            hidden: vec![32, 64, 32],
            gamma: 0.99,
            target_update_period: 100,
            epsilon: EpsilonSchedule::Linear {
                start: 1.0,
                end: 0.05,
                fraction: 1.0,
            },
            step_budget: 10_000,
            episodes: 300,
            use_mp_reward: true,
            record_steps: false,
        }
    }

    fn validate(&self) -> Result<(), RlError> {
        self.optim.validate()?;
        self.epsilon.validate()?;
        if self.target_update_period == 0 {
            return Err(RlError::BadConfig("target update period must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(RlError::BadConfig(format!(
                "gamma {} outside [0,1]",
                self.gamma
            )));
        }
        if self.hidden.is_empty() || self.step_budget == 0 {
            return Err(RlError::BadConfig(
                "need at least one hidden layer and a positive step budget".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step diagnostics, recorded when `record_steps` is on.
#[derive(Clone, Copy, Debug)]
pub struct DeepStepTrace {
    pub xi: f64,
    pub grad_sq: f64,
    pub reward: f64,
    pub td_target: f64,
    pub td_error: f64,
    /// δ − ∇qᵀΔw for this step: zero (to rounding) for the Gauss-Newton rule
    /// at α=1, ε=0.
    pub linearized_residual: f64,
}

#[derive(Clone, Debug)]
pub struct DeepOutcome {
    pub records: Vec<EpisodeRecord>,
    pub weights: FlatWeights,
    pub target_weights: FlatWeights,
    pub diverged: bool,
    pub steps_run: u64,
    pub step_trace: Vec<DeepStepTrace>,
}

/// State-action input: the four state components followed by a one-hot
/// action block.
fn q_input(s: &CartPoleState, action: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(4 + CARTPOLE_ACTIONS);
    x.extend_from_slice(&s.as_array());
    for a in 0..CARTPOLE_ACTIONS {
        x.push(if a == action { 1.0 } else { 0.0 });
    }
    x
}

/// Max over actions by enumeration; ties go to the lower action index.
fn best_action(
    model: &Model,
    w: &FlatWeights,
    s: &CartPoleState,
) -> Result<(usize, f64), RlError> {
    let mut best = (0usize, model.value(w, &q_input(s, 0))?);
    for a in 1..CARTPOLE_ACTIONS {
        let q = model.value(w, &q_input(s, a))?;
        if q > best.1 {
            best = (a, q);
        }
    }
    Ok(best)
}

/// Strictly incremental deep Q-learning: ε-greedy behavior, TD target from
/// the frozen target network (zero bootstrap when the next state is beyond
/// limits or the step cap is hit), one optimizer step per transition, target
/// copy every `target_update_period` global steps. Returns per-episode
/// records; a non-finite weight or value marks the run diverged and stops it.
pub fn deep_q_train(
    env: &CartPole,
    cfg: &DeepQConfig,
    rng: &mut SeededRng,
) -> Result<DeepOutcome, RlError> {
    cfg.validate()?;
    let model = Model::mlp_relu(4 + CARTPOLE_ACTIONS, &cfg.hidden)?;
    let mut w = model.init(rng);
    let mut target_w = w.clone();
    let mut st = OptimState::new();
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut step_trace = Vec::new();
    let mut global_step = 0u64;
    let mut diverged = false;
    'episodes: for episode in 0..cfg.episodes {
        let mut s = env.reset(rng);
        let mut ep_return = 0.0;
        let mut ep_steps = 0u64;
        let mut xi_sum = 0.0;
        let mut td_sum = 0.0;
        let mut max_abs_q: f64 = 0.0;
        let mut epsilon;
        loop {
            epsilon = cfg.epsilon.at(global_step, cfg.step_budget);
            let action = if rng.chance(epsilon) {
                rng.index(CARTPOLE_ACTIONS)
            } else {
                best_action(&model, &w, &s)?.0
            };
            let (next, base_reward) = env.step(&s, action)?;
            let reward = if cfg.use_mp_reward {
                cartpole_mp_reward(next.theta, next.theta_dot)
            } else {
                base_reward
            };
            let failed = env.is_beyond_limits(&next);
            let truncated = ep_steps + 1 >= env.step_limit;
            let bootstrap = if failed || truncated {
                0.0
            } else {
                best_action(&model, &target_w, &next)?.1
            };
            let target = reward + cfg.gamma * bootstrap;
            let ev = model.eval_with_gradient(&w, &q_input(&s, action), target)?;
            if !ev.value.is_finite() || !target.is_finite() {
                diverged = true;
                break 'episodes;
            }
            let alpha = cfg.optim.schedule.alpha(st.t);
            let diag = step(&cfg.optim, &mut st, &mut w, &ev)?;
            if cfg.record_steps {
                step_trace.push(DeepStepTrace {
                    xi: diag.xi,
                    grad_sq: ev.grad_sq_norm,
                    reward,
                    td_target: target,
                    td_error: ev.residual,
                    linearized_residual: ev.residual
                        * (1.0 - alpha * diag.xi * ev.grad_sq_norm),
                });
            }
            xi_sum += diag.xi;
            td_sum += ev.residual.abs();
            max_abs_q = max_abs_q.max(ev.value.abs());
            if !w.values().all_finite() {
                diverged = true;
                break 'episodes;
            }
            global_step += 1;
            if global_step % cfg.target_update_period == 0 {
                target_w = w.clone();
            }
            ep_return += reward;
            ep_steps += 1;
            s = next;
            if failed || truncated {
                break;
            }
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
    }
    Ok(DeepOutcome {
        records,
        weights: w,
        target_weights: target_w,
        diverged,
        steps_run: global_step,
        step_trace,
    })
}

/// Returns of a uniformly random policy, for baselining learning curves.
pub fn random_policy_returns(
    env: &CartPole,
    episodes: usize,
    use_mp_reward: bool,
    rng: &mut SeededRng,
) -> Result<Vec<f64>, RlError> {
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        let mut total = 0.0;
        let mut steps = 0u64;
        loop {
            let action = rng.index(CARTPOLE_ACTIONS);
            let (next, base_reward) = env.step(&s, action)?;
            total += if use_mp_reward {
                cartpole_mp_reward(next.theta, next.theta_dot)
            } else {
                base_reward
            };
            steps += 1;
            if env.is_beyond_limits(&next) || steps >= env.step_limit {
                break;
            }
            s = next;
        }
        returns.push(total);
    }
    Ok(returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{LrSchedule, Rule};

    fn optim(rule: Rule, alpha: f64, epsilon: f64) -> OptimConfig {
        OptimConfig {
            epsilon,
            ..OptimConfig::new(rule, LrSchedule::Constant { alpha0: alpha })
        }
    }

    #[test]
    fn mp_reward_worked_examples_and_ranges() {
        assert_eq!(cartpole_mp_reward(0.0, 0.0), 5.0);
        assert_eq!(cartpole_mp_reward(0.2, 1.0), 0.0); // 5 − 4 − 1
        assert!((cartpole_mp_reward(0.1, 0.5) - (5.0 - 1.0 - 0.25)).abs() < 1e-12);

        assert_eq!(acrobot_mp_reward(std::f64::consts::PI, 0.0, 0), 0.0);
        assert_eq!(acrobot_mp_reward(0.0, 0.0, 0), -16.0);
        assert_eq!(acrobot_mp_reward(0.0, 0.0, 1), -17.0);
        assert_eq!(acrobot_mp_reward(0.0, 0.0, 3), -17.0);
        assert_eq!(acrobot_mp_reward(0.0, 0.0, 2), -16.0);

        let mut rng = SeededRng::new(5);
        for _ in 0..10_000 {
            let cp = cartpole_mp_reward(rng.uniform(-0.5, 0.5), rng.uniform(-3.0, 3.0));
            assert!((0.0..=5.0).contains(&cp));
            let ab = acrobot_mp_reward(
                rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
                rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
                rng.index(4),
            );
            assert!((-17.0..=0.0).contains(&ab));
        }
    }

    #[test]
    fn pole_survives_alternating_pushes_from_upright() {
        let env = CartPole::default();
        let mut s = CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: 0.0,
            theta_dot: 0.0,
        };
        for t in 0..20 {
            let (next, reward) = env.step(&s, t % 2).unwrap();
            assert_eq!(reward, 1.0);
            assert!(!env.is_beyond_limits(&next), "fell at step {t}: {next:?}");
            s = next;
        }
    }

    #[test]
    fn constant_push_tips_the_pole_over() {
        let env = CartPole::default();
        let mut s = CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: 0.0,
            theta_dot: 0.0,
        };
        let mut fell = false;
        for _ in 0..200 {
            let (next, _) = env.step(&s, 1).unwrap();
            if env.is_beyond_limits(&next) {
                fell = true;
                break;
            }
            s = next;
        }
        assert!(fell, "constant force should eventually tip the pole");
        // Stepping from the failed state is an error.
        let bad = CartPoleState {
            theta: 0.3,
            ..CartPoleState {
                x: 0.0,
                x_dot: 0.0,
                theta: 0.0,
                theta_dot: 0.0,
            }
        };
        assert!(env.step(&bad, 0).is_err());
    }

    #[test]
    fn gamma_zero_makes_targets_equal_rewards() {
        let env = CartPole::default();
        let mut cfg = DeepQConfig::new(optim(Rule::Ignd, 0.5, 1e-8));
        cfg.gamma = 0.0;
        cfg.episodes = 5;
        cfg.record_steps = true;
        let out = deep_q_train(&env, &cfg, &mut SeededRng::new(3)).unwrap();
        assert!(!out.step_trace.is_empty());
        for tr in &out.step_trace {
            assert_eq!(tr.td_target, tr.reward);
        }
    }

    #[test]
    fn unit_target_period_keeps_target_equal_to_online() {
        let env = CartPole::default();
        let mut cfg = DeepQConfig::new(optim(Rule::Ignd, 0.5, 1e-8));
        cfg.target_update_period = 1;
        cfg.episodes = 3;
        let out = deep_q_train(&env, &cfg, &mut SeededRng::new(7)).unwrap();
        assert_eq!(
            out.weights.values().as_slice(),
            out.target_weights.values().as_slice()
        );
        // With the default period they generally differ mid-stream.
        let mut cfg_p = DeepQConfig::new(optim(Rule::Ignd, 0.5, 1e-8));
        cfg_p.episodes = 3;
        let out_p = deep_q_train(&env, &cfg_p, &mut SeededRng::new(7)).unwrap();
        assert_ne!(
            out_p.weights.values().as_slice(),
            out_p.target_weights.values().as_slice()
        );
    }

    #[test]
    fn gauss_newton_unit_step_zeroes_the_linearized_td_error() {
        let env = CartPole::default();
        let mut cfg = DeepQConfig::new(optim(Rule::Ignd, 1.0, 0.0));
        cfg.episodes = 4;
        cfg.record_steps = true;
        let out = deep_q_train(&env, &cfg, &mut SeededRng::new(11)).unwrap();
        assert!(out.step_trace.len() > 20);
        for (t, tr) in out.step_trace.iter().enumerate() {
            assert!(
                tr.linearized_residual.abs() <= 1e-9 * tr.td_error.abs().max(1.0),
                "step {t}: residual {} for δ {}",
                tr.linearized_residual,
                tr.td_error
            );
        }
    }

    #[test]
    fn xi_stays_within_the_regularized_bound() {
        let env = CartPole::default();
        let mut cfg = DeepQConfig::new(optim(Rule::Ignd, 0.1, 1e-8));
        cfg.episodes = 5;
        cfg.record_steps = true;
        let out = deep_q_train(&env, &cfg, &mut SeededRng::new(13)).unwrap();
        for tr in &out.step_trace {
            assert!(tr.xi > 0.0 && tr.xi <= 1e8, "xi {}", tr.xi);
            let recovered = 1.0 / tr.xi - 1e-8;
            assert!(
                (recovered - tr.grad_sq).abs() <= 1e-9 * tr.grad_sq.max(1e-12),
                "1/xi−ε = {recovered} vs ‖∇q‖² = {}",
                tr.grad_sq
            );
        }
    }

    #[test]
    fn greedy_action_matches_exhaustive_enumeration() {
        let env = CartPole::default();
        let model = Model::mlp_relu(4 + CARTPOLE_ACTIONS, &[8, 8]).unwrap();
        let mut rng = SeededRng::new(17);
        let w = model.init(&mut rng);
        for _ in 0..200 {
            let s = env.reset(&mut rng);
            let (a, q) = best_action(&model, &w, &s).unwrap();
            let qs: Vec<f64> = (0..CARTPOLE_ACTIONS)
                .map(|a| model.value(&w, &q_input(&s, a)).unwrap())
                .collect();
            let expect = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(q, expect);
            assert_eq!(a, if qs[1] > qs[0] { 1 } else { 0 });
        }
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let env = CartPole::default();
        let mut cfg = DeepQConfig::new(optim(Rule::Ignd, 0.1, 1e-8));
        cfg.episodes = 10;
        let a = deep_q_train(&env, &cfg, &mut SeededRng::new(21)).unwrap();
        let b = deep_q_train(&env, &cfg, &mut SeededRng::new(21)).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(b.records.iter()) {
            assert_eq!(ra.ret.to_bits(), rb.ret.to_bits());
            assert_eq!(ra.steps, rb.steps);
        }
        assert_eq!(
            a.weights.values().as_slice(),
            b.weights.values().as_slice()
        );
        let c = deep_q_train(&env, &cfg, &mut SeededRng::new(22)).unwrap();
        assert_ne!(
            a.weights.values().as_slice(),
            c.weights.values().as_slice()
        );
    }

    #[test]
    fn random_baseline_is_reproducible_and_episode_capped() {
        let env = CartPole::default();
        let a = random_policy_returns(&env, 30, true, &mut SeededRng::new(1)).unwrap();
        let b = random_policy_returns(&env, 30, true, &mut SeededRng::new(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&r| (0.0..=5.0 * 500.0).contains(&r)));
    }
}
