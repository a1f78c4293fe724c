//! Executes a resolved run: fans (alpha, seed) cells out over a bounded
//! rayon pool, then assembles outputs in a fixed order so the records CSV
//! is byte-identical regardless of --jobs or completion order. Every output
//! directory receives exactly four files: config.txt, records.csv, plot.py,
//! run.log. Timestamps appear only in run.log.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use ignd::lqr::{
    generalized_policy_iteration, EvalConfig, GpiConfig, GpiStatus, LqrSystem, PolicyGain, TdRule,
};
use ignd::numkit::{DenseVector, SeededRng};
use ignd::optim::{LrSchedule, OptimConfig};
use ignd::rl_deep::{deep_q_train, CartPole, DeepQConfig};
use ignd::rl_tabular::{
    final_window_return, tabular_q_learning, GridWorld, TabularConfig, N_ACTIONS,
};
use ignd::model::Model;
use ignd::supervised::{
    format_f64, load_csv, prepare, synthetic_regression, train_incremental, ColumnSpec, Dataset,
    EvalPoint, PreparedData, SplitSpec, SyntheticSpec, TrainConfig,
};

use crate::config::{spec_alpha0, Family, FamilySpec, RunSpec};
use crate::plotgen;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.txt";
pub const RECORDS_FILE: &str = "records.csv";
pub const PLOT_FILE: &str = "plot.py";
pub const LOG_FILE: &str = "run.log";

/// One (alpha, seed) execution: its CSV lines, a status word for the log,
/// and the final-window aggregate used by grid search.
pub struct CellOutcome {
    pub rows: Vec<String>,
    pub status: String,
    /// No usable result: divergence, or an empty record set.
    pub failed: bool,
    pub final_metric: f64,
    pub elapsed_ms: u128,
}

pub struct RunOutput {
    pub cells_total: usize,
    pub cells_failed: usize,
    /// Per-alpha (alpha, mean metric, failures) table, grid runs only.
    pub grid_table: Vec<(f64, f64, usize)>,
    pub best_alpha: Option<f64>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn csv_header(family: Family, grid: bool) -> &'static str {
    if grid {
        return "run_id,seed,alpha,final_metric,diverged";
    }
    match family {
        Family::Supervised => "run_id,seed,step,metric,value",
        Family::Frozenlake => "run_id,seed,episode,return,steps,xi_mean",
        Family::Cartpole => {
            "run_id,seed,episode,return,steps,xi_mean,epsilon_greedy,td_error_abs_mean"
        }
        Family::Lqr => "run_id,seed,improvement_index,k_error_inf,eval_steps_used",
    }
}

/// Mean of the last ⌈10%⌉ entries — the "final window" used everywhere a
/// single summary number is needed.
fn final_window_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let window = ((values.len() as f64 * 0.1).ceil() as usize).clamp(1, values.len());
    let tail = &values[values.len() - window..];
    tail.iter().sum::<f64>() / window as f64
}

/// True when this family's grid metric is maximized (returns) rather than
/// minimized (errors).
fn metric_is_maximized(family: Family) -> bool {
    matches!(family, Family::Frozenlake | Family::Cartpole)
}

fn with_alpha(schedule: &LrSchedule, alpha0: f64) -> LrSchedule {
    match *schedule {
        LrSchedule::Constant { .. } => LrSchedule::Constant { alpha0 },
        LrSchedule::InverseTime { b, .. } => LrSchedule::InverseTime { alpha0, b },
        LrSchedule::Geometric {
            alpha_end, horizon, ..
        } => LrSchedule::Geometric {
            alpha0,
            alpha_end,
            horizon,
        },
    }
}

fn cell_run_id(family: Family, spec: &FamilySpec, alpha0: f64) -> String {
    let rule = match spec {
        FamilySpec::Supervised(s) => s.optim.rule.name(),
        FamilySpec::Frozenlake(s) => s.optim.rule.name(),
        FamilySpec::Cartpole(s) => s.optim.rule.name(),
        FamilySpec::Lqr(s) => match s.rule {
            TdRule::Igndq => "igndq",
            TdRule::Ql => "ql",
        },
    };
    format!("{}-{}-a{}", family.name(), rule, format_f64(alpha0))
}

/// ±10⁴ nonzero integer feature scales, the adversarial design of the
/// rescaling experiments.
pub fn random_feature_scales(seed: u64, dim: usize) -> DenseVector {
    let mut rng = SeededRng::new(seed);
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

fn config_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{context}: {e}"))
}

/// Shared per-run state built once before the cells fan out.
enum SharedContext {
    Supervised(PreparedData),
    Frozenlake(GridWorld, Option<DenseVector>),
    Cartpole(CartPole),
    Lqr(LqrSystem),
}

fn infer_csv_schema(path: &Path, target: &str) -> Result<Vec<ColumnSpec>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(config_err("data.source"))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(config_err("data.source"))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if !headers.iter().any(|h| h == target) {
        return Err(CliError::Config(format!(
            "data.target: column '{target}' not present in {}",
            path.display()
        )));
    }
    let mut numeric = vec![true; headers.len()];
    for row in reader.records() {
        let row = row.map_err(config_err("data.source"))?;
        for (j, cell) in row.iter().enumerate() {
            if numeric[j] && cell.trim().parse::<f64>().is_err() {
                numeric[j] = false;
            }
        }
    }
    headers
        .iter()
        .zip(numeric)
        .filter(|(name, _)| name.as_str() != target)
        .map(|(name, is_num)| {
            Ok(if is_num {
                ColumnSpec::numeric(name)
            } else {
                ColumnSpec::categorical(name)
            })
        })
        .collect()
}

fn build_context(rs: &RunSpec) -> Result<SharedContext, CliError> {
    match &rs.spec {
        FamilySpec::Supervised(s) => {
            let dataset: Dataset = if s.data.source == "synthetic" {
                synthetic_regression(&SyntheticSpec {
                    rows: s.data.rows,
                    numeric_columns: s.data.numeric_columns,
                    categories: s.data.categories,
                    noise_sd: s.data.noise_sd,
                    seed: s.data.seed,
                })
            } else {
                let path = Path::new(&s.data.source);
                let schema = infer_csv_schema(path, &s.data.target)?;
                load_csv(path, &schema, &s.data.target).map_err(config_err("data.source"))?
            };
            let split = SplitSpec {
                train_fraction: s.data.train_fraction,
                shuffle_seed: s.data.shuffle_seed,
            };
            let prepared = prepare(&dataset, &split).map_err(config_err("split"))?;
            Ok(SharedContext::Supervised(prepared))
        }
        FamilySpec::Frozenlake(s) => {
            let env = GridWorld::frozen_lake(s.slippery);
            let scale = s
                .feature_scale_seed
                .map(|seed| random_feature_scales(seed, env.n_states() * N_ACTIONS));
            Ok(SharedContext::Frozenlake(env, scale))
        }
        FamilySpec::Cartpole(_) => Ok(SharedContext::Cartpole(CartPole::default())),
        FamilySpec::Lqr(s) => {
            let sys = match s.system.as_str() {
                "two_state" => LqrSystem::two_state(),
                "four_state" => LqrSystem::four_state(),
                path => LqrSystem::load(Path::new(path)).map_err(config_err("lqr.system"))?,
            };
            Ok(SharedContext::Lqr(sys))
        }
    }
}

fn run_supervised_cell(
    s: &crate::config::SupervisedSpec,
    optim: &OptimConfig,
    data: &PreparedData,
    run_id: &str,
    seed: u64,
) -> Result<CellOutcome, CliError> {
    let started = Instant::now();
    let model = if s.hidden.is_empty() {
        Model::linear(data.input_dim)
    } else {
        Model::mlp_relu(data.input_dim, &s.hidden).map_err(config_err("supervised.hidden"))?
    };
    let cfg = TrainConfig {
        optim: optim.clone(),
        steps: s.steps,
        eval_every: s.eval_every,
    };
    let mut rng = SeededRng::new(seed);
    let w0 = model.init(&mut rng);
    let outcome =
        train_incremental(&cfg, &model, w0, data, &mut rng).map_err(config_err("supervised"))?;
    let mut rows = Vec::with_capacity(outcome.curve.len() * 5);
    for p in &outcome.curve {
        let metrics: [(&str, f64); 5] = [
            ("train_mse", p.train_mse),
            ("test_mse", p.test_mse),
            ("test_mape", p.test_mape),
            ("xi_mean", p.xi_mean),
            ("grad_sq_max", p.grad_sq_max),
        ];
        for (name, value) in metrics {
            rows.push(format!(
                "{run_id},{seed},{},{name},{}",
                p.step,
                format_f64(value)
            ));
        }
    }
    let test_curve: Vec<f64> = outcome.curve.iter().map(|p: &EvalPoint| p.test_mse).collect();
    Ok(CellOutcome {
        rows,
        status: if outcome.diverged { "diverged" } else { "ok" }.into(),
        failed: outcome.diverged,
        final_metric: if outcome.diverged {
            f64::NAN
        } else {
            final_window_mean(&test_curve)
        },
        elapsed_ms: started.elapsed().as_millis(),
    })
}

fn run_frozenlake_cell(
    s: &crate::config::FrozenlakeSpec,
    optim: &OptimConfig,
    env: &GridWorld,
    scale: Option<&DenseVector>,
    run_id: &str,
    seed: u64,
) -> Result<CellOutcome, CliError> {
    let started = Instant::now();
    let cfg = TabularConfig {
        optim: optim.clone(),
        gamma: s.gamma,
        total_steps: s.steps,
        epsilon: s.epsilon_greedy.clone(),
        feature_scale: scale.cloned(),
        record_steps: false,
    };
    let mut rng = SeededRng::new(seed);
    let outcome = tabular_q_learning(env, &cfg, &mut rng).map_err(config_err("frozenlake"))?;
    let rows = outcome
        .records
        .iter()
        .map(|r| {
            format!(
                "{run_id},{seed},{},{},{},{}",
                r.episode,
                format_f64(r.ret),
                r.steps,
                format_f64(r.xi_mean)
            )
        })
        .collect();
    Ok(CellOutcome {
        rows,
        status: if outcome.q_bound_exceeded {
            "diverged".into()
        } else {
            "ok".into()
        },
        failed: outcome.q_bound_exceeded,
        final_metric: if outcome.q_bound_exceeded {
            f64::NAN
        } else {
            final_window_return(&outcome.records, 0.1)
        },
        elapsed_ms: started.elapsed().as_millis(),
    })
}

fn run_cartpole_cell(
    s: &crate::config::CartpoleSpec,
    optim: &OptimConfig,
    env: &CartPole,
    run_id: &str,
    seed: u64,
) -> Result<CellOutcome, CliError> {
    let started = Instant::now();
    if s.hidden.is_empty() {
        return Err(CliError::Config(
            "cartpole.hidden: the q-network needs at least one hidden layer".into(),
        ));
    }
    let cfg = DeepQConfig {
        optim: optim.clone(),
        hidden: s.hidden.clone(),
        gamma: s.gamma,
        target_update_period: s.target_period,
        epsilon: s.epsilon_greedy.clone(),
        step_budget: s.step_budget,
        episodes: s.episodes,
        use_mp_reward: s.mp_reward,
        record_steps: false,
    };
    let mut rng = SeededRng::new(seed);
    let outcome = deep_q_train(env, &cfg, &mut rng).map_err(config_err("cartpole"))?;
    let rows = outcome
        .records
        .iter()
        .map(|r| {
            format!(
                "{run_id},{seed},{},{},{},{},{},{}",
                r.episode,
                format_f64(r.ret),
                r.steps,
                format_f64(r.xi_mean),
                format_f64(r.epsilon),
                format_f64(r.td_error_abs_mean)
            )
        })
        .collect();
    Ok(CellOutcome {
        rows,
        status: if outcome.diverged { "diverged" } else { "ok" }.into(),
        failed: outcome.diverged,
        final_metric: if outcome.diverged {
            f64::NAN
        } else {
            final_window_return(&outcome.records, 0.1)
        },
        elapsed_ms: started.elapsed().as_millis(),
    })
}

fn run_lqr_cell(
    s: &crate::config::LqrSpec,
    alpha0: f64,
    sys: &LqrSystem,
    run_id: &str,
    seed: u64,
) -> Result<CellOutcome, CliError> {
    let started = Instant::now();
    let eval = EvalConfig {
        rule: s.rule,
        alpha: LrSchedule::Geometric {
            alpha0,
            alpha_end: s.alpha_end,
            horizon: s.horizon,
        },
        epsilon: s.epsilon,
        exploration_sd: s.exploration_sd,
        tol: s.eval_tol,
        max_steps: s.eval_steps,
        schedule_offset: 0,
        feature_scale: None,
        initial_state: None,
        record_q: false,
    };
    let cfg = GpiConfig {
        eval,
        max_improvements: s.improvements,
        gain_tol: s.gain_tol,
        warm_start: s.warm_start,
        w0: None,
        anneal_across_improvements: s.anneal_across,
    };
    let k0 = PolicyGain::constant(sys.n_states(), sys.n_actions(), s.k0);
    let mut rng = SeededRng::new(seed);
    let outcome = generalized_policy_iteration(sys, &k0, &cfg, &mut rng)
        .map_err(config_err("lqr"))?;
    let rows: Vec<String> = outcome
        .trace
        .iter()
        .map(|r| {
            format!(
                "{run_id},{seed},{},{},{}",
                r.improvement_index,
                format_f64(r.k_error_inf),
                r.eval_steps_used
            )
        })
        .collect();
    let status = match outcome.status {
        GpiStatus::GainConverged => "gain_converged".into(),
        GpiStatus::ReachedMaxImprovements => "ok".into(),
        GpiStatus::Diverged { at } => format!("diverged@{at}"),
        GpiStatus::IndefiniteMaa { at } => format!("indefinite_maa@{at}"),
    };
    let failed = outcome.trace.is_empty()
        || matches!(outcome.status, GpiStatus::Diverged { .. });
    let errors: Vec<f64> = outcome.trace.iter().map(|r| r.k_error_inf).collect();
    Ok(CellOutcome {
        rows,
        status,
        failed,
        final_metric: if failed {
            f64::NAN
        } else {
            final_window_mean(&errors)
        },
        elapsed_ms: started.elapsed().as_millis(),
    })
}

fn run_cell(
    rs: &RunSpec,
    ctx: &SharedContext,
    alpha: Option<f64>,
    seed: u64,
) -> Result<CellOutcome, CliError> {
    let alpha0 = alpha.unwrap_or_else(|| spec_alpha0(&rs.spec));
    let run_id = cell_run_id(rs.family, &rs.spec, alpha0);
    match (&rs.spec, ctx) {
        (FamilySpec::Supervised(s), SharedContext::Supervised(data)) => {
            let mut optim = s.optim.clone();
            optim.schedule = with_alpha(&s.optim.schedule, alpha0);
            run_supervised_cell(s, &optim, data, &run_id, seed)
        }
        (FamilySpec::Frozenlake(s), SharedContext::Frozenlake(env, scale)) => {
            let mut optim = s.optim.clone();
            optim.schedule = with_alpha(&s.optim.schedule, alpha0);
            run_frozenlake_cell(s, &optim, env, scale.as_ref(), &run_id, seed)
        }
        (FamilySpec::Cartpole(s), SharedContext::Cartpole(env)) => {
            let mut optim = s.optim.clone();
            optim.schedule = with_alpha(&s.optim.schedule, alpha0);
            run_cartpole_cell(s, &optim, env, &run_id, seed)
        }
        (FamilySpec::Lqr(s), SharedContext::Lqr(sys)) => {
            run_lqr_cell(s, alpha0, sys, &run_id, seed)
        }
        _ => unreachable!("context built for a different family"),
    }
}

/// Log-spaced grid with exact endpoints.
pub fn logspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(points);
    let ratio = hi / lo;
    for i in 0..points {
        let t = i as f64 / (points - 1) as f64;
        out.push(lo * ratio.powf(t));
    }
    out[0] = lo;
    out[points - 1] = hi;
    out
}

fn ensure_clean_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("out: cannot create {}: {e}", out.display())))?;
    let allowed = [CONFIG_FILE, RECORDS_FILE, PLOT_FILE, LOG_FILE];
    for entry in std::fs::read_dir(out)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        // plot.png is regenerable from records.csv by the plot script; clear
        // it so the post-run directory holds exactly the four outputs.
        if name == "plot.png" {
            std::fs::remove_file(entry.path())?;
            continue;
        }
        if !allowed.contains(&name.as_ref()) {
            return Err(CliError::Config(format!(
                "out: {} already contains '{}'; an output directory holds only {:?}",
                out.display(),
                name,
                allowed
            )));
        }
    }
    Ok(())
}

/// Runs the whole experiment and writes the four output files. Returns the
/// summary used by main for stdout; `AllRunsDiverged` is reported after the
/// outputs (including the full table) are on disk.
pub fn execute(rs: &RunSpec) -> Result<RunOutput, CliError> {
    let started_ms = now_ms();
    let wall = Instant::now();
    let ctx = build_context(rs)?;
    ensure_clean_dir(&rs.out)?;

    let alphas: Vec<Option<f64>> = match &rs.grid {
        Some(g) => logspace(g.lo, g.hi, g.points).into_iter().map(Some).collect(),
        None => vec![None],
    };
    let seeds: Vec<u64> = (0..rs.n_seeds).map(|i| rs.base_seed + i).collect();
    let cells: Vec<(Option<f64>, u64)> = alphas
        .iter()
        .flat_map(|a| seeds.iter().map(move |s| (*a, *s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(rs.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("jobs: {e}")))?;
    let results: Result<Vec<CellOutcome>, CliError> = pool.install(|| {
        cells
            .par_iter()
            .map(|(alpha, seed)| run_cell(rs, &ctx, *alpha, *seed))
            .collect()
    });
    let results = results?;

    // Deterministic assembly in (alpha, seed) order.
    let mut csv = String::from(csv_header(rs.family, rs.grid.is_some()));
    csv.push('\n');
    if rs.grid.is_some() {
        for ((alpha, seed), cell) in cells.iter().zip(&results) {
            let alpha0 = alpha.unwrap();
            let run_id = cell_run_id(rs.family, &rs.spec, alpha0);
            csv.push_str(&format!(
                "{run_id},{seed},{},{},{}\n",
                format_f64(alpha0),
                format_f64(cell.final_metric),
                u8::from(cell.failed)
            ));
        }
    } else {
        for cell in &results {
            for row in &cell.rows {
                csv.push_str(row);
                csv.push('\n');
            }
        }
    }

    // Grid table and winner.
    let mut grid_table = Vec::new();
    let mut best_alpha = None;
    if rs.grid.is_some() {
        let maximize = metric_is_maximized(rs.family);
        let per_alpha = seeds.len();
        let mut best_score = f64::NEG_INFINITY;
        for (ai, alpha) in alphas.iter().enumerate() {
            let chunk = &results[ai * per_alpha..(ai + 1) * per_alpha];
            let failures = chunk.iter().filter(|c| c.failed).count();
            let mean = if failures > 0 {
                f64::NAN
            } else {
                chunk.iter().map(|c| c.final_metric).sum::<f64>() / per_alpha as f64
            };
            let alpha0 = alpha.unwrap();
            grid_table.push((alpha0, mean, failures));
            // A grid point with any failed seed never wins.
            let score = if mean.is_nan() {
                f64::NEG_INFINITY
            } else if maximize {
                mean
            } else {
                -mean
            };
            if score > best_score {
                best_score = score;
                best_alpha = Some(alpha0);
            }
        }
        if best_score == f64::NEG_INFINITY {
            best_alpha = None;
        }
    }

    let cells_failed = results.iter().filter(|c| c.failed).count();

    // run.log: the only file allowed to carry timestamps.
    let mut log = String::new();
    log.push_str(&format!(
        "start_unix_ms={started_ms} family={} run_id={} seeds={}..{} jobs={} cells={}\n",
        rs.family.name(),
        rs.run_id,
        rs.base_seed,
        rs.base_seed + rs.n_seeds - 1,
        rs.jobs,
        cells.len()
    ));
    for ((alpha, seed), cell) in cells.iter().zip(&results) {
        let alpha0 = alpha.unwrap_or_else(|| spec_alpha0(&rs.spec));
        log.push_str(&format!(
            "cell alpha={} seed={seed} status={} records={} final_metric={} elapsed_ms={}\n",
            format_f64(alpha0),
            cell.status,
            cell.rows.len(),
            format_f64(cell.final_metric),
            cell.elapsed_ms
        ));
    }
    for (alpha, mean, failures) in &grid_table {
        log.push_str(&format!(
            "grid alpha={} mean_final_metric={} failures={failures}\n",
            format_f64(*alpha),
            format_f64(*mean)
        ));
    }
    if let Some(best) = best_alpha {
        log.push_str(&format!("grid best_alpha={}\n", format_f64(best)));
    }
    log.push_str(&format!(
        "end_unix_ms={} failed_cells={cells_failed}/{} elapsed_ms={}\n",
        now_ms(),
        cells.len(),
        wall.elapsed().as_millis()
    ));

    std::fs::write(rs.out.join(CONFIG_FILE), &rs.snapshot)?;
    std::fs::write(rs.out.join(RECORDS_FILE), &csv)?;
    std::fs::write(rs.out.join(PLOT_FILE), plotgen::script(rs))?;
    std::fs::write(rs.out.join(LOG_FILE), &log)?;

    if cells_failed == cells.len() {
        return Err(CliError::AllRunsDiverged);
    }
    Ok(RunOutput {
        cells_total: cells.len(),
        cells_failed,
        grid_table,
        best_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logspace_hits_endpoints_exactly() {
        let g = logspace(1e-9, 1.0, 10);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 1e-9);
        assert_eq!(g[9], 1.0);
        for w in g.windows(2) {
            assert!(w[0] < w[1]);
        }
        // Log-uniform: ratios between neighbours agree.
        let r0 = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] / r0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn final_window_mean_uses_the_last_tenth() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(final_window_mean(&v), 94.5);
        assert_eq!(final_window_mean(&[3.0]), 3.0);
        assert!(final_window_mean(&[]).is_nan());
    }

    #[test]
    fn feature_scales_are_nonzero_integers_in_range() {
        let phi = random_feature_scales(7, 64);
        for i in 0..phi.len() {
            let v = phi[i];
            assert!(v != 0.0 && v.fract() == 0.0 && v.abs() <= 10_000.0);
        }
    }
}
