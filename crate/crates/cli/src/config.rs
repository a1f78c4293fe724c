//! Flat `key = value` configuration with dotted section names. Resolution
//! order: family defaults, then the config file, then command-line flags.
//! The resolved state is re-rendered as the snapshot written next to the
//! records, so re-running a snapshot reproduces the run exactly.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ignd::optim::{AdamParams, LrSchedule, OptimConfig, Rule};
use ignd::rl_tabular::EpsilonSchedule;
use ignd::supervised::format_f64;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Supervised,
    Frozenlake,
    Cartpole,
    Lqr,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Supervised => "supervised",
            Family::Frozenlake => "frozenlake",
            Family::Cartpole => "cartpole",
            Family::Lqr => "lqr",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "supervised" => Ok(Family::Supervised),
            "frozenlake" => Ok(Family::Frozenlake),
            "cartpole" => Ok(Family::Cartpole),
            "lqr" => Ok(Family::Lqr),
            other => Err(CliError::Config(format!(
                "family: unknown value '{other}' (expected supervised|frozenlake|cartpole|lqr)"
            ))),
        }
    }
}

/// Values of the common command-line flags; `None` means "not given".
#[derive(Clone, Debug, Default)]
pub struct Flags {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seeds: Option<u64>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub optimizer: Option<String>,
    pub steps: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

const OPTIMIZER_KEYS: &[(&str, &str)] = &[
    ("optimizer.rule", "ignd"),
    ("optimizer.schedule", "constant"),
    ("optimizer.alpha", "0.5"),
    ("optimizer.alpha_end", "0.001"),
    ("optimizer.horizon", "5000"),
    ("optimizer.b", "1"),
    ("optimizer.epsilon", "0"),
    ("optimizer.eta", "1"),
    ("optimizer.ngd_beta", "0"),
    ("optimizer.adam_beta1", "0.9"),
    ("optimizer.adam_beta2", "0.999"),
    ("optimizer.adam_eps", "0.00000001"),
];

const EPSILON_GREEDY_KEYS: &[(&str, &str)] = &[
    ("epsilon_greedy.schedule", "constant"),
    ("epsilon_greedy.start", "0.1"),
    ("epsilon_greedy.end", "0.05"),
    ("epsilon_greedy.fraction", "1"),
    ("epsilon_greedy.hold_fraction", "0.4"),
];

fn default_entries(family: Family, grid: bool) -> Vec<(String, String)> {
    let mut out: Vec<(&str, String)> = vec![
        ("family", family.name().to_string()),
        ("seed", "1".into()),
        ("seeds", "1".into()),
        ("jobs", "1".into()),
        (
            "out",
            if grid {
                "runs/gridsearch".into()
            } else {
                format!("runs/{}", family.name())
            },
        ),
    ];
    let push_block = |out: &mut Vec<(&str, String)>, block: &[(&'static str, &str)]| {
        for (k, v) in block {
            out.push((k, (*v).to_string()));
        }
    };
    match family {
        Family::Supervised => {
            push_block(&mut out, OPTIMIZER_KEYS);
            push_block(
                &mut out,
                &[
                    ("data.source", "synthetic"),
                    ("data.target", "target"),
                    ("data.rows", "1500"),
                    ("data.numeric_columns", "6"),
                    ("data.categories", "4"),
                    ("data.noise_sd", "0.05"),
                    ("data.seed", "1"),
                    ("split.train_fraction", "0.8"),
                    ("split.shuffle_seed", "0"),
                    ("supervised.hidden", "32,64,32"),
                    ("supervised.steps", "20000"),
                    ("supervised.eval_every", "500"),
                ],
            );
        }
        Family::Frozenlake => {
            push_block(&mut out, OPTIMIZER_KEYS);
            push_block(
                &mut out,
                &[
                    ("frozenlake.slippery", "true"),
                    ("frozenlake.gamma", "0.95"),
                    ("frozenlake.steps", "5000"),
                    ("frozenlake.feature_scale_seed", "none"),
                ],
            );
            push_block(&mut out, EPSILON_GREEDY_KEYS);
        }
        Family::Cartpole => {
            push_block(&mut out, OPTIMIZER_KEYS);
            push_block(
                &mut out,
                &[
                    ("cartpole.hidden", "32,64,32"),
                    ("cartpole.gamma", "0.99"),
                    ("cartpole.episodes", "300"),
                    ("cartpole.step_budget", "10000"),
                    ("cartpole.target_period", "100"),
                    ("cartpole.mp_reward", "true"),
                ],
            );
            push_block(
                &mut out,
                &[
                    ("epsilon_greedy.schedule", "linear"),
                    ("epsilon_greedy.start", "1"),
                    ("epsilon_greedy.end", "0.05"),
                    ("epsilon_greedy.fraction", "1"),
                    ("epsilon_greedy.hold_fraction", "0.4"),
                ],
            );
        }
        Family::Lqr => {
            push_block(
                &mut out,
                &[
                    ("lqr.system", "two_state"),
                    ("lqr.rule", "igndq"),
                    ("lqr.improvements", "50"),
                    ("lqr.eval_steps", "1000"),
                    ("lqr.alpha", "auto"),
                    ("lqr.alpha_end", "auto"),
                    ("lqr.horizon", "auto"),
                    ("lqr.epsilon", "0.00000001"),
                    ("lqr.exploration_sd", "0.9"),
                    ("lqr.eval_tol", "0.00000001"),
                    ("lqr.gain_tol", "0.00000001"),
                    ("lqr.k0", "-0.01"),
                    ("lqr.warm_start", "true"),
                    ("lqr.anneal_across", "true"),
                ],
            );
        }
    }
    if grid {
        out.push(("grid.lo", "0.000000001".into()));
        out.push(("grid.hi", "1".into()));
        out.push(("grid.points", "10".into()));
    }
    out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Parses `key = value` lines; `#` lines and blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

/// The raw resolved key/value state plus the order keys are rendered in.
struct Resolved {
    order: Vec<String>,
    map: BTreeMap<String, String>,
}

impl Resolved {
    fn get(&self, key: &str) -> &str {
        &self.map[key]
    }

    fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: expected an integer ≥ 0, got '{}'", self.get(key))))
    }

    fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: expected an integer ≥ 0, got '{}'", self.get(key))))
    }

    fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self
            .get(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: expected a number, got '{}'", self.get(key))))?;
        if !v.is_finite() {
            return Err(CliError::Config(format!("{key}: must be finite")));
        }
        Ok(v)
    }

    fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(CliError::Config(format!(
                "{key}: expected true|false, got '{other}'"
            ))),
        }
    }
}

fn resolve_raw(
    family: Family,
    grid: bool,
    flags: &Flags,
) -> Result<Resolved, CliError> {
    let defaults = default_entries(family, grid);
    let order: Vec<String> = defaults.iter().map(|(k, _)| k.clone()).collect();
    let mut map: BTreeMap<String, String> = defaults.into_iter().collect();

    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config '{}': {e}", path.display()))
        })?;
        for (key, value) in parse_config_text(&text)? {
            if !map.contains_key(&key) {
                return Err(CliError::Config(format!(
                    "{key}: unknown key for the {} family",
                    family.name()
                )));
            }
            if key == "family" && Family::parse(&value)? != family {
                return Err(CliError::Config(format!(
                    "family: config file says '{value}' but the subcommand is '{}'",
                    family.name()
                )));
            }
            map.insert(key, value);
        }
    }

    // Flags override the file.
    if let Some(v) = flags.seed {
        map.insert("seed".into(), v.to_string());
    }
    if let Some(v) = flags.seeds {
        map.insert("seeds".into(), v.to_string());
    }
    if let Some(v) = flags.jobs {
        map.insert("jobs".into(), v.to_string());
    }
    if let Some(v) = &flags.out {
        map.insert("out".into(), v.display().to_string());
    }
    if let Some(v) = flags.alpha {
        let key = if family == Family::Lqr { "lqr.alpha" } else { "optimizer.alpha" };
        map.insert(key.into(), format_f64(v));
    }
    if let Some(v) = flags.epsilon {
        let key = if family == Family::Lqr { "lqr.epsilon" } else { "optimizer.epsilon" };
        map.insert(key.into(), format_f64(v));
    }
    if let Some(v) = &flags.optimizer {
        let key = if family == Family::Lqr { "lqr.rule" } else { "optimizer.rule" };
        map.insert(key.into(), v.clone());
    }
    if let Some(v) = flags.steps {
        let key = match family {
            Family::Supervised => "supervised.steps",
            Family::Frozenlake => "frozenlake.steps",
            Family::Cartpole => "cartpole.episodes",
            Family::Lqr => "lqr.eval_steps",
        };
        map.insert(key.into(), v.to_string());
    }

    Ok(Resolved { order, map })
}

#[derive(Clone, Debug)]
pub struct DataSpec {
    /// "synthetic" or a CSV path.
    pub source: String,
    pub target: String,
    pub rows: usize,
    pub numeric_columns: usize,
    pub categories: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub shuffle_seed: u64,
}

#[derive(Clone, Debug)]
pub struct SupervisedSpec {
    pub optim: OptimConfig,
    pub data: DataSpec,
    /// Empty means a linear model.
    pub hidden: Vec<usize>,
    pub steps: u64,
    pub eval_every: u64,
}

#[derive(Clone, Debug)]
pub struct FrozenlakeSpec {
    pub optim: OptimConfig,
    pub slippery: bool,
    pub gamma: f64,
    pub steps: u64,
    pub feature_scale_seed: Option<u64>,
    pub epsilon_greedy: EpsilonSchedule,
}

#[derive(Clone, Debug)]
pub struct CartpoleSpec {
    pub optim: OptimConfig,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub episodes: usize,
    pub step_budget: u64,
    pub target_period: u64,
    pub mp_reward: bool,
    pub epsilon_greedy: EpsilonSchedule,
}

#[derive(Clone, Debug)]
pub struct LqrSpec {
    /// "two_state", "four_state", or a system-file path.
    pub system: String,
    pub rule: ignd::lqr::TdRule,
    pub improvements: usize,
    pub eval_steps: u64,
    pub alpha0: f64,
    pub alpha_end: f64,
    pub horizon: u64,
    pub epsilon: f64,
    pub exploration_sd: f64,
    pub eval_tol: f64,
    pub gain_tol: f64,
    pub k0: f64,
    pub warm_start: bool,
    pub anneal_across: bool,
}

#[derive(Clone, Debug)]
pub enum FamilySpec {
    Supervised(SupervisedSpec),
    Frozenlake(FrozenlakeSpec),
    Cartpole(CartpoleSpec),
    Lqr(LqrSpec),
}

#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

/// Fully resolved run description; `snapshot` round-trips through
/// `parse_config_text` back to an identical `RunSpec`.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub family: Family,
    pub base_seed: u64,
    pub n_seeds: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub spec: FamilySpec,
    pub grid: Option<GridSpec>,
    pub run_id: String,
    pub snapshot: String,
}

fn parse_hidden(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    if value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|tok| {
            let n: usize = tok
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: bad layer width '{tok}'")))?;
            if n == 0 {
                return Err(CliError::Config(format!("{key}: layer widths must be ≥ 1")));
            }
            Ok(n)
        })
        .collect()
}

fn render_hidden(hidden: &[usize]) -> String {
    if hidden.is_empty() {
        "none".into()
    } else {
        hidden
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn parse_optimizer(r: &Resolved) -> Result<OptimConfig, CliError> {
    let rule: Rule = r
        .get("optimizer.rule")
        .parse()
        .map_err(|e| CliError::Config(format!("optimizer.rule: {e}")))?;
    let alpha0 = r.f64("optimizer.alpha")?;
    let schedule = match r.get("optimizer.schedule") {
        "constant" => LrSchedule::Constant { alpha0 },
        "inverse_time" => LrSchedule::InverseTime {
            alpha0,
            b: r.f64("optimizer.b")?,
        },
        "geometric" => LrSchedule::Geometric {
            alpha0,
            alpha_end: r.f64("optimizer.alpha_end")?,
            horizon: r.u64("optimizer.horizon")?,
        },
        other => {
            return Err(CliError::Config(format!(
                "optimizer.schedule: unknown value '{other}' (expected constant|inverse_time|geometric)"
            )))
        }
    };
    let cfg = OptimConfig {
        rule,
        schedule,
        epsilon: r.f64("optimizer.epsilon")?,
        eta: r.f64("optimizer.eta")?,
        ngd_beta: r.f64("optimizer.ngd_beta")?,
        adam: AdamParams {
            beta1: r.f64("optimizer.adam_beta1")?,
            beta2: r.f64("optimizer.adam_beta2")?,
            eps: r.f64("optimizer.adam_eps")?,
        },
    };
    cfg.validate()
        .map_err(|e| CliError::Config(format!("optimizer: {e}")))?;
    Ok(cfg)
}

fn parse_epsilon_greedy(r: &Resolved) -> Result<EpsilonSchedule, CliError> {
    let start = r.f64("epsilon_greedy.start")?;
    let end = r.f64("epsilon_greedy.end")?;
    let sched = match r.get("epsilon_greedy.schedule") {
        "constant" => EpsilonSchedule::Constant(start),
        "linear" => EpsilonSchedule::Linear {
            start,
            end,
            fraction: r.f64("epsilon_greedy.fraction")?,
        },
        "hold_then_linear" => EpsilonSchedule::HoldThenLinear {
            start,
            end,
            hold_fraction: r.f64("epsilon_greedy.hold_fraction")?,
        },
        other => {
            return Err(CliError::Config(format!(
                "epsilon_greedy.schedule: unknown value '{other}' (expected constant|linear|hold_then_linear)"
            )))
        }
    };
    sched
        .validate()
        .map_err(|e| CliError::Config(format!("epsilon_greedy: {e}")))?;
    Ok(sched)
}

fn parse_lqr(r: &Resolved) -> Result<LqrSpec, CliError> {
    let rule = match r.get("lqr.rule") {
        "igndq" => ignd::lqr::TdRule::Igndq,
        "ql" => ignd::lqr::TdRule::Ql,
        other => {
            return Err(CliError::Config(format!(
                "lqr.rule: unknown value '{other}' (expected igndq|ql)"
            )))
        }
    };
    let improvements = r.usize("lqr.improvements")?;
    let eval_steps = r.u64("lqr.eval_steps")?;
    // "auto" picks the benchmark defaults for the chosen rule and stretches
    // the decay over the whole improvements × eval_steps budget.
    let alpha0 = match r.get("lqr.alpha") {
        "auto" => match rule {
            ignd::lqr::TdRule::Igndq => 1.0,
            ignd::lqr::TdRule::Ql => 6e-7,
        },
        _ => r.f64("lqr.alpha")?,
    };
    let alpha_end = match r.get("lqr.alpha_end") {
        "auto" => match rule {
            ignd::lqr::TdRule::Igndq => 1e-3,
            ignd::lqr::TdRule::Ql => 1e-8,
        },
        _ => r.f64("lqr.alpha_end")?,
    };
    let horizon = match r.get("lqr.horizon") {
        "auto" => improvements as u64 * eval_steps,
        _ => r.u64("lqr.horizon")?,
    };
    if improvements == 0 || eval_steps == 0 {
        return Err(CliError::Config(
            "lqr: improvements and eval_steps must be ≥ 1".into(),
        ));
    }
    Ok(LqrSpec {
        system: r.get("lqr.system").to_string(),
        rule,
        improvements,
        eval_steps,
        alpha0,
        alpha_end,
        horizon,
        epsilon: r.f64("lqr.epsilon")?,
        exploration_sd: r.f64("lqr.exploration_sd")?,
        eval_tol: r.f64("lqr.eval_tol")?,
        gain_tol: r.f64("lqr.gain_tol")?,
        k0: r.f64("lqr.k0")?,
        warm_start: r.bool("lqr.warm_start")?,
        anneal_across: r.bool("lqr.anneal_across")?,
    })
}

fn rule_name(spec: &FamilySpec) -> &'static str {
    match spec {
        FamilySpec::Supervised(s) => s.optim.rule.name(),
        FamilySpec::Frozenlake(s) => s.optim.rule.name(),
        FamilySpec::Cartpole(s) => s.optim.rule.name(),
        FamilySpec::Lqr(s) => match s.rule {
            ignd::lqr::TdRule::Igndq => "igndq",
            ignd::lqr::TdRule::Ql => "ql",
        },
    }
}

pub fn spec_alpha0(spec: &FamilySpec) -> f64 {
    fn sched_alpha0(o: &OptimConfig) -> f64 {
        match o.schedule {
            LrSchedule::Constant { alpha0 } => alpha0,
            LrSchedule::InverseTime { alpha0, .. } => alpha0,
            LrSchedule::Geometric { alpha0, .. } => alpha0,
        }
    }
    match spec {
        FamilySpec::Supervised(s) => sched_alpha0(&s.optim),
        FamilySpec::Frozenlake(s) => sched_alpha0(&s.optim),
        FamilySpec::Cartpole(s) => sched_alpha0(&s.optim),
        FamilySpec::Lqr(s) => s.alpha0,
    }
}

/// Resolves defaults + file + flags into a typed run description.
pub fn resolve(family: Family, flags: &Flags, grid: bool) -> Result<RunSpec, CliError> {
    let raw = resolve_raw(family, grid, flags)?;

    let base_seed = raw.u64("seed")?;
    let n_seeds = raw.u64("seeds")?;
    if n_seeds == 0 {
        return Err(CliError::Config("seeds: must be ≥ 1".into()));
    }
    let jobs = raw.usize("jobs")?;
    if jobs == 0 {
        return Err(CliError::Config("jobs: must be ≥ 1".into()));
    }
    let out = PathBuf::from(raw.get("out"));

    let spec = match family {
        Family::Supervised => {
            let optim = parse_optimizer(&raw)?;
            let data = DataSpec {
                source: raw.get("data.source").to_string(),
                target: raw.get("data.target").to_string(),
                rows: raw.usize("data.rows")?,
                numeric_columns: raw.usize("data.numeric_columns")?,
                categories: raw.usize("data.categories")?,
                noise_sd: raw.f64("data.noise_sd")?,
                seed: raw.u64("data.seed")?,
                train_fraction: raw.f64("split.train_fraction")?,
                shuffle_seed: raw.u64("split.shuffle_seed")?,
            };
            FamilySpec::Supervised(SupervisedSpec {
                optim,
                data,
                hidden: parse_hidden("supervised.hidden", raw.get("supervised.hidden"))?,
                steps: raw.u64("supervised.steps")?,
                eval_every: raw.u64("supervised.eval_every")?,
            })
        }
        Family::Frozenlake => FamilySpec::Frozenlake(FrozenlakeSpec {
            optim: parse_optimizer(&raw)?,
            slippery: raw.bool("frozenlake.slippery")?,
            gamma: raw.f64("frozenlake.gamma")?,
            steps: raw.u64("frozenlake.steps")?,
            feature_scale_seed: match raw.get("frozenlake.feature_scale_seed") {
                "none" => None,
                _ => Some(raw.u64("frozenlake.feature_scale_seed")?),
            },
            epsilon_greedy: parse_epsilon_greedy(&raw)?,
        }),
        Family::Cartpole => FamilySpec::Cartpole(CartpoleSpec {
            optim: parse_optimizer(&raw)?,
            hidden: parse_hidden("cartpole.hidden", raw.get("cartpole.hidden"))?,
            gamma: raw.f64("cartpole.gamma")?,
            episodes: raw.usize("cartpole.episodes")?,
            step_budget: raw.u64("cartpole.step_budget")?,
            target_period: raw.u64("cartpole.target_period")?,
            mp_reward: raw.bool("cartpole.mp_reward")?,
            epsilon_greedy: parse_epsilon_greedy(&raw)?,
        }),
        Family::Lqr => FamilySpec::Lqr(parse_lqr(&raw)?),
    };

    let grid_spec = if grid {
        let g = GridSpec {
            lo: raw.f64("grid.lo")?,
            hi: raw.f64("grid.hi")?,
            points: raw.usize("grid.points")?,
        };
        if g.points < 2 {
            return Err(CliError::Config("grid.points: need at least 2".into()));
        }
        if !(g.lo > 0.0 && g.hi > g.lo) {
            return Err(CliError::Config(
                "grid: need 0 < grid.lo < grid.hi (log-spaced grid)".into(),
            ));
        }
        Some(g)
    } else {
        None
    };

    let run_id = format!(
        "{}-{}-a{}",
        family.name(),
        rule_name(&spec),
        format_f64(spec_alpha0(&spec))
    );

    let mut rs = RunSpec {
        family,
        base_seed,
        n_seeds,
        jobs,
        out,
        spec,
        grid: grid_spec,
        run_id,
        snapshot: String::new(),
    };
    rs.snapshot = render_snapshot(&rs, &raw.order);
    Ok(rs)
}

fn render_optimizer(lines: &mut Vec<(String, String)>, o: &OptimConfig) {
    let (schedule, alpha0, alpha_end, horizon, b) = match o.schedule {
        LrSchedule::Constant { alpha0 } => ("constant", alpha0, 0.001, 5000, 1.0),
        LrSchedule::InverseTime { alpha0, b } => ("inverse_time", alpha0, 0.001, 5000, b),
        LrSchedule::Geometric {
            alpha0,
            alpha_end,
            horizon,
        } => ("geometric", alpha0, alpha_end, horizon, 1.0),
    };
    let kv = [
        ("optimizer.rule", o.rule.name().to_string()),
        ("optimizer.schedule", schedule.to_string()),
        ("optimizer.alpha", format_f64(alpha0)),
        ("optimizer.alpha_end", format_f64(alpha_end)),
        ("optimizer.horizon", horizon.to_string()),
        ("optimizer.b", format_f64(b)),
        ("optimizer.epsilon", format_f64(o.epsilon)),
        ("optimizer.eta", format_f64(o.eta)),
        ("optimizer.ngd_beta", format_f64(o.ngd_beta)),
        ("optimizer.adam_beta1", format_f64(o.adam.beta1)),
        ("optimizer.adam_beta2", format_f64(o.adam.beta2)),
        ("optimizer.adam_eps", format_f64(o.adam.eps)),
    ];
    for (k, v) in kv {
        lines.push((k.to_string(), v));
    }
}

fn render_epsilon_greedy(lines: &mut Vec<(String, String)>, e: &EpsilonSchedule) {
    let (schedule, start, end, fraction, hold) = match *e {
        EpsilonSchedule::Constant(c) => ("constant", c, 0.05, 1.0, 0.4),
        EpsilonSchedule::Linear {
            start,
            end,
            fraction,
        } => ("linear", start, end, fraction, 0.4),
        EpsilonSchedule::HoldThenLinear {
            start,
            end,
            hold_fraction,
        } => ("hold_then_linear", start, end, 1.0, hold_fraction),
    };
    let kv = [
        ("epsilon_greedy.schedule", schedule.to_string()),
        ("epsilon_greedy.start", format_f64(start)),
        ("epsilon_greedy.end", format_f64(end)),
        ("epsilon_greedy.fraction", format_f64(fraction)),
        ("epsilon_greedy.hold_fraction", format_f64(hold)),
    ];
    for (k, v) in kv {
        lines.push((k.to_string(), v));
    }
}

/// Renders the typed state back to the flat format, in the canonical key
/// order, so the snapshot reflects what actually ran (including resolved
/// "auto" values), not what was typed.
fn render_snapshot(rs: &RunSpec, order: &[String]) -> String {
    let mut lines: Vec<(String, String)> = vec![
        ("family".into(), rs.family.name().to_string()),
        ("seed".into(), rs.base_seed.to_string()),
        ("seeds".into(), rs.n_seeds.to_string()),
        ("jobs".into(), rs.jobs.to_string()),
        ("out".into(), rs.out.display().to_string()),
    ];
    match &rs.spec {
        FamilySpec::Supervised(s) => {
            render_optimizer(&mut lines, &s.optim);
            let d = &s.data;
            let kv = [
                ("data.source", d.source.clone()),
                ("data.target", d.target.clone()),
                ("data.rows", d.rows.to_string()),
                ("data.numeric_columns", d.numeric_columns.to_string()),
                ("data.categories", d.categories.to_string()),
                ("data.noise_sd", format_f64(d.noise_sd)),
                ("data.seed", d.seed.to_string()),
                ("split.train_fraction", format_f64(d.train_fraction)),
                ("split.shuffle_seed", d.shuffle_seed.to_string()),
                ("supervised.hidden", render_hidden(&s.hidden)),
                ("supervised.steps", s.steps.to_string()),
                ("supervised.eval_every", s.eval_every.to_string()),
            ];
            for (k, v) in kv {
                lines.push((k.to_string(), v));
            }
        }
        FamilySpec::Frozenlake(s) => {
            render_optimizer(&mut lines, &s.optim);
            let kv = [
                ("frozenlake.slippery", s.slippery.to_string()),
                ("frozenlake.gamma", format_f64(s.gamma)),
                ("frozenlake.steps", s.steps.to_string()),
                (
                    "frozenlake.feature_scale_seed",
                    s.feature_scale_seed
                        .map(|v| v.to_string())
                        .unwrap_or_else(|| "none".into()),
                ),
            ];
            for (k, v) in kv {
                lines.push((k.to_string(), v));
            }
            render_epsilon_greedy(&mut lines, &s.epsilon_greedy);
        }
        FamilySpec::Cartpole(s) => {
            render_optimizer(&mut lines, &s.optim);
            let kv = [
                ("cartpole.hidden", render_hidden(&s.hidden)),
                ("cartpole.gamma", format_f64(s.gamma)),
                ("cartpole.episodes", s.episodes.to_string()),
                ("cartpole.step_budget", s.step_budget.to_string()),
                ("cartpole.target_period", s.target_period.to_string()),
                ("cartpole.mp_reward", s.mp_reward.to_string()),
            ];
            for (k, v) in kv {
                lines.push((k.to_string(), v));
            }
            render_epsilon_greedy(&mut lines, &s.epsilon_greedy);
        }
        FamilySpec::Lqr(s) => {
            let kv = [
                ("lqr.system", s.system.clone()),
                (
                    "lqr.rule",
                    match s.rule {
                        ignd::lqr::TdRule::Igndq => "igndq".to_string(),
                        ignd::lqr::TdRule::Ql => "ql".to_string(),
                    },
                ),
                ("lqr.improvements", s.improvements.to_string()),
                ("lqr.eval_steps", s.eval_steps.to_string()),
                ("lqr.alpha", format_f64(s.alpha0)),
                ("lqr.alpha_end", format_f64(s.alpha_end)),
                ("lqr.horizon", s.horizon.to_string()),
                ("lqr.epsilon", format_f64(s.epsilon)),
                ("lqr.exploration_sd", format_f64(s.exploration_sd)),
                ("lqr.eval_tol", format_f64(s.eval_tol)),
                ("lqr.gain_tol", format_f64(s.gain_tol)),
                ("lqr.k0", format_f64(s.k0)),
                ("lqr.warm_start", s.warm_start.to_string()),
                ("lqr.anneal_across", s.anneal_across.to_string()),
            ];
            for (k, v) in kv {
                lines.push((k.to_string(), v));
            }
        }
    }
    if let Some(g) = &rs.grid {
        lines.push(("grid.lo".into(), format_f64(g.lo)));
        lines.push(("grid.hi".into(), format_f64(g.hi)));
        lines.push(("grid.points".into(), g.points.to_string()));
    }

    debug_assert_eq!(
        lines.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>(),
        order.iter().map(String::as_str).collect::<Vec<_>>()
    );
    let mut text = String::new();
    for (k, v) in lines {
        text.push_str(&k);
        text.push_str(" = ");
        text.push_str(&v);
        text.push('\n');
    }
    text
}
