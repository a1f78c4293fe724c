use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ignd_cli::config::{self, Family, Flags};
use ignd_cli::{runner, verify, CliError};
use ignd::supervised::format_f64;

#[derive(Parser)]
#[command(
    name = "ignd",
    about = "Incremental Gauss-Newton training runs: supervised regression, \
             value-based control, and LQR policy iteration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every run family; each one overrides the corresponding
/// config-file key.
#[derive(Args, Debug, Default)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed; runs use seed, seed+1, ...
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Number of consecutive seeds
    #[arg(long, value_name = "N")]
    seeds: Option<u64>,
    /// Initial step size (the family's alpha key)
    #[arg(long, value_name = "F")]
    alpha: Option<f64>,
    /// Gauss-Newton regularization offset (the family's epsilon key)
    #[arg(long, value_name = "F")]
    epsilon: Option<f64>,
    /// Update rule: ignd|sgd|cgd|ngd|adam|ignd_adam (lqr: igndq|ql)
    #[arg(long, value_name = "NAME")]
    optimizer: Option<String>,
    /// Budget: training steps, episodes, or evaluation steps by family
    #[arg(long, value_name = "N")]
    steps: Option<u64>,
    /// Output directory; must be empty or hold only a previous run
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads across (alpha, seed) cells
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

impl Common {
    fn into_flags(self) -> Flags {
        Flags {
            config: self.config,
            seed: self.seed,
            seeds: self.seeds,
            alpha: self.alpha,
            epsilon: self.epsilon,
            optimizer: self.optimizer,
            steps: self.steps,
            out: self.out,
            jobs: self.jobs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Incremental regression on a synthetic or CSV dataset
    Supervised(Common),
    /// Tabular Q-learning on the slippery 4x4 gridworld
    Frozenlake(Common),
    /// Deep Q-learning on cart-pole balancing
    Cartpole(Common),
    /// Generalized policy iteration on a linear-quadratic regulator
    Lqr(Common),
    /// Sweep the step size over a log grid; the family comes from the
    /// config file's `family` key
    Gridsearch(Common),
    /// Run the oracle and property battery; non-zero exit on any failure
    Verify,
}

fn family_from_config(flags: &Flags) -> Result<Family, CliError> {
    let path = flags
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("gridsearch: --config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read config '{}': {e}", path.display()))
    })?;
    let value = config::parse_config_text(&text)?
        .into_iter()
        .rev()
        .find(|(k, _)| k == "family")
        .map(|(_, v)| v)
        .ok_or_else(|| CliError::Config("gridsearch: config file must set 'family'".into()))?;
    Family::parse(&value)
}

fn run(command: Command) -> Result<(), CliError> {
    let (family, flags, grid) = match command {
        Command::Verify => {
            let failures = verify::run_battery();
            if failures > 0 {
                return Err(CliError::VerifyFailed(failures));
            }
            return Ok(());
        }
        Command::Supervised(c) => (Family::Supervised, c.into_flags(), false),
        Command::Frozenlake(c) => (Family::Frozenlake, c.into_flags(), false),
        Command::Cartpole(c) => (Family::Cartpole, c.into_flags(), false),
        Command::Lqr(c) => (Family::Lqr, c.into_flags(), false),
        Command::Gridsearch(c) => {
            let flags = c.into_flags();
            let family = family_from_config(&flags)?;
            (family, flags, true)
        }
    };

    let rs = config::resolve(family, &flags, grid)?;
    let output = runner::execute(&rs)?;

    println!(
        "run {}: {} cells, {} failed",
        rs.run_id, output.cells_total, output.cells_failed
    );
    if !output.grid_table.is_empty() {
        println!("{:<14} {:<14} failed_seeds", "alpha", "mean_final");
        for (alpha, mean, failed) in &output.grid_table {
            let shown = if mean.is_nan() {
                "nan".to_string()
            } else {
                format!("{mean:.6}")
            };
            println!("{:<14} {shown:<14} {failed}", format_f64(*alpha));
        }
        match output.best_alpha {
            Some(alpha) => println!("best alpha = {}", format_f64(alpha)),
            None => println!("best alpha = none (every grid point failed)"),
        }
    }
    println!("outputs in {}", rs.out.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
