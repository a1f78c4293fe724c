//! Experiment runner for the optimizer library: per-family subcommands,
//! multi-seed orchestration, learning-rate grid search, CSV emission, and
//! plot-script generation. The binary is a thin wrapper; everything lives
//! here so the test suites can drive the same code paths in-process.

pub mod config;
pub mod plotgen;
pub mod runner;
pub mod verify;

/// Process-level outcomes, each with a fixed exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unparseable or invalid config, unwritable layout: exit 2.
    Config(String),
    /// Every (alpha, seed) cell failed to produce usable records: exit 3.
    AllRunsDiverged,
    /// One or more verification checks failed: exit 4.
    VerifyFailed(usize),
    /// Filesystem trouble outside the operator's config: exit 1.
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::AllRunsDiverged => 3,
            CliError::VerifyFailed(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::AllRunsDiverged => write!(f, "all runs diverged"),
            CliError::VerifyFailed(n) => write!(f, "{n} verification check(s) failed"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}
