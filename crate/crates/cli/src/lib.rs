//! Experiment runner: reads a JSON config, runs one command, writes CSV
//! tables, `gates.csv` and `summary.txt`, and maps the outcome to an exit
//! code.

pub mod config;
pub mod experiments;
pub mod output;
pub mod summarize;

use std::path::{Path, PathBuf};

use config::Config;
use output::{gate_table, Output};

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "PMV_OUT_DIR";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_GATE_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("validation failed:\n{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] pmv_core::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use pmv_core::Error as E;
        match self {
            CliError::Core(E::Divergence { .. }) => EXIT_DIVERGENCE,
            CliError::Core(E::RateFit(_) | E::Comparison(_) | E::TangencyFailure { .. }) => EXIT_GATE_FAIL,
            _ => EXIT_CONFIG,
        }
    }
}

/// Commands accepted by [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Rates,
    Tangency,
    Viability,
    Approx,
    Stabilize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Rates => "rates",
            Command::Tangency => "tangency",
            Command::Viability => "viability",
            Command::Approx => "approx",
            Command::Stabilize => "stabilize",
        }
    }
}

/// Output directory: the explicit one, else `$PMV_OUT_DIR/<name>`, else
/// `results/<name>`.
pub fn resolve_out_dir(explicit: Option<&Path>, name: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d).join(name),
        _ => PathBuf::from("results").join(name),
    }
}

/// Outcome of a successful run.
#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub passed: bool,
    pub summary: String,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_PASS
        } else {
            EXIT_GATE_FAIL
        }
    }
}

/// Runs `command` on the config at `config_path`.
pub fn run(command: Command, config_path: &Path, out: Option<&Path>) -> Result<Outcome, CliError> {
    let cfg = Config::load(config_path)?;
    run_config(command, &cfg, out)
}

pub fn run_config(command: Command, cfg: &Config, out: Option<&Path>) -> Result<Outcome, CliError> {
    let dir = resolve_out_dir(out, &cfg.name);
    let output = Output::create(&dir)?;
    let mut summary = format!("experiment {} ({})\nseed {}\n", cfg.name, command.name(), cfg.seed);
    if command == Command::Validate {
        let rep = experiments::validate(cfg, &output)?;
        summary.push_str(&format!("\n{rep}"));
        output.summary(&summary)?;
        if !rep.passed() {
            let lines: Vec<String> = rep
                .failures()
                .map(|i| format!("  {}: {} exceeds {} {}", i.name, i.value, i.threshold, i.detail))
                .collect();
            return Err(CliError::Validation(lines.join("\n")));
        }
        return Ok(Outcome { out_dir: dir, passed: true, summary });
    }
    if cfg.experiment.command() != command.name() {
        return Err(CliError::Config(format!(
            "config describes a {} experiment, not {}",
            cfg.experiment.command(),
            command.name()
        )));
    }
    let rep = experiments::run(cfg, &output)?;
    output.gates(&rep.gates)?;
    let passed = rep.gates.iter().all(|g| g.passed);
    summary.push('\n');
    summary.push_str(&gate_table(&rep.gates));
    summary.push('\n');
    for n in &rep.notes {
        summary.push_str(n);
        summary.push('\n');
    }
    summary.push_str(if passed { "\noverall PASS\n" } else { "\noverall FAIL\n" });
    output.summary(&summary)?;
    Ok(Outcome { out_dir: dir, passed, summary })
}
