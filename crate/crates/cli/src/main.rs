use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pmv_cli::{run, summarize::summarize, Command, CliError, EXIT_CONFIG, EXIT_GATE_FAIL, EXIT_PASS};

#[derive(Parser)]
#[command(name = "pmv", version, about = "Run porous-media viability experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides PMV_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check nonlinearities, coefficients, step size and initial state.
    Validate(RunArgs),
    /// Window-length convergence rates of the fundamental solution.
    Rates(RunArgs),
    /// Quasi-tangency bracket over a window grid.
    Tangency(RunArgs),
    /// Near-viability score over a family of control policies.
    Viability(RunArgs),
    /// Build, validate and compare ε-approximate solutions.
    Approx(RunArgs),
    /// Certify the stabilization conditions and check the decay.
    Stabilize(RunArgs),
    /// Print the gate tables of result directories.
    Summarize {
        dir: PathBuf,
    },
}

fn report(e: &CliError) -> u8 {
    eprintln!("error: {e}");
    e.exit_code() as u8
}

fn execute(cmd: Cmd) -> u8 {
    let (command, args) = match cmd {
        Cmd::Summarize { dir } => {
            return match summarize(&dir) {
                Ok((text, ok)) => {
                    print!("{text}");
                    if ok {
                        EXIT_PASS as u8
                    } else {
                        EXIT_GATE_FAIL as u8
                    }
                }
                Err(e) => report(&e),
            }
        }
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::Rates(a) => (Command::Rates, a),
        Cmd::Tangency(a) => (Command::Tangency, a),
        Cmd::Viability(a) => (Command::Viability, a),
        Cmd::Approx(a) => (Command::Approx, a),
        Cmd::Stabilize(a) => (Command::Stabilize, a),
    };
    match run(command, &args.config, args.out.as_deref()) {
        Ok(o) => {
            print!("{}", o.summary);
            println!("results in {}", o.out_dir.display());
            o.exit_code() as u8
        }
        Err(e) => report(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli.command)),
            Err(e) => {
                eprintln!("error: cannot start {n} threads: {e}");
                EXIT_CONFIG as u8
            }
        },
        None => execute(cli.command),
    };
    ExitCode::from(code)
}
