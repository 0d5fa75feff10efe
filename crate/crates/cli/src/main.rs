use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use foodchain_cli::{execute, load_config, CliError, Mode, Overrides};
use foodchain_core::BoundaryCondition;

/// Simulations and comparison checks for a three-species food chain.
///
/// Exit status: 0 on success, 1 on errors, 2 when the boundedness condition fails.
#[derive(Debug, Parser)]
#[command(name = "foodchain", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print `k`, `k*w3/D3` and whether `c` lies below it.
    CheckCondition(RunArgs),
    /// Integrate the ODE system.
    SimulateOde(RunArgs),
    /// Reaction-diffusion system on an interval.
    SimulatePde1d(RunArgs),
    /// Reaction-diffusion system on a rectangle.
    SimulatePde2d(RunArgs),
    /// Full system against the comparison system from oracle-chosen data.
    OracleCompare(RunArgs),
    /// The blow-up functional along an ODE trajectory.
    PsiTrace(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; check-condition writes nothing without it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the final time.
    #[arg(long)]
    t_end: Option<f64>,
    /// Overrides the boundary condition (PDE commands).
    #[arg(long, value_enum)]
    bc: Option<BcArg>,
    /// Overrides the norm-escape threshold.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BcArg {
    Neumann,
    Dirichlet,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (mode, args) = match cli.command {
        Command::CheckCondition(a) => (Mode::CheckCondition, a),
        Command::SimulateOde(a) => (Mode::Ode, a),
        Command::SimulatePde1d(a) => (Mode::Pde1d, a),
        Command::SimulatePde2d(a) => (Mode::Pde2d, a),
        Command::OracleCompare(a) => (Mode::OracleCompare, a),
        Command::PsiTrace(a) => (Mode::PsiTrace, a),
    };
    match run(mode, &args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(mode: Mode, args: &RunArgs) -> Result<i32, CliError> {
    let overrides = Overrides {
        t_end: args.t_end,
        bc: args.bc.map(|b| match b {
            BcArg::Neumann => BoundaryCondition::Neumann,
            BcArg::Dirichlet => BoundaryCondition::Dirichlet,
        }),
        threshold: args.threshold,
    };
    let cfg = load_config(&args.config, mode, &overrides)?;
    let out = match (&args.out, mode) {
        (Some(dir), _) => Some(dir.clone()),
        (None, Mode::CheckCondition) => None,
        (None, _) => Some(PathBuf::from("foodchain-out")),
    };
    let report = execute(&cfg, out.as_deref())?;
    for line in &report.lines {
        println!("{line}");
    }
    Ok(report.exit_code)
}
