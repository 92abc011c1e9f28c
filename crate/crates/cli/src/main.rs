//! Command-line front end: run closed-loop case studies, solve the
//! reference program, compare communication modes, and validate inputs.
//!
//! Exit codes: 0 success/converged, 1 parse or validation error,
//! 2 non-convergence (or a comparison outside its bound), 3 plant
//! collapse, 4 infeasible program.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mtdc", version, about = "Multi-terminal dc grid secondary-control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop scenario and write trajectory, summary, and
    /// trigger artifacts.
    Run(RunArgs),
    /// Solve the constrained steady-state program with the reference
    /// solver and print the primal-dual solution.
    Oracle(OracleArgs),
    /// Run the same scenario under periodic and event-triggered
    /// communication and compare terminal states and trigger counts.
    CompareComm(CompareArgs),
    /// Check a topology or scenario file against the model invariants.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseName {
    Loss,
    Quadratic,
    Proportional,
}

#[derive(Clone, Copy, ValueEnum)]
enum CommChoice {
    Continuous,
    Periodic,
    Event,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantChoice {
    Static,
    Dynamic,
}

#[derive(Args)]
struct ScenarioSource {
    /// Scenario file; mutually exclusive with --case.
    #[arg(long, conflicts_with = "case")]
    scenario: Option<PathBuf>,
    /// Bundled case study to run instead of an explicit scenario file.
    #[arg(long, value_enum)]
    case: Option<CaseName>,
}

#[derive(Args)]
struct Overrides {
    /// Override the communication mode.
    #[arg(long, value_enum)]
    comm: Option<CommChoice>,
    /// Sampling period for periodic mode [s].
    #[arg(long)]
    period: Option<f64>,
    /// Current deviation threshold σ_y [A].
    #[arg(long)]
    sigma_y: Option<f64>,
    /// Primal-state deviation threshold σ_x [V].
    #[arg(long)]
    sigma_x: Option<f64>,
    /// Conductance deviation threshold σ_G [1/Ω].
    #[arg(long)]
    sigma_g: Option<f64>,
    /// Minimum inter-sample time [s].
    #[arg(long)]
    t_min: Option<f64>,
    /// Heartbeat timeout [s].
    #[arg(long)]
    t_max: Option<f64>,
    /// Override the plant kind.
    #[arg(long, value_enum)]
    plant: Option<PlantChoice>,
    /// Override the run duration [s].
    #[arg(long)]
    duration: Option<f64>,
    /// Override the primal gain.
    #[arg(long)]
    k_p: Option<f64>,
    /// Override the current-constraint dual gain.
    #[arg(long)]
    k_d_current: Option<f64>,
    /// Override the voltage-constraint dual gain.
    #[arg(long)]
    k_d_voltage: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory for trajectory.csv, summary.txt, triggers.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    source: ScenarioSource,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[command(flatten)]
    overrides: Overrides,
    /// Acceptable terminal ‖u_event − u_periodic‖∞ [V]; defaults to 2·σ_x.
    #[arg(long)]
    bound: Option<f64>,
    /// Output directory for the comparison report.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Topology file to check.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Scenario file to check.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Oracle(args) => commands::oracle(args),
        Command::CompareComm(args) => commands::compare_comm(args),
        Command::Validate(args) => commands::validate(args),
    };
    ExitCode::from(code)
}
