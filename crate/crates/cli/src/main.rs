// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Command-line driver for the STIRAP optimal-control solvers.
//!
//! Verbs: `simulate` runs a schedule file, `solve` runs the selected
//! solver(s), `sweep` scans a (Γ, T) grid, `fit-singular` extracts the
//! singular constants from a trajectory CSV. Outputs are deterministic CSV
//! and JSON artifacts meant for diffing and regression.

mod commands;
mod csvio;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scenario::{Mode, Scenario, ScenarioBuilder, ScenarioFile, SolverChoice};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: malformed files, incompatible flags (exit code 2).
    Input(String),
    /// A solver gave up (exit code 3).
    Solver(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "stirap", about = "Dissipation-aware optimal control of STIRAP population transfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file; flags override its fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Dissipation rate Γ/Ω₀ of the intermediate state.
    #[arg(long)]
    gamma: Option<f64>,
    /// Protocol duration T in units of 1/Ω₀.
    #[arg(long)]
    duration: Option<f64>,
    /// Control bound for bounded mode.
    #[arg(long)]
    u_max: Option<f64>,
    /// Constraint regime for u = dθ/dt.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Which solver(s) to run.
    #[arg(long, value_enum)]
    solver: Option<SolverChoice>,
    /// Integrator step (normalized time).
    #[arg(long)]
    dt: Option<f64>,
    /// Hold intervals for direct transcription.
    #[arg(long)]
    n: Option<usize>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<Scenario, CliError> {
        let file = match &self.scenario {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str::<ScenarioFile>(&text).map_err(|e| {
                    CliError::Input(format!(
                        "malformed scenario {} (line {}, column {}): {e}",
                        path.display(),
                        e.line(),
                        e.column()
                    ))
                })?
            }
            None => ScenarioFile::default(),
        };
        let scenario = ScenarioBuilder {
            file,
            gamma: self.gamma,
            duration: self.duration,
            u_max: self.u_max,
            mode: self.mode,
            solver: self.solver,
            dt: self.dt,
            n: self.n,
        }
        .resolve();
        if !(scenario.dt > 0.0 && scenario.dt.is_finite()) {
            return Err(CliError::Input(format!("--dt must be positive, got {}", scenario.dt)));
        }
        Ok(scenario)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a schedule file and write the trajectory CSV.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// JSON list of segment records {type, angle|duration|c1|values}.
        #[arg(long)]
        schedule: PathBuf,
        /// Trajectory CSV path.
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
    },
    /// Solve for the optimal protocol and write the report JSON.
    Solve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Report JSON path.
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Also write the solved trajectory CSV here.
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// Optimize every (Γ, T) cell of a grid and write the efficiency CSV.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Dissipation rates, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        gamma_list: Vec<f64>,
        /// Durations, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        t_list: Vec<f64>,
        /// Sweep CSV path.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Fit the singular constants c1, c2 on a trajectory window.
    FitSingular {
        /// Trajectory CSV produced by `simulate` or `solve --traj`.
        #[arg(long)]
        traj: PathBuf,
        /// Fit window as start,end (normalized time).
        #[arg(long, value_delimiter = ',', required = true)]
        window: Vec<f64>,
        /// Dissipation rate the trajectory was generated with.
        #[arg(long)]
        gamma: f64,
        /// Constants JSON path.
        #[arg(long, default_value = "constants.json")]
        out: PathBuf,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { scenario, schedule, out } => {
            let sc = scenario.resolve()?;
            commands::simulate(&sc, &schedule, &out)
        }
        Command::Solve { scenario, out, traj } => {
            let sc = scenario.resolve()?;
            commands::solve(&sc, &out, traj.as_deref())
        }
        Command::Sweep { scenario, gamma_list, t_list, out } => {
            let sc = scenario.resolve()?;
            commands::sweep(&sc, &gamma_list, &t_list, &out)
        }
        Command::FitSingular { traj, window, gamma, out } => {
            if window.len() != 2 {
                return Err(CliError::Input(format!(
                    "--window takes exactly start,end; got {} values",
                    window.len()
                )));
            }
            commands::fit_singular(&traj, (window[0], window[1]), gamma, &out)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("input error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(3)
        }
    }
}
