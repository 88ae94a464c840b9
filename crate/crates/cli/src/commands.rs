// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Command implementations: simulate, solve, sweep, fit-singular.

use std::path::Path;

use serde::Serialize;
use stirap_core::direct::{self, DirectOptions, DiscretizedControl};
use stirap_core::dynamics::{run_schedule, ControlSchedule, TrajectoryTrace};
use stirap_core::report::Structure;
use stirap_core::{lossless, shooting, ProblemSpec, SolveReport};

use crate::csvio;
use crate::scenario::{Mode, Scenario, SolverChoice};
use crate::CliError;

fn solver_err(e: stirap_core::CoreError) -> CliError {
    CliError::Solver(e.to_string())
}

fn input_err(e: stirap_core::CoreError) -> CliError {
    CliError::Input(e.to_string())
}

pub fn simulate(scenario: &Scenario, schedule_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(schedule_path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", schedule_path.display())))?;
    let schedule: ControlSchedule = serde_json::from_str(&text).map_err(|e| {
        CliError::Input(format!(
            "malformed schedule {} (line {}, column {}): {e}",
            schedule_path.display(),
            e.line(),
            e.column()
        ))
    })?;
    let mut spec = scenario.problem_spec()?;
    // The schedule defines its own timed content; the scenario duration must
    // match it, and is derived from it when left at the default.
    let timed = schedule.timed_duration(spec.u_max);
    if (timed - spec.duration).abs() > 1e-9 {
        spec.duration = timed;
    }
    let trace = run_schedule(&spec, &schedule, scenario.dt).map_err(input_err)?;
    csvio::write_trajectory(out, &trace)?;
    println!(
        "simulate: {} samples, final populations ({:.6}, {:.6}, {:.6}) -> {}",
        trace.len(),
        trace.populations.last().unwrap()[0],
        trace.populations.last().unwrap()[1],
        trace.populations.last().unwrap()[2],
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CombinedReport {
    shooting: SolveReport,
    direct: SolveReport,
    population_agreement: f64,
}

pub fn solve(scenario: &Scenario, out: &Path, traj: Option<&Path>) -> Result<(), CliError> {
    scenario.validate()?;
    let spec = scenario.problem_spec()?;
    match scenario.solver {
        SolverChoice::Analytic => {
            let report = solve_analytic(scenario, &spec)?;
            write_report_json(out, &report)?;
            if let Some(path) = traj {
                let trace = trace_of_report(&spec, &report, scenario)?;
                csvio::write_trajectory(path, &trace)?;
            }
            println!("solve[analytic]: population {:.9} -> {}", report.final_population, out.display());
        }
        SolverChoice::Shooting => {
            // The trace comes from the solver's stable node sweep; replaying
            // the feedback schedule from t = 0 drifts on long arcs.
            let (report, trace) = shooting::solve_trace(&spec).map_err(solver_err)?;
            write_report_json(out, &report)?;
            if let Some(path) = traj {
                csvio::write_trajectory(path, &trace)?;
            }
            println!("solve[shooting]: population {:.9} -> {}", report.final_population, out.display());
        }
        SolverChoice::Direct => {
            let (report, ctrl) = solve_direct(scenario, &spec)?;
            write_report_json(out, &report)?;
            if let Some(path) = traj {
                let opts = direct_options(scenario);
                let trace = direct::simulate(&spec, &ctrl, &opts);
                csvio::write_trajectory(path, &trace)?;
            }
            println!("solve[direct]: population {:.9} -> {}", report.final_population, out.display());
        }
        SolverChoice::Both => {
            // The shooting side solves the idealized instantaneous-bang
            // problem, so it always runs unbounded.
            let ideal = ProblemSpec { u_max: f64::INFINITY, ..spec };
            let shooting_report = shooting::solve(&ideal).map_err(solver_err)?;
            let (direct_report, ctrl) = solve_direct(scenario, &spec)?;
            let agreement =
                (shooting_report.final_population - direct_report.final_population).abs();
            let combined = CombinedReport {
                shooting: shooting_report,
                direct: direct_report,
                population_agreement: agreement,
            };
            write_report_json(out, &combined)?;
            if let Some(path) = traj {
                let opts = direct_options(scenario);
                let trace = direct::simulate(&spec, &ctrl, &opts);
                csvio::write_trajectory(path, &trace)?;
            }
            println!(
                "solve[both]: populations {:.9} (shooting) / {:.9} (direct), agreement {:.2e} -> {}",
                combined.shooting.final_population,
                combined.direct.final_population,
                agreement,
                out.display()
            );
        }
    }
    Ok(())
}

fn direct_options(scenario: &Scenario) -> DirectOptions {
    DirectOptions { substep: scenario.dt, ..DirectOptions::default() }
}

fn solve_direct(scenario: &Scenario, spec: &ProblemSpec) -> Result<(SolveReport, DiscretizedControl), CliError> {
    let opts = direct_options(scenario);
    let (mut report, ctrl) = direct::optimize(spec, scenario.n, None, &opts).map_err(solver_err)?;
    // Fit the singular constants on the interior window when the optimized
    // control exposes one.
    if spec.gamma > 0.0 {
        if let Some(window) = direct::auto_window(&ctrl, spec.u_max) {
            let trace = direct::simulate(spec, &ctrl, &opts);
            if let Ok(fit) = direct::fit_singular_constants(&trace, spec.gamma, window) {
                if !fit.poor_fit {
                    report.c1 = fit.c1;
                    report.c2 = fit.c2;
                    report.structure = Structure::BangOffSingularOffBang;
                    let (_, fraction) = direct::classify_control(&ctrl, spec.u_max);
                    report.singular_fraction = fraction;
                }
            }
        }
    }
    Ok((report, ctrl))
}

fn solve_analytic(scenario: &Scenario, spec: &ProblemSpec) -> Result<SolveReport, CliError> {
    let (t_expect, schedule, structure, theta0) = match scenario.mode {
        Mode::Unconstrained => {
            let (t, s) = lossless::min_time_unconstrained();
            (t, s, Structure::BangSingularBang, std::f64::consts::FRAC_PI_2)
        }
        Mode::Nonnegative => {
            let (t, s) = lossless::min_time_nonnegative();
            (t, s, Structure::BangOffBang, std::f64::consts::FRAC_PI_4)
        }
        Mode::Bounded => unreachable!("rejected by validation"),
    };
    if (spec.duration - t_expect).abs() > 1e-9 {
        return Err(CliError::Input(format!(
            "the analytic {} protocol takes T = {t_expect:.6}; got --duration {}",
            structure, spec.duration
        )));
    }
    let trace = run_schedule(spec, &schedule, scenario.dt).map_err(input_err)?;
    let mut report = SolveReport::new("analytic", structure, spec.gamma, spec.duration, spec.u_max);
    report.final_population = trace.final_population();
    report.final_populations = *trace.populations.last().unwrap();
    report.theta0 = Some(theta0);
    report.t1 = match scenario.mode {
        Mode::Nonnegative => Some(t_expect),
        _ => None,
    };
    report.converged = true;
    report.status = "closed-form protocol".into();
    report.schedule = Some(schedule);
    Ok(report)
}

fn trace_of_report(
    spec: &ProblemSpec,
    report: &SolveReport,
    scenario: &Scenario,
) -> Result<TrajectoryTrace, CliError> {
    let schedule = report
        .schedule
        .as_ref()
        .ok_or_else(|| CliError::Solver("report carries no schedule to replay".into()))?;
    // Shooting/analytic schedules are idealized instantaneous-bang
    // protocols regardless of the scenario bound.
    let ideal = ProblemSpec { u_max: f64::INFINITY, ..*spec };
    run_schedule(&ideal, schedule, scenario.dt).map_err(solver_err)
}

fn write_report_json<T: Serialize>(path: &Path, report: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Solver(format!("report serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn sweep(
    scenario: &Scenario,
    gammas: &[f64],
    t_grid: &[f64],
    out: &Path,
) -> Result<(), CliError> {
    if gammas.is_empty() || t_grid.is_empty() {
        return Err(CliError::Input("sweep needs nonempty --gamma-list and --t-list".into()));
    }
    type CellOutcome = Result<(f64, Structure, f64), String>;
    let mut rows: Vec<(f64, f64, CellOutcome)> = Vec::new();
    match scenario.solver {
        SolverChoice::Shooting => {
            for &gamma in gammas {
                for &t_total in t_grid {
                    let cell = ProblemSpec::new(gamma, t_total, f64::INFINITY)
                        .map_err(|e| CliError::Input(e.to_string()))
                        .and_then(|spec| shooting::solve(&spec).map_err(solver_err))
                        .map(|rep| (rep.final_population, rep.structure, rep.singular_fraction));
                    rows.push((gamma, t_total, cell.map_err(|e| e.to_string())));
                }
            }
        }
        _ => {
            if scenario.mode != Mode::Bounded {
                return Err(CliError::Input(
                    "direct sweeps need --mode bounded; use --solver shooting otherwise".into(),
                ));
            }
            let opts = direct_options(scenario);
            let n_for = |t: f64| ((t / 0.05).round() as usize).max(40);
            let cells = direct::efficiency_sweep(gammas, t_grid, scenario.u_max, n_for, &opts)
                .map_err(solver_err)?;
            for cell in cells {
                let entry = match cell.error {
                    None => Ok((cell.population, cell.structure, cell.singular_fraction)),
                    Some(e) => Err(e),
                };
                rows.push((cell.gamma, cell.duration, entry));
            }
        }
    }

    let mut text = String::from("gamma,T,population,structure,singular_fraction,status\n");
    let mut ok = 0usize;
    for (gamma, t_total, cell) in &rows {
        match cell {
            Ok((pop, structure, fraction)) => {
                ok += 1;
                text.push_str(&format!(
                    "{gamma:.8e},{t_total:.8e},{pop:.8e},{structure},{fraction:.8e},ok\n"
                ));
            }
            Err(e) => {
                let clean = e.replace([',', '\n'], ";");
                text.push_str(&format!("{gamma:.8e},{t_total:.8e},nan,failed,nan,{clean}\n"));
            }
        }
    }
    std::fs::write(out, &text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.display())))?;
    println!("sweep: {}/{} cells solved -> {}", ok, rows.len(), out.display());
    if (ok as f64) < 0.9 * rows.len() as f64 {
        return Err(CliError::Solver(format!(
            "only {ok} of {} sweep cells solved",
            rows.len()
        )));
    }
    Ok(())
}

pub fn fit_singular(
    traj: &Path,
    window: (f64, f64),
    gamma: f64,
    out: &Path,
) -> Result<(), CliError> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(CliError::Input(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let trace = csvio::read_trajectory(traj)?;
    let fit = direct::fit_singular_constants(&trace, gamma, window).map_err(input_err)?;
    write_report_json(out, &fit)?;
    match (&fit.c1, fit.poor_fit) {
        (Some(c1), false) => println!(
            "fit-singular: c1 = {c1:.6}, c2 = {}, feedback rms {:.3e} -> {}",
            fit.c2.map_or("n/a".into(), |c| format!("{c:.4}")),
            fit.rms_control,
            out.display()
        ),
        _ => println!(
            "fit-singular: window does not look singular (feedback rms {:.3e}) -> {}",
            fit.rms_control,
            out.display()
        ),
    }
    Ok(())
}
