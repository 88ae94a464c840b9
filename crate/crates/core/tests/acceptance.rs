// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them stream).
//!
//! The criteria pin the published reference values of the Γ/Ω₀ = 0.1,
//! Ω₀T = 20 example (c₁ = -0.081368, c₂ = 31.556), the lossless minimum-time
//! solutions (T = π√3 unconstrained, T = 2π under u ≥ 0), and the
//! conservation laws of the Pontryagin machinery on every solved extremal.

use std::f64::consts::{FRAC_PI_4, PI};
use std::sync::OnceLock;
use std::time::Instant;

use stirap_core::direct::{self, DirectOptions};
use stirap_core::dynamics::{run_schedule, ProblemSpec};
use stirap_core::pmp::{self, AdjointState};
use stirap_core::report::Structure;
use stirap_core::{lossless, shooting, SolveReport};

struct Criterion {
    number: u32,
    name: &'static str,
    budget: f64,
    started: Instant,
}

impl Criterion {
    fn start(number: u32, name: &'static str, budget: f64) -> Self {
        Self { number, name, budget, started: Instant::now() }
    }

    fn pass(self, detail: &str) {
        let dt = self.started.elapsed().as_secs_f64();
        println!(
            "acceptance criterion {} ({}): PASS in {dt:.2} s (budget {} s) — {detail}",
            self.number, self.name, self.budget
        );
        assert!(
            dt < self.budget,
            "criterion {} exceeded its runtime budget: {dt:.2} s > {} s",
            self.number,
            self.budget
        );
    }
}

/// The dual-solver grid: (Γ, T) cells solved once and reused by the
/// conservation and identity criteria.
const GRID: [(f64, f64); 9] = [
    (0.05, 10.0),
    (0.05, 15.0),
    (0.05, 20.0),
    (0.1, 10.0),
    (0.1, 15.0),
    (0.1, 20.0),
    (0.2, 10.0),
    (0.2, 15.0),
    (0.2, 20.0),
];

fn shooting_grid() -> &'static Vec<(f64, f64, SolveReport)> {
    static CELL: OnceLock<Vec<(f64, f64, SolveReport)>> = OnceLock::new();
    CELL.get_or_init(|| {
        let handles: Vec<_> = GRID
            .iter()
            .map(|&(gamma, t_total)| {
                std::thread::spawn(move || {
                    let spec = ProblemSpec::new(gamma, t_total, f64::INFINITY).unwrap();
                    let report = shooting::solve(&spec)
                        .unwrap_or_else(|e| panic!("shooting failed at ({gamma}, {t_total}): {e}"));
                    (gamma, t_total, report)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

#[test]
fn criterion_1_lossless_minimum_time() {
    let c = Criterion::start(1, "lossless minimum time", 1.0);
    let (t_total, schedule) = lossless::min_time_unconstrained();
    assert!((t_total - PI * 3.0_f64.sqrt()).abs() < 1e-12);
    let spec = ProblemSpec::new(0.0, t_total, f64::INFINITY).unwrap().with_negative_u(true);
    let trace = run_schedule(&spec, &schedule, 1e-3).unwrap();
    let pop = trace.final_population();
    assert!(pop >= 1.0 - 1e-8, "population {pop}");
    c.pass(&format!("T = pi*sqrt(3), |C3(T)|^2 = {pop:.12}"));
}

#[test]
fn criterion_2_nonnegative_minimum_time() {
    let c = Criterion::start(2, "nonnegative-control minimum time", 1.0);
    let (t_total, schedule) = lossless::min_time_nonnegative();
    assert!((t_total - 2.0 * PI).abs() < 1e-12);
    let spec = ProblemSpec::new(0.0, t_total, f64::INFINITY).unwrap();
    let trace = run_schedule(&spec, &schedule, 1e-3).unwrap();
    let pop = trace.final_population();
    assert!(pop >= 1.0 - 1e-8, "population {pop}");
    c.pass(&format!("theta0 = pi/4, T = 2*pi, |C3(T)|^2 = {pop:.12}"));
}

#[test]
fn criterion_3_family_consistency() {
    let c = Criterion::start(3, "bang-constant-bang family", 1.0);
    let fam = lossless::solve_family(0.0).unwrap();
    assert!((fam.theta0 - FRAC_PI_4).abs() < 1e-10, "theta0 {}", fam.theta0);
    assert!((fam.phi - PI).abs() < 1e-10, "phi {}", fam.phi);
    assert!((fam.duration - 2.0 * PI).abs() < 1e-10, "T {}", fam.duration);
    // dT/du against centered finite differences at five controls.
    let h = 1e-6;
    for &u in &[-0.25, -0.12, 0.0, 0.05, 0.1] {
        let analytic = lossless::dt_du(&lossless::solve_family(u).unwrap()).unwrap();
        let fd = (lossless::solve_family(u + h).unwrap().duration
            - lossless::solve_family(u - h).unwrap().duration)
            / (2.0 * h);
        let rel = (analytic - fd).abs() / fd.abs().max(1e-12);
        assert!(rel < 1e-5, "u = {u}: dT/du {analytic} vs FD {fd} (rel {rel})");
    }
    // Monotonicity across the admissible family.
    for k in 0..50 {
        let u = -0.285 + (0.125 + 0.285) * k as f64 / 49.0;
        let d = lossless::dt_du(&lossless::solve_family(u).unwrap()).unwrap();
        assert!(d >= -1e-12, "dT/du = {d} at u = {u}");
    }
    c.pass("(theta0, phi, T)(u=0) = (pi/4, pi, 2*pi); dT/du >= 0 on 50-point grid");
}

#[test]
fn criterion_4_reference_reproduction() {
    let c = Criterion::start(4, "direct solver reproduces the reference case", 60.0);
    let spec = ProblemSpec::new(0.1, 20.0, 1.0).unwrap();
    let opts = DirectOptions { max_iters: 8000, ..DirectOptions::default() };
    let (rep, ctrl) = direct::optimize(&spec, 400, None, &opts).unwrap();
    let sym = direct::control_symmetry_defect(&ctrl);
    assert!(sym < 1e-2, "symmetry defect {sym}");
    let (structure, fraction) = direct::classify_control(&ctrl, spec.u_max);
    assert_eq!(structure, Structure::BangOffSingularOffBang);
    assert!(fraction > 0.3, "singular fraction {fraction}");
    let window = direct::auto_window(&ctrl, spec.u_max).expect("interior singular window");
    let trace = direct::simulate(&spec, &ctrl, &opts);
    let fit = direct::fit_singular_constants(&trace, spec.gamma, window).unwrap();
    let c1 = fit.c1.expect("c1 fit");
    let c2 = fit.c2.expect("c2 fit");
    assert!(
        (c1 - (-0.081368)).abs() < 0.1 * 0.081368,
        "c1 = {c1} not within 10% of -0.081368"
    );
    assert!((c2 - 31.556).abs() < 0.1 * 31.556, "c2 = {c2} not within 10% of 31.556");
    let rms_surface = fit.rms_surface.unwrap();
    assert!(rms_surface < 1e-3, "surface residual RMS {rms_surface}");
    assert!(fit.rms_control < 1e-2, "feedback RMS {}", fit.rms_control);
    let pg = rep.projected_gradient_norm.unwrap();
    assert!(pg < 1e-4, "projected gradient {pg} at the solved control");
    c.pass(&format!(
        "population {:.6}, symmetry defect {sym:.1e}, c1 = {c1:.6}, c2 = {c2:.3}, surface RMS {rms_surface:.1e}",
        rep.final_population
    ));
}

#[test]
fn criterion_5_dual_solver_agreement() {
    let c = Criterion::start(5, "shooting and direct solvers agree", 300.0);
    let shooting_cells = shooting_grid();
    let opts = DirectOptions { substep: 5e-3, max_iters: 20000, ..DirectOptions::default() };
    let handles: Vec<_> = GRID
        .iter()
        .map(|&(gamma, t_total)| {
            std::thread::spawn(move || {
                let spec = ProblemSpec::new(gamma, t_total, 8.0).unwrap();
                let n = (t_total / 0.02).round() as usize;
                let (rep, _) = direct::optimize(&spec, n, None, &opts).unwrap();
                (gamma, t_total, rep.final_population)
            })
        })
        .collect();
    let mut worst = 0.0_f64;
    for h in handles {
        let (gamma, t_total, direct_pop) = h.join().unwrap();
        let (_, _, shooting_rep) = shooting_cells
            .iter()
            .find(|(g, t, _)| *g == gamma && *t == t_total)
            .unwrap();
        let gap = (shooting_rep.final_population - direct_pop).abs();
        worst = worst.max(gap);
        assert!(
            gap < 1e-3,
            "populations disagree at (gamma = {gamma}, T = {t_total}): shooting {} vs direct {direct_pop}",
            shooting_rep.final_population
        );
    }
    c.pass(&format!("worst |pop_shooting - pop_direct| = {worst:.2e} over the 3x3 grid"));
}

#[test]
fn criterion_6_efficiency_curve() {
    let c = Criterion::start(6, "efficiency curve properties", 600.0);
    let gammas = [0.1, 0.2];
    let t_grid: Vec<f64> = (0..12).map(|k| 8.0 + 2.0 * k as f64).collect();
    let opts = DirectOptions { substep: 5e-3, max_iters: 4000, ..DirectOptions::default() };
    let n_for = |t: f64| ((t / 0.05).round() as usize).max(40);
    let cells = direct::efficiency_sweep(&gammas, &t_grid, 1.0, n_for, &opts).unwrap();
    let pop = |gamma: f64, t: f64| -> f64 {
        cells
            .iter()
            .find(|c| c.gamma == gamma && c.duration == t)
            .map(|c| c.population)
            .unwrap()
    };
    for &gamma in &gammas {
        for w in t_grid.windows(2) {
            let (a, b) = (pop(gamma, w[0]), pop(gamma, w[1]));
            assert!(
                b >= a - 1e-6,
                "population not non-decreasing at gamma = {gamma}: {a} at T = {} vs {b} at T = {}",
                w[0],
                w[1]
            );
        }
    }
    for &t in &t_grid {
        let (lo, hi) = (pop(0.2, t), pop(0.1, t));
        assert!(hi >= lo, "gamma = 0.1 row not dominating at T = {t}: {hi} vs {lo}");
    }
    // Structure transition near T = 2*pi for small dissipation: the shooting
    // structure flips from bang-off-bang to singular across the onset.
    let onset = shooting::singular_onset_duration(0.1);
    assert!((onset - 2.0 * PI).abs() < 0.5, "onset {onset} far from 2*pi");
    let below = shooting::solve(&ProblemSpec::new(0.1, onset - 0.5, f64::INFINITY).unwrap()).unwrap();
    let above = shooting::solve(&ProblemSpec::new(0.1, onset + 0.7, f64::INFINITY).unwrap()).unwrap();
    assert_eq!(below.structure, Structure::BangOffBang);
    assert_eq!(above.structure, Structure::BangOffSingularOffBang);
    c.pass(&format!(
        "monotone rows, gamma = 0.1 dominates, structure flips across T = {onset:.2} (close to 2*pi)"
    ));
}

#[test]
fn criterion_7_pmp_conservation() {
    let c = Criterion::start(7, "PMP conservation suite", 300.0);
    let mut worst_hc = 0.0_f64;
    let mut worst_mc = 0.0_f64;
    let mut worst_phi = 0.0_f64;
    for (gamma, t_total, rep) in shooting_grid() {
        let hc = rep.hc_drift.unwrap();
        let mc = rep.motion_constant_drift.unwrap();
        let phi = rep.max_switching_on_singular.unwrap();
        assert!(hc < 1e-8, "Hc drift {hc} at ({gamma}, {t_total})");
        assert!(mc < 1e-8, "motion-constant drift {mc} at ({gamma}, {t_total})");
        assert!(phi < 1e-6, "switching |phi| = {phi} on the singular arc at ({gamma}, {t_total})");
        worst_hc = worst_hc.max(hc);
        worst_mc = worst_mc.max(mc);
        worst_phi = worst_phi.max(phi);
    }
    // Bangs leave the adjoint's lambda_y untouched to machine precision.
    let mut worst_ly = 0.0_f64;
    for k in 0..40 {
        let adj = AdjointState::new([0.37 - 0.01 * k as f64, -0.82 + 0.03 * k as f64, 0.51], 0.23);
        let rotated = pmp::bang_adjoint(&adj, 0.05 + 0.04 * k as f64);
        worst_ly = worst_ly.max((rotated.lambda[1] - adj.lambda[1]).abs());
    }
    assert!(worst_ly < 1e-14, "lambda_y moved by {worst_ly} across a bang");
    c.pass(&format!(
        "worst Hc drift {worst_hc:.1e}/unit time, motion drift {worst_mc:.1e}, arc |phi| {worst_phi:.1e}, lambda_y bang shift {worst_ly:.1e}"
    ));
}

#[test]
fn criterion_8_gradient_correctness() {
    let c = Criterion::start(8, "adjoint gradient vs finite differences", 120.0);
    struct Lcg(u64);
    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }
    }
    let mut rng = Lcg(2026);
    let opts = DirectOptions::default();
    let mut worst = 0.0_f64;
    for trial in 0..10 {
        let gamma = 0.05 + 0.2 * rng.next_f64();
        let t_total = 4.0 + 6.0 * rng.next_f64();
        let spec = ProblemSpec::new(gamma, t_total, 1.0).unwrap();
        let n = 50;
        let u: Vec<f64> = (0..n).map(|_| 0.1 + 0.8 * rng.next_f64()).collect();
        let ctrl = direct::DiscretizedControl { u, dt: t_total / n as f64 };
        let (_, grad) = direct::objective_and_gradient_with(&spec, &ctrl, &opts);
        let h = 1e-5;
        for k in 0..n {
            let mut up = ctrl.clone();
            up.u[k] += h;
            let mut dn = ctrl.clone();
            dn.u[k] -= h;
            let (jp, _) = direct::objective_and_gradient_with(&spec, &up, &opts);
            let (jm, _) = direct::objective_and_gradient_with(&spec, &dn, &opts);
            let fd = (jp - jm) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-10);
            assert!(
                rel < 1e-5,
                "trial {trial}, interval {k}: gradient {} vs FD {fd} (rel {rel})",
                grad[k]
            );
            worst = worst.max(rel);
        }
    }
    c.pass(&format!("worst relative error {worst:.2e} over 10 random controls"));
}

#[test]
fn criterion_9_transfer_identity() {
    let c = Criterion::start(9, "z(T) equals lambda_z(0) on solved extremals", 300.0);
    let mut worst = 0.0_f64;
    for (gamma, t_total, rep) in shooting_grid() {
        let gap = rep.transfer_identity_gap.unwrap().abs();
        assert!(gap < 1e-6, "identity gap {gap} at ({gamma}, {t_total})");
        worst = worst.max(gap);
    }
    c.pass(&format!("worst |z(T) - lambda_z(0)| = {worst:.2e} over the grid"));
}
