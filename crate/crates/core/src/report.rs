// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Solver output record shared by the shooting and direct solvers.

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlSchedule;

/// Pulse-sequence structure of a solution.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    BangOffBang,
    BangOffSingularOffBang,
    BangSingularBang,
    /// Direct-transcription output with no imposed structure.
    Sampled,
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Structure::BangOffBang => write!(f, "bang-off-bang"),
            Structure::BangOffSingularOffBang => write!(f, "bang-off-singular-off-bang"),
            Structure::BangSingularBang => write!(f, "bang-singular-bang"),
            Structure::Sampled => write!(f, "sampled"),
        }
    }
}

/// A root of the shooting conditions, kept for the multiplicity log.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootCandidate {
    pub theta0: f64,
    pub t1: f64,
    pub c1: f64,
    pub population: f64,
}

/// Everything a solve produces: the protocol, the optimality data and the
/// conservation diagnostics used by the verification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    pub structure: Structure,
    pub gamma: f64,
    pub duration: f64,
    /// None means unbounded control (idealized instantaneous bangs).
    pub u_max: Option<f64>,
    pub final_population: f64,
    /// (|C₁|², |C₂|², |C₃|²) at t = T.
    pub final_populations: [f64; 3],
    /// Bang angle θ₀ (per bang).
    pub theta0: Option<f64>,
    /// Off-pulse duration; for bang-off-bang solutions this is the single
    /// merged off segment.
    pub t1: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub mu: Option<f64>,
    /// Control-Hamiltonian level c = -c₁ μ / 2.
    pub c: Option<f64>,
    /// Motion-constant level c' = c₂ μ.
    pub c_prime: Option<f64>,
    /// (λ̄x(T), λ̄y(T)) of the shooting conditions.
    pub terminal_residuals: Option<[f64; 2]>,
    /// sup |u(t) - u(T-t)| on the solution grid.
    pub symmetry_defect: Option<f64>,
    /// Fraction of the horizon occupied by the singular arc.
    pub singular_fraction: f64,
    /// Largest |Hc - c| per unit time over the interior (bangs excluded).
    pub hc_drift: Option<f64>,
    /// Largest drift of λ̄·(x, y, z) over the horizon.
    pub motion_constant_drift: Option<f64>,
    /// Largest |φ| along the singular arc.
    pub max_switching_on_singular: Option<f64>,
    /// z(T) - λz(0); vanishes on extremals.
    pub transfer_identity_gap: Option<f64>,
    /// Projected-gradient norm at the final direct-solver iterate.
    pub projected_gradient_norm: Option<f64>,
    pub iterations: Option<u64>,
    pub converged: bool,
    pub status: String,
    pub schedule: Option<ControlSchedule>,
    /// All shooting roots found, best first.
    #[serde(default)]
    pub roots: Vec<RootCandidate>,
}

impl SolveReport {
    pub fn new(solver: &str, structure: Structure, gamma: f64, duration: f64, u_max: f64) -> Self {
        Self {
            solver: solver.to_string(),
            structure,
            gamma,
            duration,
            u_max: if u_max.is_finite() { Some(u_max) } else { None },
            final_population: f64::NAN,
            final_populations: [f64::NAN; 3],
            theta0: None,
            t1: None,
            c1: None,
            c2: None,
            mu: None,
            c: None,
            c_prime: None,
            terminal_residuals: None,
            symmetry_defect: None,
            singular_fraction: 0.0,
            hc_drift: None,
            motion_constant_drift: None,
            max_switching_on_singular: None,
            transfer_identity_gap: None,
            projected_gradient_norm: None,
            iterations: None,
            converged: false,
            status: String::new(),
            schedule: None,
            roots: Vec::new(),
        }
    }
}
