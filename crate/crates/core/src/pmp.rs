// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Pontryagin machinery for the dark/bright-frame control problem.
//!
//! The control Hamiltonian is
//!
//! ```text
//!   Hc = (λx z - λz x + μ) u + λx y/2 - Γ λy y/2 - λy x/2
//! ```
//!
//! with (λx, λy, λz) the costates of (x, y, z) and μ the constant multiplier
//! of the cyclic angle θ. The coefficient of u is the switching function φ;
//! arcs with φ ≡ 0 are singular and carry the state-feedback control
//! u_s = (z/y)(c₁ z/y - 1/2) with c₁ = -2c/μ set by the conserved value
//! Hc = c. Since μ ≠ 0 on the extremals of interest, all singular-arc algebra
//! here uses the normalized costate λ̄ = λ/μ, i.e. an [`AdjointState`] with
//! `mu = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numeric::{rk4_step, step_count};

/// Singular feedback rejects |y| below this floor; the finite-time arcs keep
/// y bounded away from zero, so hitting the floor signals a degenerate arc.
pub const Y_FLOOR: f64 = 1e-10;

/// Costate vector (λx, λy, λz) plus the constant multiplier μ of θ.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjointState {
    pub lambda: [f64; 3],
    pub mu: f64,
}

impl AdjointState {
    pub fn new(lambda: [f64; 3], mu: f64) -> Self {
        Self { lambda, mu }
    }

    /// Normalized costate λ̄ = λ/μ, represented with μ = 1.
    pub fn normalized(lambda_bar: [f64; 3]) -> Self {
        Self { lambda: lambda_bar, mu: 1.0 }
    }

    /// Terminal condition for maximizing z(T): λ(T) = (0, 0, 1).
    pub fn terminal(mu: f64) -> Self {
        Self { lambda: [0.0, 0.0, 1.0], mu }
    }
}

/// Costate trajectory on a uniform grid.
#[derive(Clone, Debug, Default)]
pub struct AdjointTrace {
    pub times: Vec<f64>,
    pub lambdas: Vec<[f64; 3]>,
    pub mu: f64,
}

/// Integration direction for [`propagate_adjoint`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Initial value given at t = 0, integrate to t = duration.
    Forward,
    /// Value given at t = duration, integrate back to t = 0.
    Backward,
}

/// Hc(state, λ, u). Constant along extremals of the autonomous problem.
pub fn control_hamiltonian(db: &[f64; 3], adjoint: &AdjointState, u: f64, gamma: f64) -> f64 {
    let [x, y, _z] = *db;
    let [lx, ly, _lz] = adjoint.lambda;
    switching_function(db, adjoint) * u + 0.5 * lx * y - 0.5 * gamma * ly * y - 0.5 * ly * x
}

/// φ = λx z - λz x + μ, the coefficient of u in Hc.
pub fn switching_function(db: &[f64; 3], adjoint: &AdjointState) -> f64 {
    let [x, _y, z] = *db;
    let [lx, _ly, lz] = adjoint.lambda;
    lx * z - lz * x + adjoint.mu
}

pub(crate) fn adjoint_rhs(gamma: f64, u: f64, l: &[f64; 3]) -> [f64; 3] {
    let [lx, ly, lz] = *l;
    // Note the sign of the Γ term is opposite to the state equation.
    [u * lz + 0.5 * ly, 0.5 * (gamma * ly - lx), -u * lx]
}

/// Propagate the costate under a prescribed control u(t).
///
/// Times are relative to the integration window: the returned trace always
/// runs over ascending t in [0, duration]. For `Direction::Backward` the
/// supplied value is taken at t = duration and `lambdas[0]` holds λ(0).
pub fn propagate_adjoint<F>(
    adjoint: &AdjointState,
    u_of_t: F,
    gamma: f64,
    dt: f64,
    duration: f64,
    direction: Direction,
) -> Result<AdjointTrace>
where
    F: Fn(f64) -> f64,
{
    if !(dt > 0.0 && dt.is_finite() && duration >= 0.0 && duration.is_finite()) {
        return Err(CoreError::InvalidInput(format!(
            "bad grid: dt = {dt}, duration = {duration}"
        )));
    }
    let (n, h) = step_count(duration, dt);
    let mut lambdas = vec![[0.0; 3]; n + 1];
    let mut times = vec![0.0; n + 1];
    for (k, t) in times.iter_mut().enumerate() {
        *t = k as f64 * h;
    }
    match direction {
        Direction::Forward => {
            let mut l = adjoint.lambda;
            lambdas[0] = l;
            for k in 0..n {
                let t = k as f64 * h;
                let rhs = |tt: f64, ll: &[f64; 3]| adjoint_rhs(gamma, u_of_t(tt), ll);
                if !u_of_t(t + 0.5 * h).is_finite() {
                    return Err(CoreError::InvalidInput(format!("u({}) not finite", t + 0.5 * h)));
                }
                l = rk4_step(&rhs, t, &l, h);
                lambdas[k + 1] = l;
            }
        }
        Direction::Backward => {
            let mut l = adjoint.lambda;
            lambdas[n] = l;
            for k in (0..n).rev() {
                // Step from t_{k+1} down to t_k with a negative step.
                let t = (k + 1) as f64 * h;
                let rhs = |tt: f64, ll: &[f64; 3]| adjoint_rhs(gamma, u_of_t(tt), ll);
                if !u_of_t(t - 0.5 * h).is_finite() {
                    return Err(CoreError::InvalidInput(format!("u({}) not finite", t - 0.5 * h)));
                }
                l = rk4_step(&rhs, t, &l, -h);
                lambdas[k] = l;
            }
        }
    }
    Ok(AdjointTrace { times, lambdas, mu: adjoint.mu })
}

/// Bangs rotate (λx, λz) exactly like (x, z) and leave λy untouched.
pub fn bang_adjoint(adjoint: &AdjointState, angle: f64) -> AdjointState {
    AdjointState {
        lambda: crate::dynamics::bang_rotation(&adjoint.lambda, angle),
        mu: adjoint.mu,
    }
}

/// Singular feedback u_s = (z/y)(c₁ z/y - 1/2). Defined only away from y = 0.
pub fn singular_feedback(db: &[f64; 3], c1: f64) -> Result<f64> {
    singular_feedback_raw(db, c1)
}

pub(crate) fn singular_feedback_raw(db: &[f64; 3], c1: f64) -> Result<f64> {
    if db[1].abs() < Y_FLOOR {
        return Err(CoreError::DomainError(format!(
            "singular feedback undefined: |y| = {} below {Y_FLOOR}",
            db[1].abs()
        )));
    }
    Ok(singular_feedback_unchecked(db, c1))
}

#[inline]
pub(crate) fn singular_feedback_unchecked(db: &[f64; 3], c1: f64) -> f64 {
    let q = db[2] / db[1];
    q * (c1 * q - 0.5)
}

/// Residual of the singular-surface equation
/// y/z + Γ (y/r)² (c₂ + x/z) - c₁ with r² = x² + y² + z².
/// Vanishes identically on singular arcs; for Γ = 0 it reduces to the plane
/// y/z = c₁.
pub fn singular_surface_residual(db: &[f64; 3], c1: f64, c2: f64, gamma: f64) -> Result<f64> {
    let [x, y, z] = *db;
    if z == 0.0 {
        return Err(CoreError::DomainError("singular surface undefined at z = 0".into()));
    }
    let r2 = x * x + y * y + z * z;
    if r2 <= 0.0 {
        return Err(CoreError::DomainError("singular surface undefined at r = 0".into()));
    }
    Ok(y / z + gamma * (y * y / r2) * (c2 + x / z) - c1)
}

/// Normalized costate λ̄ = λ/μ on the singular arc, solved from
/// φ = φ̇ = φ̈ = 0 at the given state and control. Requires Γ > 0 and both
/// y and z bounded away from zero.
pub fn singular_multipliers(db: &[f64; 3], u: f64, gamma: f64) -> Result<[f64; 3]> {
    let [x, y, z] = *db;
    if gamma <= 0.0 {
        return Err(CoreError::DomainError(
            "singular multipliers need gamma > 0 (the lossless arc fixes them differently)".into(),
        ));
    }
    if y.abs() < Y_FLOOR || z.abs() < Y_FLOOR {
        return Err(CoreError::DomainError(format!(
            "singular multipliers degenerate at y = {y}, z = {z}"
        )));
    }
    let w = u * y - 0.5 * z;
    Ok([
        x * w / (gamma * y * z * z) - 1.0 / z,
        w / (gamma * z * z),
        w / (gamma * y * z),
    ])
}

/// The conserved quantity λ̄·(x, y, z) = c₂ (it equals c'/μ on extremals).
pub fn motion_constant(db: &[f64; 3], lambda_bar: &[f64; 3]) -> f64 {
    lambda_bar[0] * db[0] + lambda_bar[1] * db[1] + lambda_bar[2] * db[2]
}
