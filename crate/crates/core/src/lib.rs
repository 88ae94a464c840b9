// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Optimal control of three-level STIRAP population transfer with a lossy
//! intermediate state.
//!
//! The model is the resonant pump/Stokes three-level system with fixed total
//! field amplitude, so the mixing angle θ (tan θ = Ω_p/Ω_s) is the only
//! control direction and u = θ̇ is the natural control variable. Everything
//! here works in normalized units: time in 1/Ω₀, dissipation as Γ/Ω₀.
//!
//! The crate is organized around that problem:
//!
//! - [`dynamics`] — propagation of the Bloch vector in the lab (X, Y, Z) and
//!   dark/bright (x, y, z) frames, frame transforms, bang pulses, schedule
//!   execution, and the spins-to-springs reduction.
//! - [`lossless`] — closed-form Γ=0 solutions: the minimum-time
//!   bang-singular-bang protocol, the nonnegative-control bang-off-bang
//!   protocol, the bang-constant-bang family and its closure condition, and
//!   the dT/du monotonicity.
//! - [`pmp`] — Pontryagin machinery: control Hamiltonian, adjoint system,
//!   switching function, singular feedback law, singular surface, and the
//!   constants of motion.
//! - [`shooting`] — the symmetric bang-off-singular-off-bang shooting solver
//!   for Γ > 0 (nested root-finding over θ₀, t₁ and the singular constant c₁).
//! - [`direct`] — direct transcription of the bounded-control problem via
//!   adjoint-gradient projected ascent; independent of the shooting solver
//!   and used to cross-validate it.
//! - [`report`] — the solver output record shared by both solvers.

pub mod direct;
pub mod dynamics;
pub mod error;
pub mod lossless;
mod numeric;
pub mod pmp;
pub mod report;
pub mod shooting;

pub use dynamics::{BlochState, ControlSchedule, Frame, MixingAngle, ProblemSpec, Segment, TrajectoryTrace};
pub use error::{CoreError, Result};
pub use pmp::AdjointState;
pub use report::SolveReport;
