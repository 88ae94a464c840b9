// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Error type shared by all modules.

use crate::dynamics::Frame;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A state was supplied in the wrong reference frame.
    #[error("frame mismatch: expected {expected:?}, found {found:?}")]
    FrameMismatch { expected: Frame, found: Frame },
    /// Malformed or non-finite input (bad grids, NaN controls, empty lists).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// The nonnegativity constraint on u = θ̇ was violated.
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    /// Schedule inconsistent with the problem (duration mismatch, bad segment).
    #[error("schedule error: {0}")]
    ScheduleError(String),
    /// Evaluation outside the domain of a formula (y too small for the
    /// singular feedback, z = 0 on the singular surface, cot θ₀ singular).
    #[error("domain error: {0}")]
    DomainError(String),
    /// A root bracket contained no sign change.
    #[error("no solution: {0}")]
    NoSolution(String),
    /// A solver gave up; the message carries its diagnostics.
    #[error("solver failure: {0}")]
    SolverFailure(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
