// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Three-level STIRAP dynamics in both reference frames.
//!
//! On resonance, with the total Rabi amplitude fixed, the probability
//! amplitudes reduce to a real Bloch vector. In the lab frame (X, Y, Z) the
//! populations are Z² = |C₁|², Y² = |C₂|², X² = |C₃|². The dark/bright frame
//! (x, y, z) is the θ-rotated basis in which u = θ̇ appears as the control:
//!
//! ```text
//!   ż = -u x,   ẏ = -(Γ/2) y - x/2,   ẋ = u z + y/2
//! ```
//!
//! The transfer starts at (x, y, z) = (0, 0, 1) with θ(0) = 0 and aims to
//! maximize z(T) = X(T) with θ(T) = π/2. Loss enters only through y:
//! d‖v‖²/dt = -Γ y².

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{CoreError, Result};
use crate::numeric::{rk4_step, step_count};
use crate::pmp;

/// Reference frame tag for a [`BlochState`].
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// Lab frame, components (X, Y, Z).
    Lab,
    /// Dark/bright frame, components (x, y, z).
    #[default]
    DarkBright,
}

/// Real three-component state vector in one of the two frames.
///
/// Components are stored as `[first, second, third]` = (X, Y, Z) in the lab
/// frame or (x, y, z) in the dark/bright frame. Norm stays on the unit sphere
/// for Γ = 0 and shrinks monotonically otherwise.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub frame: Frame,
    pub v: [f64; 3],
}

impl BlochState {
    pub fn lab(x_cap: f64, y_cap: f64, z_cap: f64) -> Self {
        Self { frame: Frame::Lab, v: [x_cap, y_cap, z_cap] }
    }

    pub fn dark_bright(x: f64, y: f64, z: f64) -> Self {
        Self { frame: Frame::DarkBright, v: [x, y, z] }
    }

    /// The transfer starting point (0, 0, 1) in the dark/bright frame.
    pub fn north_pole_dark_bright() -> Self {
        Self::dark_bright(0.0, 0.0, 1.0)
    }

    pub fn norm(&self) -> f64 {
        self.v.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    fn expect_frame(&self, expected: Frame) -> Result<()> {
        if self.frame != expected {
            return Err(CoreError::FrameMismatch { expected, found: self.frame });
        }
        Ok(())
    }
}

/// Mixing angle θ of the total field, tan θ = Ω_p/Ω_s.
///
/// Protocols run θ from 0 to π/2; the constructor tolerates a hair of
/// round-off outside that range.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingAngle(f64);

impl MixingAngle {
    pub const RANGE_TOL: f64 = 1e-9;

    pub fn new(radians: f64) -> Result<Self> {
        if !radians.is_finite() {
            return Err(CoreError::InvalidInput(format!("mixing angle must be finite, got {radians}")));
        }
        if !(-Self::RANGE_TOL..=FRAC_PI_2 + Self::RANGE_TOL).contains(&radians) {
            return Err(CoreError::InvalidInput(format!(
                "mixing angle {radians} outside [0, pi/2]"
            )));
        }
        Ok(Self(radians))
    }

    pub fn zero() -> Self {
        Self(0.0)
    }

    pub fn radians(&self) -> f64 {
        self.0
    }
}

/// Problem data: dissipation rate Γ/Ω₀, horizon T (units of 1/Ω₀) and the
/// upper control bound (`f64::INFINITY` selects the idealized instantaneous
/// bangs; a finite bound realizes bangs as ramps at u = u_max).
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub gamma: f64,
    pub duration: f64,
    pub u_max: f64,
    /// Lifts the u ≥ 0 constraint; needed only for the unconstrained
    /// minimum-time solution where u < 0 on the interior arc.
    #[serde(default)]
    pub allow_negative_u: bool,
}

impl ProblemSpec {
    pub fn new(gamma: f64, duration: f64, u_max: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(CoreError::InvalidInput(format!("gamma must be >= 0, got {gamma}")));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(CoreError::InvalidInput(format!("duration must be > 0, got {duration}")));
        }
        if !(u_max > 0.0) {
            return Err(CoreError::InvalidInput(format!("u_max must be > 0, got {u_max}")));
        }
        Ok(Self { gamma, duration, u_max, allow_negative_u: false })
    }

    pub fn with_negative_u(mut self, allow: bool) -> Self {
        self.allow_negative_u = allow;
        self
    }

    /// Bangs are exact instantaneous rotations when the control bound is
    /// infinite, ramps at u = u_max otherwise.
    pub fn instantaneous_bangs(&self) -> bool {
        self.u_max.is_infinite()
    }
}

/// One segment of a control protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Segment {
    /// Finite rotation of θ by `angle` (instantaneous, or a u = u_max ramp
    /// under a finite control bound).
    Bang { angle: f64 },
    /// u = 0 for `duration`; θ frozen.
    Off { duration: f64 },
    /// State-feedback singular control u_s = (z/y)(c₁ z/y - 1/2).
    SingularArc { c1: f64, duration: f64 },
    /// Zero-order-hold samples of u on a uniform grid of spacing `step`.
    Sampled { values: Vec<f64>, step: f64 },
}

/// Ordered list of segments forming one protocol.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlSchedule {
    pub segments: Vec<Segment>,
}

impl ControlSchedule {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    /// Total time the schedule occupies. Bangs count as `angle/u_max` ramps
    /// unless bangs are instantaneous.
    pub fn timed_duration(&self, u_max: f64) -> f64 {
        let instantaneous = u_max.is_infinite();
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Bang { angle } => {
                    if instantaneous {
                        0.0
                    } else {
                        angle.abs() / u_max
                    }
                }
                Segment::Off { duration } => *duration,
                Segment::SingularArc { duration, .. } => *duration,
                Segment::Sampled { values, step } => values.len() as f64 * step,
            })
            .sum()
    }
}

/// Sampled trajectory: times, native-frame states, θ, u and level populations
/// (|C₁|², |C₂|², |C₃|²) per grid point. Instantaneous bangs appear as
/// repeated time stamps with a θ jump.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryTrace {
    pub frame: Frame,
    pub times: Vec<f64>,
    pub states: Vec<[f64; 3]>,
    pub theta: Vec<f64>,
    pub u: Vec<f64>,
    pub populations: Vec<[f64; 3]>,
}

impl TrajectoryTrace {
    pub(crate) fn with_capacity(frame: Frame, cap: usize) -> Self {
        Self {
            frame,
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
            theta: Vec::with_capacity(cap),
            u: Vec::with_capacity(cap),
            populations: Vec::with_capacity(cap),
        }
    }

    pub(crate) fn push(&mut self, t: f64, state: [f64; 3], theta: f64, u: f64) {
        let lab = match self.frame {
            Frame::Lab => state,
            Frame::DarkBright => db_to_lab_raw(&state, theta),
        };
        self.times.push(t);
        self.states.push(state);
        self.theta.push(theta);
        self.u.push(u);
        self.populations.push([lab[2] * lab[2], lab[1] * lab[1], lab[0] * lab[0]]);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> BlochState {
        BlochState { frame: self.frame, v: *self.states.last().expect("empty trace") }
    }

    pub fn final_theta(&self) -> f64 {
        *self.theta.last().expect("empty trace")
    }

    /// Final |C₃|².
    pub fn final_population(&self) -> f64 {
        self.populations.last().expect("empty trace")[2]
    }

    /// Lab-frame components (X, Y, Z) at sample `i`.
    pub fn lab_state(&self, i: usize) -> [f64; 3] {
        match self.frame {
            Frame::Lab => self.states[i],
            Frame::DarkBright => db_to_lab_raw(&self.states[i], self.theta[i]),
        }
    }

    /// Dark/bright components (x, y, z) at sample `i`.
    pub fn dark_bright_state(&self, i: usize) -> [f64; 3] {
        match self.frame {
            Frame::Lab => lab_to_db_raw(&self.states[i], self.theta[i]),
            Frame::DarkBright => self.states[i],
        }
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.states[i].iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Largest |C₂|² along the trace.
    pub fn peak_mid_population(&self) -> f64 {
        self.populations.iter().map(|p| p[1]).fold(0.0, f64::max)
    }

    fn extend_from(&mut self, other: &TrajectoryTrace) {
        debug_assert_eq!(self.frame, other.frame);
        // Skip the duplicated junction sample.
        let skip = usize::from(!self.is_empty());
        self.times.extend_from_slice(&other.times[skip..]);
        self.states.extend_from_slice(&other.states[skip..]);
        self.theta.extend_from_slice(&other.theta[skip..]);
        self.u.extend_from_slice(&other.u[skip..]);
        self.populations.extend_from_slice(&other.populations[skip..]);
    }
}

pub(crate) fn lab_to_db_raw(lab: &[f64; 3], theta: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    let [x_cap, y_cap, z_cap] = *lab;
    [z_cap * s - x_cap * c, y_cap, z_cap * c + x_cap * s]
}

pub(crate) fn db_to_lab_raw(db: &[f64; 3], theta: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    let [x, y, z] = *db;
    [z * s - x * c, y, z * c + x * s]
}

/// Rotate (X, Y, Z) into the dark/bright frame at mixing angle θ:
/// x = Z sin θ - X cos θ, y = Y, z = Z cos θ + X sin θ.
pub fn to_dark_bright(lab: &BlochState, theta: MixingAngle) -> Result<BlochState> {
    lab.expect_frame(Frame::Lab)?;
    Ok(BlochState { frame: Frame::DarkBright, v: lab_to_db_raw(&lab.v, theta.radians()) })
}

/// Inverse of [`to_dark_bright`].
pub fn from_dark_bright(db: &BlochState, theta: MixingAngle) -> Result<BlochState> {
    db.expect_frame(Frame::DarkBright)?;
    Ok(BlochState { frame: Frame::Lab, v: db_to_lab_raw(&db.v, theta.radians()) })
}

fn lab_rhs(gamma: f64) -> impl Fn(f64, &[f64; 4]) -> [f64; 4] {
    // State layout [X, Y, Z, theta]; theta itself is driven externally, the
    // fourth slot just carries it through the integrator stages.
    move |_t, s| {
        let [x_cap, y_cap, z_cap, theta] = *s;
        let (sin_t, cos_t) = theta.sin_cos();
        [
            -0.5 * cos_t * y_cap,
            0.5 * (-sin_t * z_cap - gamma * y_cap + cos_t * x_cap),
            0.5 * sin_t * y_cap,
            0.0,
        ]
    }
}

/// Propagate the lab-frame equations under a prescribed mixing-angle profile
/// θ(t), sampling every integrator step.
pub fn propagate_lab<F>(
    state: &BlochState,
    theta_of_t: F,
    gamma: f64,
    dt: f64,
    duration: f64,
) -> Result<TrajectoryTrace>
where
    F: Fn(f64) -> f64,
{
    state.expect_frame(Frame::Lab)?;
    check_grid(dt, duration)?;
    let (n, h) = step_count(duration, dt);
    let rhs = lab_rhs(gamma);
    let mut trace = TrajectoryTrace::with_capacity(Frame::Lab, n + 1);
    let theta0 = theta_of_t(0.0);
    if !theta0.is_finite() {
        return Err(CoreError::InvalidInput("theta(t) must be finite".into()));
    }
    let mut s = [state.v[0], state.v[1], state.v[2], theta0];
    trace.push(0.0, [s[0], s[1], s[2]], theta0, 0.0);
    for k in 0..n {
        let t = k as f64 * h;
        // Refresh theta at the step boundary; the rhs keeps it frozen within
        // a step, so evaluate at the midpoint for fourth-order stage values.
        let th_mid = theta_of_t(t + 0.5 * h);
        if !th_mid.is_finite() {
            return Err(CoreError::InvalidInput(format!("theta({}) is not finite", t + 0.5 * h)));
        }
        let rhs_t = |tt: f64, ss: &[f64; 4]| {
            let mut with_theta = *ss;
            with_theta[3] = theta_of_t(tt);
            rhs(tt, &with_theta)
        };
        s = rk4_step(&rhs_t, t, &s, h);
        let t_next = t + h;
        let th = theta_of_t(t_next);
        s[3] = th;
        trace.push(t_next, [s[0], s[1], s[2]], th, 0.0);
    }
    Ok(trace)
}

/// Propagate the dark/bright-frame equations under a control u(t); the trace
/// carries θ(t) = θ₀ + ∫u integrated alongside the state.
pub fn propagate_dark_bright<F>(
    state: &BlochState,
    u_of_t: F,
    theta0: f64,
    gamma: f64,
    dt: f64,
    duration: f64,
) -> Result<TrajectoryTrace>
where
    F: Fn(f64) -> f64,
{
    state.expect_frame(Frame::DarkBright)?;
    check_grid(dt, duration)?;
    let (n, h) = step_count(duration, dt);
    let mut trace = TrajectoryTrace::with_capacity(Frame::DarkBright, n + 1);
    let mut s = [state.v[0], state.v[1], state.v[2], theta0];
    trace.push(0.0, [s[0], s[1], s[2]], theta0, u_of_t(0.0));
    for k in 0..n {
        let t = k as f64 * h;
        let rhs = |tt: f64, ss: &[f64; 4]| {
            let u = u_of_t(tt);
            let [x, y, z, _] = *ss;
            [u * z + 0.5 * y, -0.5 * (gamma * y + x), -u * x, u]
        };
        let u_probe = u_of_t(t + 0.5 * h);
        if !u_probe.is_finite() {
            return Err(CoreError::InvalidInput(format!("u({}) is not finite", t + 0.5 * h)));
        }
        s = rk4_step(&rhs, t, &s, h);
        let t_next = t + h;
        trace.push(t_next, [s[0], s[1], s[2]], s[3], u_of_t(t_next));
    }
    Ok(trace)
}

/// Instantaneous bang: rotate (x, z) by `angle` in the dark/bright frame,
/// leaving y untouched. `angle` must be nonnegative; protocols that need
/// negative rotations run in unconstrained mode through [`run_schedule`].
pub fn apply_bang(state: &BlochState, angle: f64) -> Result<BlochState> {
    state.expect_frame(Frame::DarkBright)?;
    if !angle.is_finite() {
        return Err(CoreError::InvalidInput(format!("bang angle must be finite, got {angle}")));
    }
    if angle < 0.0 {
        return Err(CoreError::ConstraintViolation(format!(
            "bang angle {angle} violates u >= 0"
        )));
    }
    Ok(BlochState { frame: Frame::DarkBright, v: bang_rotation(&state.v, angle) })
}

/// The raw (x, z) rotation used by bangs; shared with the adjoint, which
/// transforms identically.
pub(crate) fn bang_rotation(v: &[f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = *v;
    [x * c + z * s, y, z * c - x * s]
}

fn check_grid(dt: f64, duration: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CoreError::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(CoreError::InvalidInput(format!("duration must be >= 0, got {duration}")));
    }
    Ok(())
}

/// Execute a schedule from the standard starting point (0, 0, 1), θ(0) = 0.
///
/// Bangs are exact rotations when `spec.u_max` is infinite and u = u_max
/// ramps otherwise; Off and Sampled segments integrate with the fixed-step
/// RK4 at `dt`; SingularArc segments close the loop through the singular
/// feedback law. The timed content must match `spec.duration` to 1e-9.
pub fn run_schedule(spec: &ProblemSpec, schedule: &ControlSchedule, dt: f64) -> Result<TrajectoryTrace> {
    let timed = schedule.timed_duration(spec.u_max);
    if (timed - spec.duration).abs() > 1e-9 {
        return Err(CoreError::ScheduleError(format!(
            "schedule occupies {timed} but the problem duration is {}",
            spec.duration
        )));
    }
    check_grid(dt, spec.duration)?;

    let mut trace = TrajectoryTrace::with_capacity(Frame::DarkBright, 16);
    let mut state = BlochState::north_pole_dark_bright();
    let mut theta = 0.0;
    let mut t = 0.0;
    trace.push(t, state.v, theta, 0.0);

    for (idx, seg) in schedule.segments.iter().enumerate() {
        match seg {
            Segment::Bang { angle } => {
                if *angle < 0.0 && !spec.allow_negative_u {
                    return Err(CoreError::ConstraintViolation(format!(
                        "segment {idx}: bang angle {angle} requires unconstrained mode"
                    )));
                }
                if spec.instantaneous_bangs() {
                    state = BlochState {
                        frame: Frame::DarkBright,
                        v: bang_rotation(&state.v, *angle),
                    };
                    theta += angle;
                    trace.push(t, state.v, theta, 0.0);
                } else {
                    let ramp_u = spec.u_max * angle.signum();
                    let duration = angle.abs() / spec.u_max;
                    let leg = propagate_dark_bright(&state, |_| ramp_u, theta, spec.gamma, dt, duration)?;
                    absorb_leg(&mut trace, &leg, &mut state, &mut theta, &mut t);
                }
            }
            Segment::Off { duration } => {
                if *duration <= 0.0 {
                    return Err(CoreError::ScheduleError(format!(
                        "segment {idx}: off duration must be > 0"
                    )));
                }
                let leg = propagate_dark_bright(&state, |_| 0.0, theta, spec.gamma, dt, *duration)?;
                absorb_leg(&mut trace, &leg, &mut state, &mut theta, &mut t);
            }
            Segment::SingularArc { c1, duration } => {
                if *duration <= 0.0 {
                    return Err(CoreError::ScheduleError(format!(
                        "segment {idx}: singular arc duration must be > 0"
                    )));
                }
                let leg = propagate_singular_arc(&state, *c1, theta, spec.gamma, dt, *duration)?;
                absorb_leg(&mut trace, &leg, &mut state, &mut theta, &mut t);
            }
            Segment::Sampled { values, step } => {
                if values.is_empty() || !(*step > 0.0) {
                    return Err(CoreError::ScheduleError(format!(
                        "segment {idx}: sampled segment needs values and step > 0"
                    )));
                }
                if !spec.allow_negative_u && values.iter().any(|u| *u < 0.0) {
                    return Err(CoreError::ConstraintViolation(format!(
                        "segment {idx}: negative u sample requires unconstrained mode"
                    )));
                }
                if values.iter().any(|u| !u.is_finite()) {
                    return Err(CoreError::InvalidInput(format!(
                        "segment {idx}: non-finite u sample"
                    )));
                }
                for u_k in values {
                    let leg =
                        propagate_dark_bright(&state, |_| *u_k, theta, spec.gamma, dt.min(*step), *step)?;
                    absorb_leg(&mut trace, &leg, &mut state, &mut theta, &mut t);
                }
            }
        }
    }
    Ok(trace)
}

fn absorb_leg(
    trace: &mut TrajectoryTrace,
    leg: &TrajectoryTrace,
    state: &mut BlochState,
    theta: &mut f64,
    t: &mut f64,
) {
    let offset = *t;
    let mut shifted = leg.clone();
    for time in &mut shifted.times {
        *time += offset;
    }
    trace.extend_from(&shifted);
    *state = leg.final_state();
    *theta = leg.final_theta();
    *t = offset + leg.times.last().copied().unwrap_or(0.0);
}

/// Integrate the dark/bright system with u closed through the singular
/// feedback law u_s = (z/y)(c₁ z/y - 1/2), tracking θ. Fails if y collapses
/// below the feedback floor anywhere on the arc.
pub(crate) fn propagate_singular_arc(
    state: &BlochState,
    c1: f64,
    theta0: f64,
    gamma: f64,
    dt: f64,
    duration: f64,
) -> Result<TrajectoryTrace> {
    state.expect_frame(Frame::DarkBright)?;
    check_grid(dt, duration)?;
    let (n, h) = step_count(duration, dt);
    let mut trace = TrajectoryTrace::with_capacity(Frame::DarkBright, n + 1);
    let mut s = [state.v[0], state.v[1], state.v[2], theta0];
    let u0 = pmp::singular_feedback_raw(&[s[0], s[1], s[2]], c1)?;
    trace.push(0.0, [s[0], s[1], s[2]], theta0, u0);
    let rhs = |_t: f64, ss: &[f64; 4]| {
        let db = [ss[0], ss[1], ss[2]];
        let u = pmp::singular_feedback_unchecked(&db, c1);
        let [x, y, z, _] = *ss;
        [u * z + 0.5 * y, -0.5 * (gamma * y + x), -u * x, u]
    };
    for k in 0..n {
        if s[1].abs() < pmp::Y_FLOOR {
            return Err(CoreError::DomainError(format!(
                "singular feedback undefined: |y| = {} below floor at t = {}",
                s[1].abs(),
                k as f64 * h
            )));
        }
        let u_here = pmp::singular_feedback_unchecked(&[s[0], s[1], s[2]], c1);
        if !u_here.is_finite() || u_here.abs() > 50.0 {
            return Err(CoreError::DomainError(format!(
                "singular feedback u = {u_here} left the physical branch at t = {}",
                k as f64 * h
            )));
        }
        s = rk4_step(&rhs, k as f64 * h, &s, h);
        let db = [s[0], s[1], s[2]];
        let u = pmp::singular_feedback_raw(&db, c1)?;
        trace.push((k + 1) as f64 * h, db, s[3], u);
    }
    Ok(trace)
}

/// Spring-model drive v(t) = u(t) z(t) on a common grid.
pub fn spring_reduce(u_trace: &[f64], z_trace: &[f64]) -> Result<Vec<f64>> {
    if u_trace.len() != z_trace.len() {
        return Err(CoreError::InvalidInput(format!(
            "grid mismatch: u has {} samples, z has {}",
            u_trace.len(),
            z_trace.len()
        )));
    }
    if u_trace.is_empty() {
        return Err(CoreError::InvalidInput("empty traces".into()));
    }
    Ok(u_trace.iter().zip(z_trace).map(|(u, z)| u * z).collect())
}

/// Integrate the driven two-dimensional spring reduction
/// ẏ = -(Γ/2) y - x/2, ẋ = y/2 + v(t) from (y, x) = (0, 0), with v linearly
/// interpolated between grid samples of spacing `dt`. Returns the (x, y)
/// traces on the same grid.
pub fn propagate_spring(v_trace: &[f64], gamma: f64, dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if v_trace.is_empty() {
        return Err(CoreError::InvalidInput("empty drive trace".into()));
    }
    check_grid(dt, dt * (v_trace.len() - 1) as f64)?;
    let n = v_trace.len() - 1;
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    let mut s = [0.0_f64, 0.0_f64]; // [x, y]
    xs.push(s[0]);
    ys.push(s[1]);
    for k in 0..n {
        let v0 = v_trace[k];
        let v1 = v_trace[k + 1];
        let rhs = move |tt: f64, ss: &[f64; 2]| {
            // tt is the local offset in [0, dt]
            let v = v0 + (v1 - v0) * (tt / dt);
            [0.5 * ss[1] + v, -0.5 * (gamma * ss[1] + ss[0])]
        };
        s = rk4_step(&rhs, 0.0, &s, dt);
        xs.push(s[0]);
        ys.push(s[1]);
    }
    Ok((xs, ys))
}
