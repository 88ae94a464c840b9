// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Closed-form lossless (Γ = 0) solutions.
//!
//! Without dissipation the transfer reduces to steering the Bloch vector from
//! the north pole back to the north pole of the dark/bright frame while θ
//! sweeps 0 → π/2. The pulse families here consist of two equal bangs of
//! angle θ₀ around a constant interior control u for duration T, subject to
//!
//! ```text
//!   2 θ₀ + u T = π/2            (θ reaches π/2)
//!   cot(φ/2) = -n_y cot θ₀      (return to the north pole)
//! ```
//!
//! with ω = √(u² + 1/4), φ = ωT, n_y = u/ω, n_z = -1/(2ω). The duration is
//! an increasing function of u (dT/du ≥ 0), so the unconstrained minimum sits
//! at u = -π/(2T) (T = π√3, θ₀ = π/2) and the u ≥ 0 minimum at u = 0
//! (T = 2π, θ₀ = π/4).

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::dynamics::{ControlSchedule, Segment};
use crate::error::{CoreError, Result};

/// One member of the symmetric bang-constant-bang family.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct BangConstantBangFamily {
    /// Equal initial/final bang angle.
    pub theta0: f64,
    /// Constant interior control.
    pub u: f64,
    /// Interior duration T.
    pub duration: f64,
    /// Rotation angle φ = ωT around the interior field.
    pub phi: f64,
    /// Interior rotation rate ω = √(u² + 1/4).
    pub omega: f64,
    /// Axis components of the interior field (0, n_y, n_z).
    pub n_y: f64,
    pub n_z: f64,
}

fn omega_of(u: f64) -> f64 {
    (u * u + 0.25).sqrt()
}

/// Closure residual cot(φ/2) + n_y cot θ₀ with θ₀ eliminated through
/// 2θ₀ + uT = π/2.
fn closure_residual(u: f64, phi: f64) -> f64 {
    let omega = omega_of(u);
    let t_total = phi / omega;
    let theta0 = FRAC_PI_4 - 0.5 * u * t_total;
    let half = 0.5 * phi;
    half.cos() / half.sin() + (u / omega) * (theta0.cos() / theta0.sin())
}

/// Solve the coupled closure conditions for the family member with interior
/// control `u`. Admissible controls run from -π/(2T) (where θ₀ = π/2 and
/// T = π√3) up to the value where θ₀ → 0 (T = π√15); outside that range
/// there is no root.
pub fn solve_family(u: f64) -> Result<BangConstantBangFamily> {
    if !u.is_finite() {
        return Err(CoreError::InvalidInput(format!("u must be finite, got {u}")));
    }
    let omega = omega_of(u);

    // Restrict phi so that theta0 stays in a slightly widened (0, pi/2]
    // during the search; the widening lets the bracket close on roots that
    // sit exactly at theta0 = pi/2.
    let theta_floor = 1e-9;
    let theta_slack = 0.05;
    let mut phi_lo = 1e-9 * PI;
    let mut phi_hi = 2.0 * PI - 1e-9;
    if u > 0.0 {
        // theta0 hits the floor at T = 2(pi/4 - floor)/u.
        let t_cap = 2.0 * (FRAC_PI_4 - theta_floor) / u;
        phi_hi = phi_hi.min(omega * t_cap);
    } else if u < 0.0 {
        let t_cap = 2.0 * (FRAC_PI_4 + FRAC_PI_2 + theta_slack - FRAC_PI_2) / (-u);
        phi_hi = phi_hi.min(omega * t_cap);
    }
    if phi_hi <= phi_lo {
        return Err(CoreError::NoSolution(format!("empty phi bracket for u = {u}")));
    }

    // Scan for a sign change, then bisect and polish with Newton steps.
    let scan = 800;
    let mut prev_phi = phi_lo;
    let mut prev_g = closure_residual(u, prev_phi);
    let mut bracket = None;
    for k in 1..=scan {
        let phi = phi_lo + (phi_hi - phi_lo) * k as f64 / scan as f64;
        let g = closure_residual(u, phi);
        if prev_g.is_finite() && g.is_finite() && prev_g * g <= 0.0 {
            bracket = Some((prev_phi, phi, prev_g, g));
            break;
        }
        prev_phi = phi;
        prev_g = g;
    }
    let (a, b, ga, gb) = bracket.ok_or_else(|| {
        CoreError::NoSolution(format!("no closure root for u = {u} (admissible range exceeded)"))
    })?;
    let mut f = |phi: f64| closure_residual(u, phi);
    let mut phi = crate::numeric::bisect(&mut f, a, b, ga, gb, 1e-12, 0.0);
    for _ in 0..4 {
        let g = closure_residual(u, phi);
        let h = 1e-7;
        let dg = (closure_residual(u, phi + h) - closure_residual(u, phi - h)) / (2.0 * h);
        if !dg.is_finite() || dg == 0.0 {
            break;
        }
        let next = phi - g / dg;
        if next > phi_lo && next < phi_hi {
            phi = next;
        }
    }
    phi_lo = phi_lo.min(phi);
    let _ = phi_lo;

    let mut t_total = phi / omega;
    let mut theta0 = FRAC_PI_4 - 0.5 * u * t_total;
    // Roots at the lower control endpoint land exactly on theta0 = pi/2,
    // where the closure condition degenerates to phi = pi; rebuild that
    // branch explicitly instead of trusting the residual there.
    if (theta0 - FRAC_PI_2).abs() < 1e-7 && u < 0.0 {
        theta0 = FRAC_PI_2;
        t_total = -FRAC_PI_2 / u;
        phi = omega * t_total;
    }
    if !(-1e-9..=FRAC_PI_2 + 1e-9).contains(&theta0) {
        return Err(CoreError::NoSolution(format!(
            "closure root has theta0 = {theta0} outside [0, pi/2] for u = {u}"
        )));
    }
    Ok(BangConstantBangFamily {
        theta0,
        u,
        duration: t_total,
        phi,
        omega,
        n_y: u / omega,
        n_z: -1.0 / (2.0 * omega),
    })
}

/// Minimum-time protocol with unrestricted control sign: π/2 bangs around a
/// constant interior u = -π/(2T), total duration T = π√3. Running it needs
/// `allow_negative_u`.
pub fn min_time_unconstrained() -> (f64, ControlSchedule) {
    let t_total = PI * 3.0_f64.sqrt();
    let u_s = -FRAC_PI_2 / t_total;
    let schedule = ControlSchedule::new(vec![
        Segment::Bang { angle: FRAC_PI_2 },
        Segment::Sampled { values: vec![u_s], step: t_total },
        Segment::Bang { angle: FRAC_PI_2 },
    ]);
    (t_total, schedule)
}

/// Minimum-time protocol under u ≥ 0: bang-off-bang with θ₀ = π/4 and
/// T = 2π.
pub fn min_time_nonnegative() -> (f64, ControlSchedule) {
    let t_total = 2.0 * PI;
    let schedule = ControlSchedule::new(vec![
        Segment::Bang { angle: FRAC_PI_4 },
        Segment::Off { duration: t_total },
        Segment::Bang { angle: FRAC_PI_4 },
    ]);
    (t_total, schedule)
}

/// Two-level propagator of the bang-constant-bang sequence,
/// U = e^{-iθ₀σy/2} e^{-iφ(n_yσ_y+n_zσ_z)/2} e^{-iθ₀σy/2}, expanded in the
/// Pauli basis. Equal bangs leave no σ_x component:
/// U = a I - i b σ_y - i c σ_z.
pub fn su2_propagator(theta0: f64, u: f64, t_total: f64) -> [[Complex64; 2]; 2] {
    let omega = omega_of(u);
    let phi = omega * t_total;
    let n_y = u / omega;
    let n_z = -1.0 / (2.0 * omega);
    let (sh, ch) = (0.5 * phi).sin_cos();
    let (st, ct) = theta0.sin_cos();
    let a = ct * ch - n_y * st * sh;
    let b = st * ch + n_y * ct * sh;
    let c = n_z * sh;
    let i = Complex64::new(0.0, 1.0);
    [
        [Complex64::new(a, 0.0) - i * c, Complex64::new(-b, 0.0)],
        [Complex64::new(b, 0.0), Complex64::new(a, 0.0) + i * c],
    ]
}

/// Coefficient of σ_y in the total propagator; the family closure condition
/// zeroes it.
pub fn su2_sigma_y_coefficient(family: &BangConstantBangFamily) -> f64 {
    let (sh, ch) = (0.5 * family.phi).sin_cos();
    let (st, ct) = family.theta0.sin_cos();
    st * ch + family.n_y * ct * sh
}

/// The Bloch rotation induced by a two-level unitary: v'_i = Σ_j R_ij v_j for
/// v = (⟨σ_x⟩, ⟨σ_y⟩, ⟨σ_z⟩).
pub fn bloch_rotation(u: &[[Complex64; 2]; 2]) -> [[f64; 3]; 3] {
    let paulis = pauli_matrices();
    let udag = dagger(u);
    let mut r = [[0.0; 3]; 3];
    for (i, si) in paulis.iter().enumerate() {
        let left = matmul(&matmul(&udag, si), u);
        for (j, sj) in paulis.iter().enumerate() {
            r[i][j] = 0.5 * trace(&matmul(&left, sj)).re;
        }
    }
    r
}

/// dT/du along the family:
/// 2 cot θ₀ / (u² + 1/4) · (1 - (φ/2) cot(φ/2)), nonnegative for
/// θ₀ ∈ (0, π/2], φ ∈ [0, 2π).
pub fn dt_du(family: &BangConstantBangFamily) -> Result<f64> {
    let st = family.theta0.sin();
    if st.abs() < 1e-12 {
        return Err(CoreError::DomainError("dT/du diverges at theta0 = 0 (cot singular)".into()));
    }
    let half = 0.5 * family.phi;
    let sh = half.sin();
    if sh.abs() < 1e-12 {
        return Err(CoreError::DomainError(format!(
            "dT/du undefined at phi = {} (cot singular)",
            family.phi
        )));
    }
    let cot_theta0 = family.theta0.cos() / st;
    let cot_half = half.cos() / sh;
    Ok(2.0 * cot_theta0 / (family.u * family.u + 0.25) * (1.0 - half * cot_half))
}

type C2 = [[Complex64; 2]; 2];

fn pauli_matrices() -> [C2; 3] {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    [
        [[o, l], [l, o]],
        [[o, -i], [i, o]],
        [[l, o], [o, -l]],
    ]
}

fn matmul(a: &C2, b: &C2) -> C2 {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

fn dagger(a: &C2) -> C2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

fn trace(a: &C2) -> Complex64 {
    a[0][0] + a[1][1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{self, BlochState, ProblemSpec};
    use approx::assert_relative_eq;

    struct Lcg(u64);

    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    /// Series matrix exponential with scaling and squaring; test oracle only.
    fn expm(a: &C2) -> C2 {
        let norm: f64 = a
            .iter()
            .flatten()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        let mut k = 0u32;
        while norm / 2f64.powi(k as i32) > 0.25 {
            k += 1;
        }
        let scale = Complex64::new(1.0 / 2f64.powi(k as i32), 0.0);
        let scaled = [
            [a[0][0] * scale, a[0][1] * scale],
            [a[1][0] * scale, a[1][1] * scale],
        ];
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let mut result: C2 = [[one, zero], [zero, one]];
        let mut term: C2 = [[one, zero], [zero, one]];
        for n in 1..30 {
            term = matmul(&term, &scaled);
            let f = Complex64::new(1.0 / (1..=n).map(|i| i as f64).product::<f64>(), 0.0);
            for r in 0..2 {
                for c in 0..2 {
                    result[r][c] += term[r][c] * f;
                }
            }
        }
        for _ in 0..k {
            result = matmul(&result, &result.clone());
        }
        result
    }

    fn scaled(a: &C2, s: Complex64) -> C2 {
        [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
    }

    fn max_abs_diff(a: &C2, b: &C2) -> f64 {
        let mut m: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                m = m.max((a[r][c] - b[r][c]).norm());
            }
        }
        m
    }

    #[test]
    fn family_at_zero_control_is_bang_off_bang() {
        let fam = solve_family(0.0).unwrap();
        assert!((fam.theta0 - FRAC_PI_4).abs() < 1e-10);
        assert!((fam.phi - PI).abs() < 1e-10);
        assert!((fam.duration - 2.0 * PI).abs() < 1e-10);
        assert!(su2_sigma_y_coefficient(&fam).abs() < 1e-10);
    }

    #[test]
    fn family_at_lower_endpoint_is_min_time() {
        let t_min = PI * 3.0_f64.sqrt();
        let u = -FRAC_PI_2 / t_min;
        let fam = solve_family(u).unwrap();
        assert!((fam.theta0 - FRAC_PI_2).abs() < 1e-9, "theta0 = {}", fam.theta0);
        assert!((fam.phi - PI).abs() < 1e-9);
        assert!((fam.duration - t_min).abs() < 1e-9);
    }

    #[test]
    fn family_closure_zeroes_sigma_y_everywhere() {
        for k in 0..30 {
            let u = -0.28 + (0.12 + 0.28) * k as f64 / 29.0;
            let fam = solve_family(u).unwrap();
            assert!(
                su2_sigma_y_coefficient(&fam).abs() < 1e-10,
                "sigma_y coefficient {} at u = {u}",
                su2_sigma_y_coefficient(&fam)
            );
            // Both closure conditions hold.
            assert!((2.0 * fam.theta0 + fam.u * fam.duration - FRAC_PI_2).abs() < 1e-12);
            let half = 0.5 * fam.phi;
            let res = half.cos() / half.sin() + fam.n_y * fam.theta0.cos() / fam.theta0.sin();
            assert!(res.abs() < 1e-10, "closure residual {res} at u = {u}");
        }
    }

    #[test]
    fn family_rejects_inadmissible_u() {
        assert!(solve_family(0.2).is_err());
        assert!(solve_family(-0.4).is_err());
    }

    #[test]
    fn min_time_values_and_interior_rate() {
        let (t_total, _) = min_time_unconstrained();
        assert_relative_eq!(t_total, PI * 3.0_f64.sqrt(), epsilon = 1e-14);
        // Interior rotation rate omega = (1/2) sqrt(pi^2/T^2 + 1) = 1/sqrt(3)
        // and rotation angle phi = omega T = pi.
        let u_s = -FRAC_PI_2 / t_total;
        let omega = omega_of(u_s);
        assert_relative_eq!(omega, 0.5 * (PI * PI / (t_total * t_total) + 1.0).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(omega, 1.0 / 3.0_f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(omega * t_total, PI, epsilon = 1e-12);
    }

    #[test]
    fn min_time_unconstrained_completes_transfer() {
        let (t_total, schedule) = min_time_unconstrained();
        let spec = ProblemSpec::new(0.0, t_total, f64::INFINITY).unwrap().with_negative_u(true);
        let trace = dynamics::run_schedule(&spec, &schedule, 1e-3).unwrap();
        assert!((trace.final_population() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn min_time_nonnegative_completes_transfer() {
        let (t_total, schedule) = min_time_nonnegative();
        assert_relative_eq!(t_total, 2.0 * PI);
        let spec = ProblemSpec::new(0.0, t_total, f64::INFINITY).unwrap();
        let trace = dynamics::run_schedule(&spec, &schedule, 1e-3).unwrap();
        assert!((trace.final_population() - 1.0).abs() < 1e-8);
        // Cross-check against the family root at u = 0.
        let fam = solve_family(0.0).unwrap();
        assert!((fam.duration - t_total).abs() < 1e-10);
    }

    #[test]
    fn su2_identity_and_unitarity() {
        let u = su2_propagator(0.0, 0.0, 0.0);
        assert!(max_abs_diff(&u, &[[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]]) < 1e-15);
        let mut rng = Lcg(5);
        for _ in 0..25 {
            let theta0 = rng.next_f64() * FRAC_PI_2;
            let uu = rng.next_f64() - 0.5;
            let t_total = rng.next_f64() * 8.0;
            let m = su2_propagator(theta0, uu, t_total);
            let prod = matmul(&dagger(&m), &m);
            let eye = [[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]];
            assert!(max_abs_diff(&prod, &eye) < 1e-12);
        }
    }

    #[test]
    fn su2_bang_off_bang_fixes_north_pole() {
        let u = su2_propagator(FRAC_PI_4, 0.0, 2.0 * PI);
        // North pole is b = (1, 0); U b must stay on the pole: |U_00|^2 = 1.
        let z = u[0][0].norm_sqr() - u[1][0].norm_sqr();
        assert!((z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn su2_matches_matrix_exponential_oracle() {
        let i = Complex64::new(0.0, 1.0);
        let paulis = pauli_matrices();
        let mut rng = Lcg(17);
        for _ in 0..20 {
            let theta0 = rng.next_f64() * FRAC_PI_2;
            let u = rng.next_f64() - 0.5;
            let t_total = rng.next_f64() * 6.0;
            let omega = omega_of(u);
            let phi = omega * t_total;
            let n_y = u / omega;
            let n_z = -1.0 / (2.0 * omega);
            // Interior generator -(i/2) phi (n_y sigma_y + n_z sigma_z).
            let mut gen_mid = [[Complex64::new(0.0, 0.0); 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    gen_mid[r][c] = -i * 0.5 * phi * (paulis[1][r][c] * n_y + paulis[2][r][c] * n_z);
                }
            }
            let bang = scaled(&paulis[1], -i * Complex64::new(0.5 * theta0, 0.0));
            let oracle = matmul(&expm(&bang), &matmul(&expm(&gen_mid), &expm(&bang)));
            let direct = su2_propagator(theta0, u, t_total);
            assert!(
                max_abs_diff(&oracle, &direct) < 1e-10,
                "oracle mismatch {}",
                max_abs_diff(&oracle, &direct)
            );
        }
    }

    #[test]
    fn su2_bloch_rotation_matches_state_propagation() {
        let mut rng = Lcg(3);
        for _ in 0..8 {
            let theta0 = 0.2 + rng.next_f64();
            let u = rng.next_f64() - 0.5;
            let t_total = 1.0 + 4.0 * rng.next_f64();
            let r = bloch_rotation(&su2_propagator(theta0, u, t_total));
            // Same sequence through the dynamics: bang, constant u, bang.
            let s0 = BlochState::north_pole_dark_bright();
            let s1 = BlochState::dark_bright(
                s0.v[0] * theta0.cos() + s0.v[2] * theta0.sin(),
                s0.v[1],
                s0.v[2] * theta0.cos() - s0.v[0] * theta0.sin(),
            );
            let mid = dynamics::propagate_dark_bright(&s1, |_| u, theta0, 0.0, 1e-4, t_total).unwrap();
            let s2 = mid.final_state();
            let s3 = [
                s2.v[0] * theta0.cos() + s2.v[2] * theta0.sin(),
                s2.v[1],
                s2.v[2] * theta0.cos() - s2.v[0] * theta0.sin(),
            ];
            let mut via_rotation = [0.0; 3];
            for i2 in 0..3 {
                for j in 0..3 {
                    via_rotation[i2] += r[i2][j] * s0.v[j];
                }
            }
            for c in 0..3 {
                assert!(
                    (via_rotation[c] - s3[c]).abs() < 1e-8,
                    "component {c}: rotation {} vs propagation {}",
                    via_rotation[c],
                    s3[c]
                );
            }
        }
    }

    #[test]
    fn dt_du_anchor_at_zero_control() {
        // theta0 = pi/4, phi = pi: 2 * 1 / (1/4) * (1 - 0) = 8.
        let fam = solve_family(0.0).unwrap();
        let d = dt_du(&fam).unwrap();
        assert!((d - 8.0).abs() < 1e-9, "dT/du(0) = {d}");
    }

    #[test]
    fn dt_du_matches_finite_differences() {
        let h = 1e-6;
        for &u in &[-0.25, -0.12, 0.0, 0.05, 0.1] {
            let fam = solve_family(u).unwrap();
            let analytic = dt_du(&fam).unwrap();
            let fd = (solve_family(u + h).unwrap().duration - solve_family(u - h).unwrap().duration) / (2.0 * h);
            let rel = (analytic - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-5, "u = {u}: analytic {analytic} vs fd {fd} (rel {rel})");
        }
    }

    #[test]
    fn duration_monotone_in_u() {
        let lo = -0.285;
        let hi = 0.125;
        let mut prev_t = f64::NEG_INFINITY;
        for k in 0..50 {
            let u = lo + (hi - lo) * k as f64 / 49.0;
            let fam = solve_family(u).unwrap();
            assert!(dt_du(&fam).unwrap() >= -1e-12, "dT/du < 0 at u = {u}");
            assert!(fam.duration >= prev_t - 1e-9, "T not monotone at u = {u}");
            prev_t = fam.duration;
        }
    }

    #[test]
    fn appendix_monotonicity_lemma() {
        // f(x) = 1 - x cot x >= 0 on [0, pi).
        for k in 0..2000 {
            let x = 1e-6 + (PI - 2e-6) * k as f64 / 1999.0;
            let f = 1.0 - x * x.cos() / x.sin();
            assert!(f >= -1e-12, "f({x}) = {f}");
        }
    }

    #[test]
    fn dt_du_domain_error_at_degenerate_theta0() {
        let fam = BangConstantBangFamily {
            theta0: 0.0,
            u: 0.12,
            duration: PI * 15.0_f64.sqrt(),
            phi: 2.0 * PI - 1e-4,
            omega: omega_of(0.12),
            n_y: 0.12 / omega_of(0.12),
            n_z: -1.0 / (2.0 * omega_of(0.12)),
        };
        assert!(matches!(dt_du(&fam), Err(CoreError::DomainError(_))));
    }
}
