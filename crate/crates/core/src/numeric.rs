// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Small numerical kernels: classical RK4 steps and scalar root bracketing.

/// One classical fourth-order Runge-Kutta step of size `h`.
pub(crate) fn rk4_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k1 = f(t, y);
    let mut tmp = *y;
    for i in 0..N {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    let k2 = f(t + 0.5 * h, &tmp);
    for i in 0..N {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    let k3 = f(t + 0.5 * h, &tmp);
    for i in 0..N {
        tmp[i] = y[i] + h * k3[i];
    }
    let k4 = f(t + h, &tmp);
    let mut out = *y;
    for i in 0..N {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Number of steps and the adjusted step so that `n * h == duration` exactly
/// with `h` as close to the requested `dt` as possible.
pub(crate) fn step_count(duration: f64, dt: f64) -> (usize, f64) {
    debug_assert!(duration >= 0.0 && dt > 0.0);
    if duration == 0.0 {
        return (0, dt);
    }
    let n = (duration / dt).round().max(1.0) as usize;
    (n, duration / n as f64)
}

/// Bisection on a bracketing interval. `fa` and `fb` must have opposite signs.
/// Returns the midpoint once the interval is below `xtol` or the residual
/// magnitude drops below `ftol`.
pub(crate) fn bisect<F>(f: &mut F, a: f64, b: f64, fa: f64, fb: f64, xtol: f64, ftol: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    debug_assert!(fa * fb <= 0.0);
    let (mut lo, mut hi, mut flo) = if fa <= 0.0 { (a, b, fa) } else { (b, a, fb) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid.abs() < ftol || (hi - lo).abs() < xtol {
            return mid;
        }
        if fmid <= 0.0 {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    let _ = flo;
    0.5 * (lo + hi)
}

/// Gaussian elimination with partial pivoting for small dense systems;
/// `a` is row-major n x n. Returns `None` on singular pivots.
pub(crate) fn solve_dense(n: usize, a: &mut [f64], b: &mut [f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let f = a[row * n + col] / diag;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in (col + 1)..n {
            s -= a[col * n + k] * x[k];
        }
        x[col] = s / a[col * n + col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        // y' = -y, y(0) = 1 -> y(1) = e^-1
        let f = |_t: f64, y: &[f64; 1]| [-y[0]];
        let mut y = [1.0];
        let (n, h) = step_count(1.0, 1e-3);
        let mut t = 0.0;
        for _ in 0..n {
            y = rk4_step(&f, t, &y, h);
            t += h;
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn step_count_hits_duration_exactly() {
        let (n, h) = step_count(0.7, 1e-3);
        assert_eq!(n, 700);
        assert!((n as f64 * h - 0.7).abs() < 1e-15);
    }

    #[test]
    fn bisect_finds_cos_root() {
        let mut f = |x: f64| x.cos();
        let root = bisect(&mut f, 1.0, 2.0, 1.0f64.cos(), 2.0f64.cos(), 1e-14, 0.0);
        assert!((root - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn solve_dense_matches_known_solution() {
        // 3x3 with known inverse relation.
        let mut a = [2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let x_true = [1.0, -2.0, 3.0];
        let mut b = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                b[r] += a[r * 3 + c] * x_true[c];
            }
        }
        let x = solve_dense(3, &mut a, &mut b).unwrap();
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
        let mut singular = [1.0, 2.0, 2.0, 4.0];
        let mut rhs = [1.0, 2.0];
        assert!(solve_dense(2, &mut singular, &mut rhs).is_none());
    }
}
