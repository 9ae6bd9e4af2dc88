//! Adaptive Simpson quadrature and the `log q` integrals built on it.

use crate::model::QFamily;

/// Absolute tolerance used for the `log q` integrals.
pub const QUAD_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson rule on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `int_a^b log(q(s) / c) ds` for `0 <= a, b <= 1`.
///
/// Substituting `s = t^2` turns the integrable log singularity at `s = 0`
/// into the bounded integrand `2 t log(q(t^2) / c)`, which vanishes at `t = 0`.
pub fn integral_log_q(q: &QFamily, a: f64, b: f64, c: f64) -> f64 {
    let integrand = |t: f64| {
        if t <= 0.0 {
            return 0.0;
        }
        let val = q.q(t * t);
        if val <= 0.0 {
            0.0
        } else {
            2.0 * t * (val / c).ln()
        }
    };
    adaptive_simpson(integrand, a.max(0.0).sqrt(), b.max(0.0).sqrt(), QUAD_TOL)
}

/// `int_a^b log(q(s) / q(a)) ds` by quadrature.
pub fn log_q_bregman(q: &QFamily, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let qa = q.q(a);
    if qa <= 0.0 {
        return f64::INFINITY;
    }
    integral_log_q(q, a, b, qa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12);
        assert_abs_diff_eq!(v, 4.0 - 4.0 + 2.0, epsilon = 1e-13);
    }

    #[test]
    fn log_singularity_at_zero() {
        // int_0^1 log s ds = -1
        let q = QFamily::power(1.0);
        assert_abs_diff_eq!(integral_log_q(&q, 0.0, 1.0, 1.0), -1.0, epsilon = 1e-9);
        // int_1^0 2 log s ds = 2
        let q2 = QFamily::power(2.0);
        assert_abs_diff_eq!(integral_log_q(&q2, 1.0, 0.0, 1.0), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn bregman_quadrature_matches_closed_form() {
        let q = QFamily::power(1.0);
        assert_abs_diff_eq!(log_q_bregman(&q, 0.5, 0.75), 0.75 * 1.5f64.ln() - 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(log_q_bregman(&q, 0.5, 0.25), 0.25 - 0.25 * 2f64.ln(), epsilon = 1e-10);
        let q3 = QFamily::power(3.0);
        for (a, b) in [(0.4, 0.0), (0.2, 0.9), (0.7, 0.1)] {
            assert_abs_diff_eq!(log_q_bregman(&q3, a, b), q3.log_q_bregman(a, b), epsilon = 1e-9);
        }
    }
}
