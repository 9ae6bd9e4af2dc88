//! Non-occupancy function `q` and the integrals of `log q` that appear in the
//! entropy and its relative versions.

use std::fmt;
use std::sync::Arc;

use super::ModelError;
use crate::quad;

/// `q(s)`, `q'(s)` and `q''(s)` at one point.
///
/// `d2q` is `+inf` where the second derivative is unbounded (power family
/// with `1 < alpha < 2` at `s = 0`); callers never need it there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QValues {
    pub q: f64,
    pub dq: f64,
    pub d2q: f64,
}

impl QValues {
    pub fn second_derivative_singular(&self) -> bool {
        !self.d2q.is_finite()
    }
}

type QEvaluator = dyn Fn(f64) -> QValues + Send + Sync;

/// User-supplied `q` given as an evaluator of `(q, q', q'')` on `[0, 1]`.
///
/// The evaluator is rescaled by `1 / q(1)` so that `q(1) = 1` holds exactly.
#[derive(Clone)]
pub struct CustomQ {
    label: String,
    eval: Arc<QEvaluator>,
    scale: f64,
}

impl CustomQ {
    pub fn new<F>(label: impl Into<String>, eval: F) -> Result<Self, ModelError>
    where
        F: Fn(f64) -> QValues + Send + Sync + 'static,
    {
        let at_one = eval(1.0).q;
        if !(at_one.is_finite() && at_one > 0.0) {
            return Err(ModelError::InvalidQ(format!(
                "custom q must be positive at s = 1, got {at_one}"
            )));
        }
        Ok(Self {
            label: label.into(),
            eval: Arc::new(eval),
            scale: 1.0 / at_one,
        })
    }

    /// Natural cubic spline through tabulated `(s, q)` pairs.
    pub fn from_table(label: impl Into<String>, s: &[f64], q: &[f64]) -> Result<Self, ModelError> {
        let spline = CubicSpline::new(s, q)?;
        Self::new(label, move |x| spline.eval(x))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    fn eval(&self, s: f64) -> QValues {
        let raw = (self.eval)(s);
        QValues {
            q: raw.q * self.scale,
            dq: raw.dq * self.scale,
            d2q: raw.d2q * self.scale,
        }
    }
}

impl fmt::Debug for CustomQ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomQ")
            .field("label", &self.label)
            .field("scale", &self.scale)
            .finish()
    }
}

/// Degeneracy family of `q`.
#[derive(Debug, Clone)]
pub enum QFamily {
    /// `q(s) = s^alpha`.
    Power { alpha: f64 },
    Custom(CustomQ),
}

impl QFamily {
    pub fn power(alpha: f64) -> Self {
        QFamily::Power { alpha }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            QFamily::Power { alpha } => Some(*alpha),
            QFamily::Custom(_) => None,
        }
    }

    /// Evaluates `(q, q', q'')` without range checking; `s` is clamped to `[0, 1]`.
    pub fn values(&self, s: f64) -> QValues {
        let s = s.clamp(0.0, 1.0);
        match self {
            QFamily::Power { alpha } => power_values(*alpha, s),
            QFamily::Custom(c) => c.eval(s),
        }
    }

    #[inline]
    pub fn q(&self, s: f64) -> f64 {
        match self {
            QFamily::Power { alpha } => {
                if *alpha == 1.0 {
                    s.max(0.0)
                } else if *alpha == 2.0 {
                    s * s
                } else {
                    s.max(0.0).powf(*alpha)
                }
            }
            QFamily::Custom(c) => c.eval(s.clamp(0.0, 1.0)).q,
        }
    }

    /// `int_1^{u0} log q(s) ds`.
    pub fn integral_log_q_from_one(&self, u0: f64) -> f64 {
        match self {
            QFamily::Power { alpha } => alpha * (xlogx(u0) - u0 + 1.0),
            QFamily::Custom(_) => -quad::integral_log_q(self, u0, 1.0, 1.0),
        }
    }

    /// `int_a^b log(q(s) / q(a)) ds`, nonnegative for either ordering of `a` and `b`.
    ///
    /// This is the `q`-part of the relative entropy (with `a = u0_inf`) and the
    /// iterated functional `f2` (with `a = qbar`, `b = q(u0)`).
    pub fn log_q_bregman(&self, a: f64, b: f64) -> f64 {
        match self {
            QFamily::Power { alpha } => {
                if a <= 0.0 {
                    // q(a) = 0: the integrand is +inf, only a = b is finite
                    return if b <= 0.0 { 0.0 } else { f64::INFINITY };
                }
                alpha * a * entropy_kernel(b / a)
            }
            QFamily::Custom(_) => quad::log_q_bregman(self, a, b),
        }
    }
}

fn power_values(alpha: f64, s: f64) -> QValues {
    if s > 0.0 {
        let q = s.powf(alpha);
        return QValues {
            q,
            dq: alpha * q / s,
            d2q: alpha * (alpha - 1.0) * q / (s * s),
        };
    }
    // limits at s = 0
    let dq = if alpha == 1.0 {
        1.0
    } else if alpha > 1.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let d2q = if alpha == 1.0 || alpha > 2.0 {
        0.0
    } else if alpha == 2.0 {
        2.0
    } else {
        f64::INFINITY
    };
    QValues { q: 0.0, dq, d2q }
}

/// Range-checked evaluation of `(q, q', q'')`.
pub fn q_eval(q: &QFamily, s: f64) -> Result<QValues, ModelError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(ModelError::Domain(format!("q evaluated at s = {s} outside [0, 1]")));
    }
    Ok(q.values(s))
}

/// `x log x`, extended by zero at the origin.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x <= 1e-300 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `z log z - z + 1`, evaluated without cancellation near `z = 1`.
pub fn entropy_kernel(z: f64) -> f64 {
    if z <= 1e-300 {
        return 1.0;
    }
    let e = z - 1.0;
    if e.abs() < 0.05 {
        // sum_{k>=2} (-1)^k e^k / (k (k - 1))
        let mut term = e;
        let mut sum = 0.0;
        for k in 2..=18 {
            term *= -e;
            sum -= term / ((k * (k - 1)) as f64);
        }
        sum
    } else {
        z * z.ln() - z + 1.0
    }
}

/// Natural cubic spline on a strictly increasing grid.
#[derive(Debug, Clone)]
struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    fn new(x: &[f64], y: &[f64]) -> Result<Self, ModelError> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(ModelError::InvalidQ(
                "q table needs at least three (s, q) rows".into(),
            ));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidQ("q table abscissae must increase strictly".into()));
        }
        if x[0] > 0.0 || x[n - 1] < 1.0 {
            return Err(ModelError::InvalidQ("q table must cover [0, 1]".into()));
        }
        // second derivatives, natural end conditions, Thomas algorithm
        let mut m = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let a = h0 / 6.0;
            let b = (h0 + h1) / 3.0;
            let cc = h1 / 6.0;
            let r = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
            let denom = b - a * c[i - 1];
            c[i] = cc / denom;
            d[i] = (r - a * d[i - 1]) / denom;
        }
        for i in (1..n - 1).rev() {
            m[i] = d[i] - c[i] * m[i + 1];
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    fn eval(&self, s: f64) -> QValues {
        let n = self.x.len();
        let k = match self.x.partition_point(|&xi| xi <= s) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.x[k], self.x[k + 1]);
        let (y0, y1) = (self.y[k], self.y[k + 1]);
        let (m0, m1) = (self.m[k], self.m[k + 1]);
        let h = x1 - x0;
        let a = (x1 - s) / h;
        let b = (s - x0) / h;
        let q = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let dq = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let d2q = a * m0 + b * m1;
        QValues { q, dq, d2q }
    }
}
