//! Occupancy potential `chi` with `p_i = exp(d chi / d u_i)`.

use std::fmt;
use std::sync::Arc;

type PotentialEvaluator = dyn Fn(f64) -> (f64, f64, f64) + Send + Sync;

/// Convex scalar potential `chi_i` of one species.
#[derive(Clone)]
pub enum ScalarPotential {
    /// `P(s) = a + b s` with `chi_i(s) = int_0^s log P(t) dt`.
    Affine { a: f64, b: f64 },
    /// Evaluator returning `(chi_i, chi_i', chi_i'')`.
    Custom {
        label: String,
        eval: Arc<PotentialEvaluator>,
    },
}

impl ScalarPotential {
    pub fn affine(a: f64, b: f64) -> Self {
        ScalarPotential::Affine { a, b }
    }

    pub fn custom<F>(label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(f64) -> (f64, f64, f64) + Send + Sync + 'static,
    {
        ScalarPotential::Custom {
            label: label.into(),
            eval: Arc::new(eval),
        }
    }

    /// `(chi_i(s), chi_i'(s), chi_i''(s))`.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        match self {
            ScalarPotential::Affine { a, b } => {
                let p = a + b * s;
                let value = if *b == 0.0 {
                    s * a.ln()
                } else {
                    (xlogx_pos(p) - p - (xlogx_pos(*a) - a)) / b
                };
                (value, p.ln(), b / p)
            }
            ScalarPotential::Custom { eval, .. } => eval(s),
        }
    }
}

fn xlogx_pos(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl fmt::Debug for ScalarPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarPotential::Affine { a, b } => write!(f, "Affine {{ a: {a}, b: {b} }}"),
            ScalarPotential::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

/// The admitted potentials. All three have a diagonal Hessian.
#[derive(Debug, Clone, Default)]
pub enum ChiFamily {
    /// `chi = 0`, `p_i = 1`.
    #[default]
    Zero,
    /// `chi = sum_i c_i u_i`, `p_i = exp(c_i)`.
    LinearShift { c: Vec<f64> },
    /// `chi = sum_i chi_i(u_i)`.
    Separable { potentials: Vec<ScalarPotential> },
}

impl ChiFamily {
    pub fn species_len(&self) -> Option<usize> {
        match self {
            ChiFamily::Zero => None,
            ChiFamily::LinearShift { c } => Some(c.len()),
            ChiFamily::Separable { potentials } => Some(potentials.len()),
        }
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        match self {
            ChiFamily::Zero => 0.0,
            ChiFamily::LinearShift { c } => c.iter().zip(u).map(|(c, u)| c * u).sum(),
            ChiFamily::Separable { potentials } => {
                potentials.iter().zip(u).map(|(p, &u)| p.eval(u).0).sum()
            }
        }
    }

    /// Writes `d chi / d u_i` and the Hessian diagonal `d2 chi / d u_i^2`.
    #[inline]
    pub fn gradient_and_curvature(&self, u: &[f64], grad: &mut [f64], curv: &mut [f64]) {
        match self {
            ChiFamily::Zero => {
                grad.fill(0.0);
                curv.fill(0.0);
            }
            ChiFamily::LinearShift { c } => {
                grad.copy_from_slice(c);
                curv.fill(0.0);
            }
            ChiFamily::Separable { potentials } => {
                for (i, p) in potentials.iter().enumerate() {
                    let (_, d1, d2) = p.eval(u[i]);
                    grad[i] = d1;
                    curv[i] = d2;
                }
            }
        }
    }
}
