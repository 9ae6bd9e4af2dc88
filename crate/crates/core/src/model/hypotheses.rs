//! Sampled checks of the structural hypotheses on `chi` and `q`.

use super::{ChiFamily, ModelSpec, QFamily, ScalarPotential};

/// One failed sample of a hypothesis check.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub hypothesis: &'static str,
    pub at: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    /// `chi` convex on the closed simplex with finite `p_i`.
    pub h3_ok: bool,
    /// `q(0) = 0`, `q(1) = 1`, `q, q' > 0` on `(0, 1]`, `q'(0)` finite and `>= 0`.
    pub h4_ok: bool,
    pub h5_convex_ok: bool,
    pub h5_concave_ok: bool,
    /// `lim_{s -> 0} s^beta q'(s) / q(s) = c1 > 0` for some `beta` in `[0, 1]`.
    pub h5_limit_ok: bool,
    pub beta: Option<f64>,
    pub c1: Option<f64>,
    pub witnesses: Vec<Witness>,
}

impl HypothesisReport {
    pub fn all_ok(&self) -> bool {
        self.h3_ok && self.h4_ok && self.h5_convex_ok && self.h5_concave_ok && self.h5_limit_ok
    }

    /// Human-readable multi-line summary.
    pub fn render(&self) -> String {
        let flag = |b: bool| if b { "ok" } else { "FAIL" };
        let mut out = String::new();
        out.push_str(&format!("H3 chi convex        {}\n", flag(self.h3_ok)));
        out.push_str(&format!("H4 q admissible      {}\n", flag(self.h4_ok)));
        out.push_str(&format!("H5 q convex          {}\n", flag(self.h5_convex_ok)));
        out.push_str(&format!("H5 q/q' concave      {}\n", flag(self.h5_concave_ok)));
        out.push_str(&format!("H5 limit s^b q'/q    {}\n", flag(self.h5_limit_ok)));
        match (self.beta, self.c1) {
            (Some(b), Some(c)) => out.push_str(&format!("beta = {b}\nc1 = {c}\n")),
            _ => out.push_str("beta, c1: not identified\n"),
        }
        for w in &self.witnesses {
            out.push_str(&format!("witness [{}] at {}: {}\n", w.hypothesis, w.at, w.detail));
        }
        out
    }
}

const CONVEXITY_TOL: f64 = 1e-12;

pub fn hypothesis_report(spec: &ModelSpec, grid_size: usize) -> HypothesisReport {
    let grid = grid_size.max(16);
    let mut witnesses = Vec::new();
    let h3_ok = check_chi(spec.chi_family(), grid, &mut witnesses);
    let mut report = match spec.q_family() {
        QFamily::Power { alpha } => power_report(*alpha, &mut witnesses),
        QFamily::Custom(_) => sampled_q_report(spec.q_family(), grid, &mut witnesses),
    };
    report.h3_ok = h3_ok;
    report.witnesses = witnesses;
    report
}

fn power_report(alpha: f64, witnesses: &mut Vec<Witness>) -> HypothesisReport {
    // s^alpha: s q'/q = alpha, q/q' = s/alpha is affine
    let admissible = alpha >= 1.0;
    if !admissible {
        witnesses.push(Witness {
            hypothesis: "H4",
            at: 0.0,
            detail: format!("q'(s) = {alpha} s^{} is unbounded at s = 0", alpha - 1.0),
        });
        let (a, b, c): (f64, f64, f64) = (0.25, 0.5, 0.75);
        let second = a.powf(alpha) - 2.0 * b.powf(alpha) + c.powf(alpha);
        witnesses.push(Witness {
            hypothesis: "H5 convexity",
            at: b,
            detail: format!("second difference of q is {second:e} < 0"),
        });
    }
    HypothesisReport {
        h3_ok: true,
        h4_ok: admissible,
        h5_convex_ok: admissible,
        h5_concave_ok: true,
        h5_limit_ok: true,
        beta: Some(1.0),
        c1: Some(alpha),
        witnesses: Vec::new(),
    }
}

fn sampled_q_report(q: &QFamily, grid: usize, witnesses: &mut Vec<Witness>) -> HypothesisReport {
    let h = 1.0 / grid as f64;
    let s: Vec<f64> = (0..=grid).map(|k| k as f64 * h).collect();
    let vals: Vec<_> = s.iter().map(|&x| q.values(x)).collect();

    let mut h4_ok = true;
    if vals[0].q.abs() > 1e-12 {
        h4_ok = false;
        witnesses.push(Witness {
            hypothesis: "H4",
            at: 0.0,
            detail: format!("q(0) = {}", vals[0].q),
        });
    }
    if (vals[grid].q - 1.0).abs() > 1e-12 {
        h4_ok = false;
        witnesses.push(Witness {
            hypothesis: "H4",
            at: 1.0,
            detail: format!("q(1) = {}", vals[grid].q),
        });
    }
    if !(vals[0].dq.is_finite() && vals[0].dq >= 0.0) {
        h4_ok = false;
        witnesses.push(Witness {
            hypothesis: "H4",
            at: 0.0,
            detail: format!("q'(0) = {}", vals[0].dq),
        });
    }
    for k in 1..=grid {
        if !(vals[k].q > 0.0 && vals[k].dq > 0.0) {
            h4_ok = false;
            witnesses.push(Witness {
                hypothesis: "H4",
                at: s[k],
                detail: format!("q = {}, q' = {}", vals[k].q, vals[k].dq),
            });
            break;
        }
    }

    let mut h5_convex_ok = true;
    for k in 1..grid {
        let second = vals[k - 1].q - 2.0 * vals[k].q + vals[k + 1].q;
        if second < -CONVEXITY_TOL {
            h5_convex_ok = false;
            witnesses.push(Witness {
                hypothesis: "H5 convexity",
                at: s[k],
                detail: format!("second difference of q is {second:e} < 0"),
            });
            break;
        }
    }

    let mut h5_concave_ok = true;
    let ratio: Vec<f64> = vals.iter().map(|v| v.q / v.dq).collect();
    for k in 2..grid {
        let second = ratio[k - 1] - 2.0 * ratio[k] + ratio[k + 1];
        if !(second <= CONVEXITY_TOL) {
            h5_concave_ok = false;
            witnesses.push(Witness {
                hypothesis: "H5 concavity of q/q'",
                at: s[k],
                detail: format!("second difference of q/q' is {second:e} > 0"),
            });
            break;
        }
    }

    let (h5_limit_ok, beta, c1) = match fit_limit_exponent(q) {
        Some((beta, c1)) => (true, Some(beta), Some(c1)),
        None => {
            witnesses.push(Witness {
                hypothesis: "H5 limit",
                at: 0.0,
                detail: "log-log fit of s q'(s)/q(s) near 0 is inconclusive".into(),
            });
            (false, None, None)
        }
    };

    HypothesisReport {
        h3_ok: true,
        h4_ok,
        h5_convex_ok,
        h5_concave_ok,
        h5_limit_ok,
        beta,
        c1,
        witnesses: Vec::new(),
    }
}

/// Fits `log(s q'/q) = (1 - beta) log s + log c1` on `s` in `[1e-6, 1e-3]`.
fn fit_limit_exponent(q: &QFamily) -> Option<(f64, f64)> {
    let samples = 24;
    let mut xs = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    for j in 0..samples {
        let s = 10f64.powf(-6.0 + 3.0 * j as f64 / (samples - 1) as f64);
        let v = q.values(s);
        let r = s * v.dq / v.q;
        if !(r.is_finite() && r > 0.0) {
            return None;
        }
        xs.push(s.ln());
        ys.push(r.ln());
    }
    let fit = crate::diagnostics::linear_fit(&xs, &ys)?;
    let beta = 1.0 - fit.slope;
    // the intercept is log of s^beta q'/q in the limit
    let c1 = fit.intercept.exp();
    let spread = fit.max_abs_residual;
    if !(-0.02..=1.02).contains(&beta) || !(c1.is_finite() && c1 > 0.0) || spread > 1e-2 {
        return None;
    }
    Some((beta.clamp(0.0, 1.0), c1))
}

fn check_chi(chi: &ChiFamily, grid: usize, witnesses: &mut Vec<Witness>) -> bool {
    let ChiFamily::Separable { potentials } = chi else {
        // zero and linear potentials have vanishing Hessian
        return true;
    };
    let mut ok = true;
    // the Hessian is diagonal, so PSD on the simplex reduces to chi_i'' >= 0 on [0, 1]
    for (i, p) in potentials.iter().enumerate() {
        if let ScalarPotential::Affine { a, b } = p {
            if !(*a > 0.0 && a + b > 0.0) {
                ok = false;
                witnesses.push(Witness {
                    hypothesis: "H3",
                    at: if *a <= 0.0 { 0.0 } else { 1.0 },
                    detail: format!("P_{} = {a} + {b} s is not positive on [0, 1]", i + 1),
                });
                continue;
            }
        }
        for k in 0..=grid {
            let s = k as f64 / grid as f64;
            let (value, d1, d2) = p.eval(s);
            if !(value.is_finite() && d1.is_finite()) || d2 < -CONVEXITY_TOL {
                ok = false;
                witnesses.push(Witness {
                    hypothesis: "H3",
                    at: s,
                    detail: format!("chi_{}'' = {d2:e}", i + 1),
                });
                break;
            }
        }
    }
    ok
}
