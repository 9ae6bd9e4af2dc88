//! Least-squares decay laws for the relative entropy.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} samples with positive relative entropy in the window, found {found}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error("invalid window [{0}, {1}]")]
    InvalidWindow(f64, f64),
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub max_abs_residual: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let mut ss_res = 0.0;
    let mut max_abs_residual: f64 = 0.0;
    for (a, b) in x.iter().zip(y) {
        let r = b - (intercept + slope * a);
        ss_res += r * r;
        max_abs_residual = max_abs_residual.max(r.abs());
    }
    // a constant series carries no trend information
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
        max_abs_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayVerdict {
    Exponential,
    Algebraic,
    Inconclusive,
}

impl DecayVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecayVerdict::Exponential => "exponential",
            DecayVerdict::Algebraic => "algebraic",
            DecayVerdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub window: (f64, f64),
    pub samples: usize,
    /// `lambda` in `log H* ~ a - lambda t`.
    pub exp_rate: f64,
    pub r2_exp: f64,
    /// `gamma` in `log H* ~ b - gamma log t`.
    pub alg_exponent: f64,
    pub r2_alg: f64,
    pub verdict: DecayVerdict,
}

impl FitResult {
    pub fn render(&self) -> String {
        format!(
            "window      [{}, {}]\nsamples     {}\nlambda      {:.10e}\nR2_exp      {:.10}\ngamma       {:.10e}\nR2_alg      {:.10}\nverdict     {}\n",
            self.window.0,
            self.window.1,
            self.samples,
            self.exp_rate,
            self.r2_exp,
            self.alg_exponent,
            self.r2_alg,
            self.verdict.as_str()
        )
    }
}

pub const MIN_FIT_SAMPLES: usize = 10;
pub const VERDICT_R2: f64 = 0.99;
const HSTAR_FLOOR: f64 = 1e-300;

/// Relative entropy below `RESOLUTION` times its maximum is treated as
/// round-off when choosing the default window.
pub const RESOLUTION: f64 = 1e-12;

/// Fits both decay laws to `(t, H*)` samples inside `window`.
pub fn decay_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<FitResult, FitError> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(FitError::InvalidWindow(lo, hi));
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, h)| t >= lo && t <= hi && h > HSTAR_FLOOR)
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(FitError::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: pts.len(),
        });
    }
    let t: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let log_h: Vec<f64> = pts.iter().map(|p| p.1.max(HSTAR_FLOOR).ln()).collect();
    let exp = linear_fit(&t, &log_h).ok_or(FitError::InsufficientSamples {
        needed: MIN_FIT_SAMPLES,
        found: 0,
    })?;

    let alg_pts: Vec<(f64, f64)> = t.iter().zip(&log_h).filter(|(t, _)| **t > 0.0).map(|(a, b)| (a.ln(), *b)).collect();
    let (alg_x, alg_y): (Vec<f64>, Vec<f64>) = alg_pts.into_iter().unzip();
    let alg = linear_fit(&alg_x, &alg_y);
    let (alg_exponent, r2_alg) = alg.map(|f| (-f.slope, f.r_squared)).unwrap_or((0.0, 0.0));

    let exp_rate = -exp.slope;
    let r2_exp = exp.r_squared;
    let verdict = if r2_exp >= VERDICT_R2 && r2_exp > r2_alg {
        DecayVerdict::Exponential
    } else if r2_alg >= VERDICT_R2 && r2_alg > r2_exp {
        DecayVerdict::Algebraic
    } else {
        DecayVerdict::Inconclusive
    };
    Ok(FitResult {
        window,
        samples: pts.len(),
        exp_rate,
        r2_exp,
        alg_exponent,
        r2_alg,
        verdict,
    })
}

/// Last half of the resolved part of the run: `[t_end / 2, t_end]` where
/// `t_end` is the last sample with `H* >= RESOLUTION * max H*`.
pub fn default_window(series: &[(f64, f64)]) -> Option<(f64, f64)> {
    let max = series.iter().map(|p| p.1).fold(0.0, f64::max);
    if !(max > HSTAR_FLOOR) {
        return None;
    }
    let start = series.first()?.0;
    let t_end = series.iter().filter(|p| p.1 >= RESOLUTION * max).map(|p| p.0).fold(start, f64::max);
    Some((start + 0.5 * (t_end - start), t_end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn series(f: impl Fn(f64) -> f64, t0: f64, t1: f64, n: usize) -> Vec<(f64, f64)> {
        (0..=n).map(|k| t0 + (t1 - t0) * k as f64 / n as f64).map(|t| (t, f(t))).collect()
    }

    #[test]
    fn exponential_data() {
        let s = series(|t| (-2.0 * t).exp(), 0.0, 10.0, 200);
        let fit = decay_fit(&s, (5.0, 10.0)).unwrap();
        assert_abs_diff_eq!(fit.exp_rate, 2.0, epsilon = 1e-6);
        assert_eq!(fit.verdict, DecayVerdict::Exponential);
    }

    #[test]
    fn algebraic_data() {
        let s = series(|t| (1.0 + t).powi(-3), 0.0, 1000.0, 2000);
        let fit = decay_fit(&s, (500.0, 1000.0)).unwrap();
        assert!((fit.alg_exponent - 3.0).abs() < 0.01, "{}", fit.alg_exponent);
        assert_eq!(fit.verdict, DecayVerdict::Algebraic);
    }

    #[test]
    fn constant_series_is_inconclusive() {
        let s = series(|_| 0.3, 0.0, 10.0, 100);
        let fit = decay_fit(&s, (5.0, 10.0)).unwrap();
        assert_eq!(fit.exp_rate, 0.0);
        assert_eq!(fit.verdict, DecayVerdict::Inconclusive);
    }

    #[test]
    fn too_few_samples() {
        let s = series(|t| (-t).exp(), 0.0, 1.0, 5);
        assert!(matches!(decay_fit(&s, (0.0, 1.0)), Err(FitError::InsufficientSamples { .. })));
        assert!(matches!(decay_fit(&s, (1.0, 0.0)), Err(FitError::InvalidWindow(..))));
    }

    #[test]
    fn default_window_skips_round_off_tail() {
        let s = series(|t| (-4.0 * t).exp().max(1e-30), 0.0, 50.0, 500);
        let (lo, hi) = default_window(&s).unwrap();
        // exp(-4 t) = 1e-12 at t = 6.9
        assert!(hi > 6.5 && hi < 7.0, "{hi}");
        assert_abs_diff_eq!(lo, hi / 2.0, epsilon = 1e-12);
        let slow = series(|t| (-0.1 * t).exp(), 0.0, 50.0, 500);
        assert_eq!(default_window(&slow).unwrap(), (25.0, 50.0));
    }
}
