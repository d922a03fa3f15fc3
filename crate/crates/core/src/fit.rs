//! Least-squares slope fits for convergence and scaling studies.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest admissible residual of a log-log fit, in decades.
pub const MAX_LOG_RESIDUAL: f64 = 0.1;

/// Straight-line fit `y ≈ slope·x + intercept` with a 95% interval on the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Largest absolute residual.
    pub max_residual: f64,
    pub points: usize,
    /// Points per decade of `x` for log-log fits, `NaN` for linear fits.
    pub points_per_decade: f64,
}

impl SlopeFit {
    pub fn residual_ok(&self) -> bool {
        self.max_residual <= MAX_LOG_RESIDUAL
    }
}

/// Ordinary least squares on `(x, y)`.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let m = x.len();
    if m != y.len() || m < 2 {
        return Err(Error::Invalid(format!("a line fit needs at least 2 paired points, got {m} and {}", y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("fit data must be finite".into()));
    }
    let mf = m as f64;
    let xm = x.iter().sum::<f64>() / mf;
    let ym = y.iter().sum::<f64>() / mf;
    let sxx: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("fit abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let resid: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - (slope * a + intercept)).collect();
    let max_residual = resid.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
    let (stderr, half) = if m > 2 {
        let s2 = resid.iter().map(|r| r * r).sum::<f64>() / (mf - 2.0);
        let se = (s2 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, mf - 2.0).expect("positive degrees of freedom").inverse_cdf(0.975);
        (se, t * se)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SlopeFit {
        slope,
        intercept,
        slope_stderr: stderr,
        ci_low: slope - half,
        ci_high: slope + half,
        max_residual,
        points: m,
        points_per_decade: f64::NAN,
    })
}

/// Fit of `log10 y` against `log10 x`.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Invalid("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log10()).collect();
    let mut fit = fit_linear(&lx, &ly)?;
    let span = lx.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - lx.iter().cloned().fold(f64::INFINITY, f64::min);
    fit.points_per_decade = x.len() as f64 / span;
    Ok(fit)
}
