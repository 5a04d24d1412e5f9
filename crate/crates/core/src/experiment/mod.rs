//! Monte Carlo harness: confidence bands, convergence-rate regressions and
//! concentration tails, with their persistence.

pub mod config;
pub mod output;
pub mod study;
pub mod svg;

use std::fmt;

use thiserror::Error;

use crate::estimation::EstimationError;
use crate::kernels::KernelError;
use crate::model::ModelError;
use crate::sim::SimError;
use crate::solver::SolverError;

pub use config::{RunConfig, Smoothness, Target, TrackedPoint};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("replication {index} at N = {scale}: {source}")]
    Replication {
        scale: usize,
        index: usize,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error("oracle error {oracle} exceeds adaptive error {adaptive} for {target} at ({t}, {a})")]
    OracleDominance {
        target: String,
        t: f64,
        a: f64,
        oracle: f64,
        adaptive: f64,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl ExperimentError {
    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

/// Side of the diagonal: `Upper` is `a > t` (initial cohorts only),
/// `Lower` is `a < t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Upper,
    Lower,
}

impl Region {
    pub fn of(t: f64, a: f64) -> Self {
        if a > t {
            Region::Upper
        } else {
            Region::Lower
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Upper => "U",
            Region::Lower => "L",
        })
    }
}

/// Smoothness exponents of one target and region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponent {
    /// Upper-bound smoothness `s+`.
    pub s: f64,
    /// `s / (2 s + 1)`.
    pub rate: f64,
    /// Lower-bound smoothness of the density, `max(gamma, delta)`.
    pub s_density_lower: f64,
    /// Lower-bound smoothness of the death rate, `(1/gamma + 1/delta)^{-1}`.
    pub s_death_lower: f64,
}

pub fn rate_of(s: f64) -> f64 {
    s / (2.0 * s + 1.0)
}

fn harmonic(x: f64, y: f64) -> f64 {
    1.0 / (1.0 / x + 1.0 / y)
}

/// Smoothness and rate exponent of the adaptive estimators.
///
/// Density: `max(min(gamma, delta + 1), delta)` above the diagonal and
/// `min(alpha, beta, gamma + 1, delta)` below. Death intensity and rate:
/// `(1/min(gamma, delta) + 1/delta)^{-1}` above and
/// `(1/min(gamma, delta) + 1/min(alpha, beta, gamma + 1, delta))^{-1}` below.
pub fn theoretical_exponent(target: Target, region: Region, s: &Smoothness) -> Result<Exponent, ExperimentError> {
    let Smoothness { alpha, beta, gamma, delta } = *s;
    if [alpha, beta, gamma, delta].iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(ExperimentError::Config(
            "smoothness indices must be positive and finite".into(),
        ));
    }
    let lower_density = alpha.min(beta).min(gamma + 1.0).min(delta);
    let value = match (target, region) {
        (Target::Density, Region::Upper) => gamma.min(delta + 1.0).max(delta),
        (Target::Density, Region::Lower) => lower_density,
        (_, Region::Upper) => harmonic(gamma.min(delta), delta),
        (_, Region::Lower) => harmonic(gamma.min(delta), lower_density),
    };
    Ok(Exponent {
        s: value,
        rate: rate_of(value),
        s_density_lower: gamma.max(delta),
        s_death_lower: harmonic(gamma, delta),
    })
}

/// Sample quantile with linear interpolation between order statistics
/// (`x[(n - 1) p]`). `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and central 95% band of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Summary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lower: quantile(&sorted, 0.025),
            upper: quantile(&sorted, 0.975),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile(&sorted, 0.5)
}

/// Root mean square of `errors`.
pub fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Least-squares slope and intercept of `ln rmse` against `ln N`.
pub fn log_log_fit(points: &[(usize, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(n, e)| ((n as f64).ln(), e.ln()))
        .collect();
    crate::diagnostics::least_squares(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sm(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Smoothness {
        Smoothness { alpha, beta, gamma, delta }
    }

    #[test]
    fn exponents() {
        let e = theoretical_exponent(Target::DeathRate, Region::Upper, &sm(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((e.s - 0.5).abs() < 1e-15 && (e.rate - 0.25).abs() < 1e-15);
        let e = theoretical_exponent(Target::Density, Region::Lower, &sm(10.0, 10.0, 2.0, 1.0)).unwrap();
        assert_eq!(e.s, 1.0);
        let e = theoretical_exponent(Target::Density, Region::Upper, &sm(1.0, 1.0, 2.5, 2.5)).unwrap();
        assert_eq!(e.s_density_lower, 2.5);
        assert!((e.s_death_lower - 1.25).abs() < 1e-15);
        assert!(e.s <= e.s_density_lower);
        assert!(theoretical_exponent(Target::Density, Region::Upper, &sm(0.0, 1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn quantiles_and_summaries() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 0.25), 2.0);
        assert!((quantile(&xs, 0.975) - 4.9).abs() < 1e-12);
        let s = Summary::of(&[7.0]);
        assert_eq!((s.mean, s.lower, s.upper), (7.0, 7.0, 7.0));
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<(usize, f64)> = [100, 500, 1000, 2000, 4000, 8000]
            .iter()
            .map(|&n| (n, 3.0 * (n as f64).powf(-0.5)))
            .collect();
        let (slope, intercept) = log_log_fit(&pts).unwrap();
        assert!((slope + 0.5).abs() < 1e-12);
        assert!((intercept - 3f64.ln()).abs() < 1e-10);
        let flat: Vec<(usize, f64)> = pts.iter().map(|&(n, _)| (n, 0.2)).collect();
        assert!(log_log_fit(&flat).unwrap().0.abs() < 1e-12);
    }
}
