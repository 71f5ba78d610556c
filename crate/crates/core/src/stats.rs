//! Paired t-test across topics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("paired samples differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("all paired differences are identical (mean difference {mean_difference}); t is undefined")]
    ZeroVariance { mean_difference: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    /// Two-tailed.
    pub p_value: f64,
    pub mean_difference: f64,
}

impl PairedTestResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Two-tailed `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("degrees of freedom are positive");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Tests whether `a - b` has zero mean, pairing the samples by position.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let ss: f64 = d.iter().map(|x| (x - mean) * (x - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    // Differences that agree to machine precision leave t undefined.
    let spread = d.iter().fold(0.0f64, |m, x| m.max((x - d[0]).abs()));
    let magnitude = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if sd == 0.0 || spread <= 4.0 * f64::EPSILON * magnitude {
        return Err(StatsError::ZeroVariance { mean_difference: mean });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(PairedTestResult {
        t_statistic: t,
        degrees_of_freedom: n - 1,
        p_value: student_t_two_tailed(t, n - 1),
        mean_difference: mean,
    })
}
