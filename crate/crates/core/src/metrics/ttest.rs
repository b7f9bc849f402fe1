use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub n_pairs: usize,
    /// `p_value < 0.05`.
    pub significant: bool,
}

/// Two-sided p-value of a Student t statistic with `dof` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    beta_reg(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateTest(format!("need at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateTest("non-finite score difference".into()));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateTest("differences have zero variance".into()));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let p = student_t_two_sided_p(t, (n - 1) as f64);
    Ok(TTestResult {
        t_statistic: t,
        p_value: p,
        n_pairs: n,
        significant: p < SIGNIFICANCE_LEVEL,
    })
}
