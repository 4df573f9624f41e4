//! Welch's unequal-variance t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t_stat: f64,
    pub dof: f64,
    pub p_two_tailed: f64,
}

/// Two-tailed tail mass `P(|T| >= |t|)` of Student's t with `dof` degrees of freedom.
pub fn student_t_two_tailed(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    beta_reg(dof / 2.0, 0.5, dof / (dof + t * t))
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::DegenerateSample);
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return Err(EvalError::DegenerateSample);
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok(WelchResult {
        t_stat: t,
        dof,
        p_two_tailed: student_t_two_tailed(t, dof).clamp(0.0, 1.0),
    })
}
