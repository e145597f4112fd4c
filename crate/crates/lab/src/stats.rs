//! Summary statistics for experiment outputs.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Coefficient of determination of an estimator against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSquared {
    /// 1 − SS_res/SS_tot with residuals taken against the identity line.
    pub r2: f64,
    /// R² of the least-squares line of prediction on truth.
    pub fit_r2: f64,
}

pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<RSquared> {
    if y_true.len() != y_pred.len() {
        return Err(LabError::InvalidConfig(format!(
            "length mismatch: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(LabError::InvalidConfig("r_squared needs at least two points".into()));
    }
    let mt = mean(y_true);
    let mp = mean(y_pred);
    let ss_tot: f64 = y_true.iter().map(|t| (t - mt).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(LabError::ZeroVariance);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum();
    let ss_pred: f64 = y_pred.iter().map(|p| (p - mp).powi(2)).sum();
    let cross: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - mt) * (p - mp)).sum();
    let fit_r2 = if ss_pred == 0.0 { 0.0 } else { cross * cross / (ss_tot * ss_pred) };
    Ok(RSquared {
        r2: 1.0 - ss_res / ss_tot,
        fit_r2,
    })
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.is_empty() {
        f64::NAN
    } else if s.len() % 2 == 0 {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}
