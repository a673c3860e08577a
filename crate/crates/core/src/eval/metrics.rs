use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            actual: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("metrics need at least one pair".into()));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Coefficient of determination. Undefined (error) for constant `y`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    if y.len() < 2 {
        return Err(Error::InsufficientData("R2 needs at least 2 points".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("R2 is undefined for a constant target"));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    /// `None` when the targets are constant or there is a single sample.
    pub r2: Option<f64>,
    pub n: usize,
}

impl MetricsReport {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Self> {
        Ok(MetricsReport {
            mse: mse(y, yhat)?,
            mae: mae(y, yhat)?,
            r2: r2(y, yhat).ok(),
            n: y.len(),
        })
    }
}
