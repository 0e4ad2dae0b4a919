//! Normalized root mean-squared error in coefficient and sample domains.

use crate::error::{QspaceError, Result};
use num_complex::Complex64;
use serde::Serialize;

/// Which domain an NRMSE value was computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NrmseDomain {
    CoeffSh,
    CoeffSpf,
    Spatial,
}

/// A tagged NRMSE value with the configuration it came from.
#[derive(Debug, Clone, Serialize)]
pub struct NrmseResult {
    pub value: f64,
    pub domain: NrmseDomain,
    pub method: String,
    pub lambda: f64,
    pub lambda_n: Option<f64>,
    pub snr: f64,
    pub realizations: usize,
}

/// `||estimate - truth||_2 / ||truth||_2`.
pub fn nrmse(estimate: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(QspaceError::Validation(format!(
            "length mismatch: {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    let den: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    if den == 0.0 {
        return Err(QspaceError::Validation("zero-norm truth in NRMSE".into()));
    }
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok((num / den).sqrt())
}

/// Real-valued convenience overload.
pub fn nrmse_real(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    let e: Vec<Complex64> = estimate.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let t: Vec<Complex64> = truth.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    nrmse(&e, &t)
}
