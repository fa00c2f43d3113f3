//! L1-regularized least squares by cyclic coordinate descent.
//!
//! Minimizes `(1/2n) ||y - Xβ - b||² + λ ||β||₁` over standardized columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Standardize columns to zero mean / unit population variance first.
    pub standardize: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            tolerance: 1e-7,
            max_sweeps: 10_000,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Coefficients on the (standardized) design.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Column centers and scales applied before fitting.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Fits the lasso on row-major `rows` (n × d).
pub fn fit_lasso(rows: &[Vec<f64>], targets: &[f64], config: &LassoConfig) -> Result<LassoFit> {
    let n = rows.len();
    if n < 2 || targets.len() != n {
        return Err(Error::dim("lasso rows", targets.len(), n));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Data("ragged design matrix".into()));
    }
    if rows.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite lasso input".into()));
    }
    let nf = n as f64;
    // column-major standardized copy
    let mut center = vec![0.0; d];
    let mut scale = vec![1.0; d];
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    if config.standardize {
        for (j, col) in cols.iter_mut().enumerate() {
            let m = col.iter().sum::<f64>() / nf;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf).sqrt();
            center[j] = m;
            scale[j] = if sd > 0.0 { sd } else { 0.0 };
            col.iter_mut().for_each(|v| *v = if sd > 0.0 { (*v - m) / sd } else { 0.0 });
        }
    }
    let col_sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut beta = vec![0.0; d];
    let mut intercept = targets.iter().sum::<f64>() / nf;
    let mut resid: Vec<f64> = targets.iter().map(|y| y - intercept).collect();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        let mut max_update: f64 = 0.0;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let rho = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / nf + col_sq[j] * beta[j];
            let new = soft_threshold(rho, config.lambda) / col_sq[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                resid.iter_mut().zip(col).for_each(|(r, x)| *r -= delta * x);
                beta[j] = new;
                max_update = max_update.max(delta.abs());
            }
        }
        // intercept (exactly zero shift for centered columns)
        let shift = resid.iter().sum::<f64>() / nf;
        if shift != 0.0 {
            intercept += shift;
            resid.iter_mut().for_each(|r| *r -= shift);
            max_update = max_update.max(shift.abs());
        }
        if max_update < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(LassoFit {
        weights: beta,
        intercept,
        center,
        scale,
        sweeps,
        converged,
    })
}

impl LassoFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    if self.scale[j] == 0.0 {
                        0.0
                    } else {
                        self.weights[j] * (x - self.center[j]) / self.scale[j]
                    }
                })
                .sum::<f64>()
    }

    /// Coefficients in the original column units.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.scale)
            .map(|(w, s)| if *s == 0.0 { 0.0 } else { w / s })
            .collect()
    }
}
