//! Entropy-based disentanglement and completeness over an importance matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonnegative relevance of each latent dimension (row) for each attribute (column).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub dims: usize,
    pub attributes: usize,
    /// Row-major `dims × attributes`.
    pub data: Vec<f64>,
}

impl ImportanceMatrix {
    pub fn new(dims: usize, attributes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims * attributes {
            return Err(Error::dim("importance entries", dims * attributes, data.len()));
        }
        if data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data("importance entries must be finite and nonnegative".into()));
        }
        Ok(Self { dims, attributes, data })
    }

    /// `R_ij = |w_ij|` from one weight vector per attribute.
    pub fn from_weights(per_attribute: &[Vec<f64>]) -> Result<Self> {
        let attributes = per_attribute.len();
        let dims = per_attribute.first().map_or(0, Vec::len);
        if per_attribute.iter().any(|w| w.len() != dims) {
            return Err(Error::Data("weight vectors differ in length".into()));
        }
        let mut data = vec![0.0; dims * attributes];
        for (j, w) in per_attribute.iter().enumerate() {
            for (i, v) in w.iter().enumerate() {
                data[i * attributes + j] = v.abs();
            }
        }
        Self::new(dims, attributes, data)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.attributes + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.attributes..(i + 1) * self.attributes]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.dims).map(|i| self.get(i, j)).collect()
    }

    /// Attributes whose column is all zero.
    pub fn zero_columns(&self) -> Vec<usize> {
        (0..self.attributes)
            .filter(|&j| self.column(j).iter().all(|&v| v == 0.0))
            .collect()
    }
}

/// `1 - H(p)/ln(base)` for a nonnegative vector normalized to sum one;
/// `None` for an all-zero vector. A single-outcome base scores 1.
pub fn one_minus_entropy(values: &[f64], base: usize) -> Option<f64> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    if base <= 1 {
        return Some(1.0);
    }
    let h: f64 = values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    Some((1.0 - h / (base as f64).ln()).clamp(0.0, 1.0))
}

/// Per-dimension `d_i` and the importance-weighted total `D`.
pub fn disentanglement(r: &ImportanceMatrix) -> (Vec<Option<f64>>, f64) {
    let per: Vec<Option<f64>> = (0..r.dims).map(|i| one_minus_entropy(r.row(i), r.attributes)).collect();
    let total: f64 = r.data.iter().sum();
    if !(total > 0.0) {
        return (per, 0.0);
    }
    let d = (0..r.dims)
        .filter_map(|i| per[i].map(|d| d * r.row(i).iter().sum::<f64>() / total))
        .sum::<f64>();
    // weights sum to one only up to rounding
    (per, d.clamp(0.0, 1.0))
}

/// Per-attribute `c_j` and the mean over `included` attributes.
pub fn completeness(r: &ImportanceMatrix, included: &[usize]) -> (Vec<Option<f64>>, f64) {
    let per: Vec<Option<f64>> = (0..r.attributes)
        .map(|j| one_minus_entropy(&r.column(j), r.dims))
        .collect();
    let vals: Vec<f64> = included.iter().filter_map(|&j| per[j]).collect();
    let mean = if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    (per, mean)
}
