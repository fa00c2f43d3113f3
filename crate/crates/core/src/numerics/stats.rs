//! Moments, quantiles and size-matched thresholding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divide by n), two-pass.
pub fn std_pop(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Sample standard deviation (divide by n - 1).
pub fn std_sample(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Linear-interpolated quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Indices sorted by ascending value, ties by ascending index.
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| (values[a] + 0.0).total_cmp(&(values[b] + 0.0)).then(a.cmp(&b)));
    idx
}

/// A size-matched top-`count` selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMask {
    /// Largest value left out of the mask (`-inf` when everything is selected).
    pub threshold: f64,
    /// Selected flat indices, ordered by descending value then ascending index.
    pub indices: Vec<usize>,
}

impl ThresholdMask {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn to_bitmap(&self, n: usize) -> Vec<bool> {
        let mut bits = vec![false; n];
        for &i in &self.indices {
            bits[i] = true;
        }
        bits
    }
}

/// Selects exactly `count` entries: values in descending order with ties
/// resolved by ascending flat index.
pub fn quantile_threshold(values: &[f64], count: usize) -> Result<ThresholdMask> {
    if count > values.len() {
        return Err(Error::Argument(format!(
            "mask size {count} exceeds {} values",
            values.len()
        )));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // `+ 0.0` folds -0.0 into 0.0 so signed zeros tie
    let cmp = |a: &usize, b: &usize| (values[*b] + 0.0).total_cmp(&(values[*a] + 0.0)).then(a.cmp(b));
    if count < idx.len() {
        // partition so the first `count` are the selection, `count` is the next best
        idx.select_nth_unstable_by(count, cmp);
        let threshold = values[idx[count]];
        idx.truncate(count);
        idx.sort_by(cmp);
        Ok(ThresholdMask {
            threshold,
            indices: idx,
        })
    } else {
        idx.sort_by(cmp);
        Ok(ThresholdMask {
            threshold: f64::NEG_INFINITY,
            indices: idx,
        })
    }
}

/// Standard error of the mean (sample std / sqrt(n)).
pub fn std_error(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    std_sample(values) / (values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn order_statistics() {
        let m = quantile_threshold(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(m.indices, vec![3, 2]);
        assert_eq!(m.threshold, 2.0);
        assert!(quantile_threshold(&[1.0, 2.0], 0).unwrap().is_empty());
        assert!(quantile_threshold(&[1.0], 2).is_err());
    }

    #[test]
    fn random_values_match_sort_oracle() {
        let mut rng = Rng::new(99, 0);
        let values = rng.normal_vec(1024);
        let m = quantile_threshold(&values, 137).unwrap();
        assert_eq!(m.len(), 137);
        let mut sorted: Vec<usize> = (0..1024).collect();
        sorted.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(m.indices, sorted[..137].to_vec());
        assert!(m.indices.iter().all(|&i| values[i] > m.threshold));
    }

    #[test]
    fn ties_resolved_by_index() {
        let m = quantile_threshold(&[0.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(m.indices, vec![0, 1]);
    }

    #[test]
    fn moments() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert!((std_pop(&[2.0, 2.2, 1.8]) - 0.163299316185545).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    proptest! {
        #[test]
        fn mask_size_is_exact(raw in prop::collection::vec(0u8..6, 0..80), frac in 0.0f64..=1.0) {
            let values: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
            let count = (frac * values.len() as f64).floor() as usize;
            let m = quantile_threshold(&values, count).unwrap();
            prop_assert_eq!(m.len(), count);
            let mut uniq = m.indices.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), count);
            // every selected value dominates every unselected one
            let bits = m.to_bitmap(values.len());
            let min_in = m.indices.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
            for (i, &b) in bits.iter().enumerate() {
                if !b { prop_assert!(values[i] <= min_in); }
            }
        }
    }
}
