use serde::{Deserialize, Serialize};

use super::{mean_and_covariance, Cholesky};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Mahalanobis distance of per-tile, per-colour mean/variance features from a
/// reference population. Larger means less like the bank.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RealismModel {
    pub tiles: usize,
    pub mean: Vec<f64>,
    factor: Cholesky,
}

impl RealismModel {
    /// `ridge` is added to the covariance diagonal, relative to its mean.
    pub fn fit(images: &[Tensor], tiles: usize, ridge: f64) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::Argument("realism model needs at least two images".into()));
        }
        let feats = images
            .iter()
            .map(|img| features(img, tiles))
            .collect::<Result<Vec<_>>>()?;
        let (mean, mut cov) = mean_and_covariance(&feats);
        let d = mean.len();
        let avg = (0..d).map(|i| cov.get(i, i)).sum::<f64>() / d as f64;
        let bump = ridge * avg + f64::MIN_POSITIVE.sqrt();
        for i in 0..d {
            cov.set(i, i, cov.get(i, i) + bump);
        }
        Ok(Self {
            tiles,
            mean,
            factor: Cholesky::new(&cov)?,
        })
    }

    pub fn score(&self, image: &Tensor) -> Result<f64> {
        let f = features(image, self.tiles)?;
        if f.len() != self.mean.len() {
            return Err(Error::dim("realism features", self.mean.len(), f.len()));
        }
        let diff: Vec<f64> = f.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(self.factor.quad_form_inv(&diff).sqrt())
    }
}

/// `[mean, variance]` of each colour in each of `tiles × tiles` cells.
pub fn features(image: &Tensor, tiles: usize) -> Result<Vec<f64>> {
    let (c, h, w) = image.dims3()?;
    if tiles == 0 || h % tiles != 0 || w % tiles != 0 {
        return Err(Error::Argument(format!("{tiles} tiles do not divide a {h}×{w} image")));
    }
    let (th, tw) = (h / tiles, w / tiles);
    let n = (th * tw) as f64;
    let mut out = Vec::with_capacity(tiles * tiles * c * 2);
    for ty in 0..tiles {
        for tx in 0..tiles {
            for ch in 0..c {
                let p = image.plane(ch);
                let (mut s, mut ss) = (0.0, 0.0);
                for y in ty * th..(ty + 1) * th {
                    for &v in &p[y * w + tx * tw..y * w + (tx + 1) * tw] {
                        s += v;
                        ss += v * v;
                    }
                }
                let m = s / n;
                out.push(m);
                out.push((ss / n - m * m).max(0.0));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_layout() {
        let mut img = Tensor::zeros(&[3, 2, 2]);
        img.plane_mut(0).copy_from_slice(&[1.0, 3.0, 1.0, 3.0]);
        let f = features(&img, 1).unwrap();
        assert_eq!(f.len(), 6);
        assert_eq!(&f[..2], &[2.0, 1.0]);
    }

    #[test]
    fn mean_image_scores_zero() {
        let imgs: Vec<Tensor> = (0..50)
            .map(|i| {
                let data = (0..3 * 4 * 4).map(|k| ((i * 31 + k * 7) % 13) as f64 / 13.0).collect();
                Tensor::new(vec![3, 4, 4], data).unwrap()
            })
            .collect();
        let m = RealismModel::fit(&imgs, 2, 1e-3).unwrap();
        assert!(m.score(&imgs[0]).unwrap() > 0.0);
        let worse = imgs[0].map(|v| v + 5.0);
        assert!(m.score(&worse).unwrap() > m.score(&imgs[0]).unwrap());
    }
}
