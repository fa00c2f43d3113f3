//! Procedural segmenter: a fixed tile partition of the image plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `r × r` grid of category ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticMask {
    pub size: usize,
    pub categories: usize,
    pub labels: Vec<usize>,
}

impl SemanticMask {
    pub fn new(size: usize, categories: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != size * size {
            return Err(Error::dim("mask cells", size * size, labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= categories) {
            return Err(Error::Argument(format!("label {bad} outside {categories} categories")));
        }
        Ok(Self {
            size,
            categories,
            labels,
        })
    }

    pub fn label(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.size + x]
    }

    /// Flat indices of the cells labelled `category`.
    pub fn cells(&self, category: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == category).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.categories];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Reduces to `r × r` by taking the most abundant category in each bin;
    /// ties go to the lower category id.
    pub fn reduce(&self, r: usize) -> Result<SemanticMask> {
        if r == 0 || self.size % r != 0 {
            return Err(Error::Argument(format!("{r} does not divide mask size {}", self.size)));
        }
        let f = self.size / r;
        let mut labels = Vec::with_capacity(r * r);
        let mut hist = vec![0usize; self.categories];
        for by in 0..r {
            for bx in 0..r {
                hist.iter_mut().for_each(|h| *h = 0);
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        hist[self.label(y, x)] += 1;
                    }
                }
                let best = (0..self.categories)
                    .max_by(|&a, &b| hist[a].cmp(&hist[b]).then(b.cmp(&a)))
                    .expect("at least one category");
                labels.push(best);
            }
        }
        SemanticMask::new(r, self.categories, labels)
    }

    /// Enlarges to `r × r` by replicating cells.
    pub fn expand(&self, r: usize) -> Result<SemanticMask> {
        if r % self.size != 0 {
            return Err(Error::Argument(format!("mask size {} does not divide {r}", self.size)));
        }
        let f = r / self.size;
        let labels = (0..r * r).map(|i| self.label(i / r / f, i % r / f)).collect();
        SemanticMask::new(r, self.categories, labels)
    }
}

/// Tile partition of a `size × size` image into `tiles` square regions,
/// delivered at grid resolution `r`.
pub fn segment(size: usize, tiles: usize, r: usize) -> Result<SemanticMask> {
    let grid = (tiles as f64).sqrt().round() as usize;
    if tiles == 0 || grid * grid != tiles || size % grid != 0 {
        return Err(Error::Config(format!("{tiles} tiles do not fit a {size}px image")));
    }
    let tw = size / grid;
    let labels = (0..size * size)
        .map(|i| (i / size / tw) * grid + (i % size) / tw)
        .collect();
    let native = SemanticMask::new(size, tiles, labels)?;
    if r == size {
        Ok(native)
    } else if r < size {
        native.reduce(r)
    } else {
        native.expand(r)
    }
}
