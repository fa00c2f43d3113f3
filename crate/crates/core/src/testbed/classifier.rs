//! Analytic attribute classifiers over fixed image tiles.
//!
//! Each attribute reads one linear statistic of one tile and reports
//! `α (τ − stat)`, so brighter / warmer / more striped than typical gives a
//! negative logit (attribute present).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::planted::stripe;
use crate::generator::{AttributeKind, Generator, GeneratorKind, PlantedConfig};
use crate::numerics::{stats, Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub tile: usize,
    pub kind: AttributeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    size: usize,
    grid: usize,
    stripe_frequency: usize,
    specs: Vec<AttributeSpec>,
    tau: Vec<f64>,
    alpha: Vec<f64>,
}

/// Calibration sample count used by [`Classifier::for_generator`].
pub const CALIBRATION_SAMPLES: usize = 2048;
const CALIBRATION_STREAM: u64 = 0xca1b;

impl Classifier {
    /// Uncalibrated classifier (`τ = 0`, `α = 1`).
    pub fn new(size: usize, tiles: usize, kinds: &[AttributeKind], stripe_frequency: usize) -> Result<Self> {
        let grid = (tiles as f64).sqrt().round() as usize;
        if tiles == 0 || grid * grid != tiles || size % grid != 0 {
            return Err(Error::Config(format!("{tiles} tiles do not fit a {size}px image")));
        }
        let specs: Vec<AttributeSpec> = (0..tiles)
            .flat_map(|tile| {
                kinds.iter().map(move |&kind| AttributeSpec {
                    name: format!("tile{tile}_{kind}"),
                    tile,
                    kind,
                })
            })
            .collect();
        let n = specs.len();
        Ok(Self {
            size,
            grid,
            stripe_frequency,
            specs,
            tau: vec![0.0; n],
            alpha: vec![1.0; n],
        })
    }

    /// Classifier matching a generator's tile plan, calibrated on fresh samples
    /// so that every logit has median 0 and unit standard deviation.
    pub fn for_generator(generator: &Generator) -> Result<Self> {
        let plan = match &generator.config().kind {
            GeneratorKind::Planted(p) => p.clone(),
            GeneratorKind::StyleGan(_) => PlantedConfig::default(),
        };
        let mut c = Self::new(generator.resolution(), plan.tiles, &plan.kinds, plan.stripe_frequency)?;
        c.calibrate(generator, CALIBRATION_SAMPLES)?;
        Ok(c)
    }

    pub fn calibrate(&mut self, generator: &Generator, n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::Argument("calibration needs at least two samples".into()));
        }
        let seed = generator.config().seed;
        let rows = crate::exec::try_map_range(n, |i| {
            let mut rng = Rng::new(seed ^ CALIBRATION_STREAM, i as u64);
            let w = generator.sample_w(&mut rng);
            let s = generator.styles_from_w(&w)?;
            let img = generator.synthesize(&s, &generator.noise(rng.next_u64()))?;
            self.statistics(&img)
        })?;
        for a in 0..self.specs.len() {
            let col: Vec<f64> = rows.iter().map(|r| r[a]).collect();
            let sd = stats::std_pop(&col);
            self.tau[a] = stats::median(&col);
            self.alpha[a] = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        }
        Ok(())
    }

    pub fn specs(&self) -> &[AttributeSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::Argument(format!("unknown attribute `{name}`")))
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn tiles(&self) -> usize {
        self.grid * self.grid
    }

    /// Tile id of pixel `(y, x)`.
    pub fn tile_of(&self, y: usize, x: usize) -> usize {
        let tw = self.size / self.grid;
        (y / tw) * self.grid + x / tw
    }

    fn statistic(&self, image: &Tensor, spec: &AttributeSpec) -> f64 {
        let n = self.size;
        let tw = n / self.grid;
        let (ty, tx) = (spec.tile / self.grid * tw, spec.tile % self.grid * tw);
        let px = (tw * tw) as f64;
        let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
        let mut acc = 0.0;
        for y in ty..ty + tw {
            for x in tx..tx + tw {
                let i = y * n + x;
                acc += match spec.kind {
                    AttributeKind::Luminance => (r[i] + g[i] + b[i]) / 3.0,
                    AttributeKind::Warmth => r[i] - b[i],
                    AttributeKind::Stripe => {
                        // projection of luminance onto the unit-amplitude stripe
                        2.0 * (r[i] + g[i] + b[i]) / 3.0 * stripe(x - tx, tw, self.stripe_frequency)
                    }
                };
            }
        }
        acc / px
    }

    /// Raw per-attribute statistics; linear in the image.
    pub fn statistics(&self, image: &Tensor) -> Result<Vec<f64>> {
        if image.shape() != [3, self.size, self.size] {
            return Err(Error::dim("image", 3 * self.size * self.size, image.len()));
        }
        Ok(self.specs.iter().map(|s| self.statistic(image, s)).collect())
    }

    pub fn logits(&self, image: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .statistics(image)?
            .iter()
            .enumerate()
            .map(|(a, st)| self.alpha[a] * (self.tau[a] - st))
            .collect())
    }

    pub fn logit(&self, image: &Tensor, attribute: usize) -> Result<f64> {
        let spec = self
            .specs
            .get(attribute)
            .ok_or_else(|| Error::Argument(format!("unknown attribute {attribute}")))?;
        if image.shape() != [3, self.size, self.size] {
            return Err(Error::dim("image", 3 * self.size * self.size, image.len()));
        }
        Ok(self.alpha[attribute] * (self.tau[attribute] - self.statistic(image, spec)))
    }

    /// Logit change along an image tangent (the statistics are linear).
    pub fn logit_tangents(&self, tangent: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .statistics(tangent)?
            .iter()
            .enumerate()
            .map(|(a, st)| -self.alpha[a] * st)
            .collect())
    }

    /// Range a statistic can take before the image leaves the nominal pixel range.
    pub fn physical_range(kind: AttributeKind) -> (f64, f64) {
        match kind {
            AttributeKind::Luminance => (-1.0, 1.0),
            AttributeKind::Warmth => (-2.0, 2.0),
            AttributeKind::Stripe => (-1.0, 1.0),
        }
    }

    /// Whether every statistic of `image` lies inside its physical range.
    pub fn in_range(&self, image: &Tensor) -> Result<bool> {
        let st = self.statistics(image)?;
        Ok(st.iter().zip(&self.specs).all(|(v, s)| {
            let (lo, hi) = Self::physical_range(s.kind);
            (lo..=hi).contains(v)
        }))
    }
}
