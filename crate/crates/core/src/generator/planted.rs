//! Planted tile generator with known channel -> region/attribute wiring.
//!
//! The image plane is cut into a `g × g` grid of tiles. Each designated
//! channel drives one attribute of one tile (mean luminance, warmth or stripe
//! contrast); its effect leaks into every other tile with weight `ε`.
//! Remaining feature channels add a smooth periodic bump whose center drifts
//! with the style (so where it acts changes from image to image), tRGB
//! channels add a global color offset; both scale with `ε`, so at `ε = 0`
//! only designated channels do anything.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::latent::{NoiseInputs, StyleAffine};
use super::layout::{ChannelId, StyleLayout};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    /// Mean of `(R + G + B) / 3` over the tile.
    Luminance,
    /// Mean of `R - B` over the tile.
    Warmth,
    /// Amplitude of a vertical sinusoidal stripe pattern in the tile.
    Stripe,
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttributeKind::Luminance => "luminance",
            AttributeKind::Warmth => "warmth",
            AttributeKind::Stripe => "stripe",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    /// Number of tiles; must be a perfect square whose root divides the output size.
    pub tiles: usize,
    /// Cross-tile leakage and nuisance strength, in `[0, 1)`.
    pub epsilon: f64,
    /// Attribute kinds planted in every tile.
    pub kinds: Vec<AttributeKind>,
    /// Image change per unit of style offset.
    pub gain: f64,
    pub base_color: f64,
    pub base_stripe: f64,
    /// Stripe periods per tile width.
    pub stripe_frequency: usize,
    pub noise_amplitude: f64,
    pub nuisance_gain: f64,
    /// Drift of a nuisance bump's center (radians of the image period) per unit style offset.
    pub nuisance_drift: f64,
    /// Concentration of the nuisance bump; larger is narrower.
    pub nuisance_sharpness: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            tiles: 4,
            epsilon: 0.0,
            kinds: vec![AttributeKind::Luminance, AttributeKind::Warmth, AttributeKind::Stripe],
            gain: 0.15,
            base_color: 0.1,
            base_stripe: 0.1,
            stripe_frequency: 2,
            noise_amplitude: 0.002,
            nuisance_gain: 0.15,
            nuisance_drift: 4.0 * PI,
            nuisance_sharpness: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedAttribute {
    pub name: String,
    pub tile: usize,
    pub kind: AttributeKind,
    pub channel: ChannelId,
}

/// What the planted generator was built to do, for scoring detectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroundTruth {
    pub epsilon: f64,
    pub tiles: usize,
    /// Designated channel -> tile.
    pub regions: BTreeMap<ChannelId, usize>,
    pub attributes: Vec<PlantedAttribute>,
}

impl PlantedGroundTruth {
    pub fn region_of(&self, id: ChannelId) -> Option<usize> {
        self.regions.get(&id).copied()
    }

    pub fn attribute(&self, name: &str) -> Option<&PlantedAttribute> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

#[derive(Clone, Debug)]
enum Role {
    Designated { tile: usize, kind: AttributeKind },
    /// Periodic bump `exp(κ (cos θx + cos θy − 2))` centered at `phase + drift · δ`.
    Bump { phase: [f64; 2], drift: [f64; 2], color: [f64; 3] },
    Tint { color: [f64; 3] },
    Inert,
}

#[derive(Clone, Debug)]
pub struct PlantedSynthesis {
    config: PlantedConfig,
    size: usize,
    grid: usize,
    roles: Vec<Role>,
    /// Per-channel style bias; effects are driven by `s_u - bias_u`.
    bias: Vec<f64>,
    base: Tensor,
    nuisance_scale: f64,
}

fn unit_color(rng: &mut Rng) -> [f64; 3] {
    let v = rng.normal_vec(3);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    [v[0] / n, v[1] / n, v[2] / n]
}

impl PlantedSynthesis {
    pub fn new(
        layout: &StyleLayout,
        affine: &StyleAffine,
        config: PlantedConfig,
        rng: &mut Rng,
    ) -> Result<(Self, PlantedGroundTruth)> {
        if !(0.0..1.0).contains(&config.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1)", config.epsilon)));
        }
        let size = *layout.resolutions().last().expect("non-empty layout");
        let grid = (config.tiles as f64).sqrt().round() as usize;
        if config.tiles == 0 || grid * grid != config.tiles || size % grid != 0 {
            return Err(Error::Config(format!(
                "{} tiles do not form a square grid on a {size}px image",
                config.tiles
            )));
        }
        if config.kinds.is_empty() {
            return Err(Error::Config("attribute plan is empty".into()));
        }
        let wanted = config.tiles * config.kinds.len();
        let mut candidates = layout.channels(false);
        let available = candidates.len();
        if wanted > available {
            return Err(Error::Config(format!(
                "{wanted} planted attributes but only {available} designatable channels"
            )));
        }
        rng.shuffle(&mut candidates);
        // prefer channels with distinct dominant W coordinates, then fill up
        let mut used_dims = vec![false; affine.w_dim()];
        let mut chosen = Vec::with_capacity(wanted);
        for &u in &candidates {
            if chosen.len() == wanted {
                break;
            }
            let d = affine.dominant(u);
            if !used_dims[d] {
                used_dims[d] = true;
                chosen.push(u);
            }
        }
        for &u in &candidates {
            if chosen.len() == wanted {
                break;
            }
            if !chosen.contains(&u) {
                chosen.push(u);
            }
        }

        let mut roles = vec![Role::Inert; layout.total()];
        let mut regions = BTreeMap::new();
        let mut attributes = Vec::with_capacity(wanted);
        let mut next = chosen.iter();
        for tile in 0..config.tiles {
            for &kind in &config.kinds {
                let u = *next.next().expect("enough chosen channels");
                roles[u] = Role::Designated { tile, kind };
                let id = layout.channel_at(u);
                regions.insert(id, tile);
                attributes.push(PlantedAttribute {
                    name: format!("tile{tile}_{kind}"),
                    tile,
                    kind,
                    channel: id,
                });
            }
        }
        let mut n_nuisance = 0;
        for u in 0..layout.total() {
            if matches!(roles[u], Role::Designated { .. }) {
                continue;
            }
            roles[u] = if layout.is_trgb(u) {
                Role::Tint { color: unit_color(rng) }
            } else {
                n_nuisance += 1;
                let angle = 2.0 * PI * rng.uniform();
                Role::Bump {
                    phase: [2.0 * PI * rng.uniform(), 2.0 * PI * rng.uniform()],
                    drift: [config.nuisance_drift * angle.cos(), config.nuisance_drift * angle.sin()],
                    color: unit_color(rng),
                }
            };
        }
        let nuisance_scale = config.epsilon * config.nuisance_gain / (n_nuisance.max(1) as f64).sqrt();

        // base image: flat tile colors plus a faint stripe in every tile
        let tw = size / grid;
        let mut base = Tensor::zeros(&[3, size, size]);
        for tile in 0..config.tiles {
            let color: Vec<f64> = rng.normal_vec(3).into_iter().map(|v| config.base_color * v).collect();
            for c in 0..3 {
                let plane = base.plane_mut(c);
                for y in 0..tw {
                    for x in 0..tw {
                        let (py, px) = (tile / grid * tw + y, tile % grid * tw + x);
                        plane[py * size + px] = color[c]
                            + config.base_stripe * stripe(x, tw, config.stripe_frequency);
                    }
                }
            }
        }
        let bias = (0..layout.total()).map(|u| affine.bias_flat(layout, u)).collect();
        let truth = PlantedGroundTruth {
            epsilon: config.epsilon,
            tiles: config.tiles,
            regions,
            attributes,
        };
        Ok((
            Self {
                config,
                size,
                grid,
                roles,
                bias,
                base,
                nuisance_scale,
            },
            truth,
        ))
    }

    pub fn config(&self) -> &PlantedConfig {
        &self.config
    }

    pub fn noise_shapes(&self) -> Vec<[usize; 3]> {
        vec![[1, self.size, self.size]]
    }

    fn tile_of(&self, py: usize, px: usize) -> usize {
        let tw = self.size / self.grid;
        (py / tw) * self.grid + px / tw
    }

    /// Image derivative with respect to channel `u` at styles `s`.
    fn channel_pattern(&self, s: &[f64], u: usize) -> Option<Tensor> {
        let n = self.size;
        let tw = n / self.grid;
        match &self.roles[u] {
            Role::Inert => None,
            Role::Designated { tile, kind } => {
                let g = self.config.gain;
                let eps = self.config.epsilon;
                let mut t = Tensor::zeros(&[3, n, n]);
                let colors: [f64; 3] = match kind {
                    AttributeKind::Luminance | AttributeKind::Stripe => [1.0, 1.0, 1.0],
                    AttributeKind::Warmth => [1.0, 0.0, -1.0],
                };
                for py in 0..n {
                    for px in 0..n {
                        let w = if self.tile_of(py, px) == *tile { g } else { eps * g };
                        if w == 0.0 {
                            continue;
                        }
                        let shape = match kind {
                            AttributeKind::Stripe => stripe(px % tw, tw, self.config.stripe_frequency),
                            _ => 1.0,
                        };
                        for (c, &col) in colors.iter().enumerate() {
                            t.plane_mut(c)[py * n + px] = w * shape * col;
                        }
                    }
                }
                Some(t)
            }
            Role::Bump { phase, drift, color } => {
                if self.nuisance_scale == 0.0 {
                    return None;
                }
                let d = s[u] - self.bias[u];
                let k = self.config.nuisance_sharpness;
                let (bx, by) = self.bump_axes(phase, drift, d);
                let mut t = Tensor::zeros(&[3, n, n]);
                for py in 0..n {
                    for px in 0..n {
                        // θ = 2π p / n − center, so ∂θ/∂δ = −drift
                        let b = bx[px].0 * by[py].0;
                        let v = self.nuisance_scale * b * k * (bx[px].1 * drift[0] + by[py].1 * drift[1]);
                        for c in 0..3 {
                            t.plane_mut(c)[py * n + px] = v * color[c];
                        }
                    }
                }
                Some(t)
            }
            Role::Tint { color } => {
                if self.nuisance_scale == 0.0 {
                    return None;
                }
                let mut t = Tensor::zeros(&[3, n, n]);
                for c in 0..3 {
                    t.plane_mut(c).iter_mut().for_each(|v| *v = self.nuisance_scale * color[c]);
                }
                Some(t)
            }
        }
    }

    pub fn forward(&self, s: &[f64], noise: &NoiseInputs) -> Result<Tensor> {
        let n = self.size;
        let tw = n / self.grid;
        let mut img = self.base.clone();
        {
            let data = img.data_mut();
            for (u, role) in self.roles.iter().enumerate() {
                let d = s[u] - self.bias[u];
                match role {
                    Role::Inert => {}
                    Role::Designated { tile, kind } => {
                        let g = self.config.gain * d;
                        let eps = self.config.epsilon;
                        for py in 0..n {
                            for px in 0..n {
                                let w = if self.tile_of(py, px) == *tile { g } else { eps * g };
                                if w == 0.0 {
                                    continue;
                                }
                                let i = py * n + px;
                                match kind {
                                    AttributeKind::Luminance => {
                                        (0..3).for_each(|c| data[c * n * n + i] += w);
                                    }
                                    AttributeKind::Warmth => {
                                        data[i] += w;
                                        data[2 * n * n + i] -= w;
                                    }
                                    AttributeKind::Stripe => {
                                        let v = w * stripe(px % tw, tw, self.config.stripe_frequency);
                                        (0..3).for_each(|c| data[c * n * n + i] += v);
                                    }
                                }
                            }
                        }
                    }
                    Role::Bump { phase, drift, color } => {
                        if self.nuisance_scale == 0.0 {
                            continue;
                        }
                        let (bx, by) = self.bump_axes(phase, drift, d);
                        for py in 0..n {
                            for px in 0..n {
                                let v = self.nuisance_scale * bx[px].0 * by[py].0;
                                (0..3).for_each(|c| data[c * n * n + py * n + px] += v * color[c]);
                            }
                        }
                    }
                    Role::Tint { color } => {
                        if self.nuisance_scale == 0.0 {
                            continue;
                        }
                        for c in 0..3 {
                            let v = self.nuisance_scale * d * color[c];
                            data[c * n * n..(c + 1) * n * n].iter_mut().for_each(|x| *x += v);
                        }
                    }
                }
            }
            // texture-only noise
            let plane = noise.planes[0].data();
            for c in 0..3 {
                for (x, nv) in data[c * n * n..(c + 1) * n * n].iter_mut().zip(plane) {
                    *x += self.config.noise_amplitude * nv;
                }
            }
        }
        Ok(img)
    }

    /// Per-axis factors `(exp(κ (cos θ − 1)), sin θ)` of a bump at offset `d`.
    fn bump_axes(&self, phase: &[f64; 2], drift: &[f64; 2], d: f64) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        let n = self.size;
        let k = self.config.nuisance_sharpness;
        let axis = |center: f64| -> Vec<(f64, f64)> {
            (0..n)
                .map(|p| {
                    let theta = 2.0 * PI * p as f64 / n as f64 - center;
                    ((k * (theta.cos() - 1.0)).exp(), theta.sin())
                })
                .collect()
        };
        (axis(phase[0] + drift[0] * d), axis(phase[1] + drift[1] * d))
    }

    pub fn channel_tangent(&self, s: &[f64], u: usize) -> Tensor {
        self.channel_pattern(s, u)
            .unwrap_or_else(|| Tensor::zeros(&[3, self.size, self.size]))
    }

    pub fn jvp(&self, s: &[f64], ds: &[f64]) -> Tensor {
        let n = self.size;
        let mut out = Tensor::zeros(&[3, n, n]);
        for (u, &d) in ds.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            if let Some(p) = self.channel_pattern(s, u) {
                out.axpy(d, &p).expect("same shape");
            }
        }
        out
    }

    pub fn vjp(&self, s: &[f64], cotangent: &Tensor) -> Result<Vec<f64>> {
        if cotangent.shape() != [3, self.size, self.size] {
            return Err(Error::dim("image", 3 * self.size * self.size, cotangent.len()));
        }
        Ok((0..s.len())
            .map(|u| match self.channel_pattern(s, u) {
                Some(p) => p.dot(cotangent).expect("same shape"),
                None => 0.0,
            })
            .collect())
    }
}

/// Stripe profile across a tile, `sin(2π f (x + 1/2) / width)`; sums to zero per row.
pub fn stripe(x: usize, width: usize, frequency: usize) -> f64 {
    (2.0 * PI * frequency as f64 * (x as f64 + 0.5) / width as f64).sin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stripe_rows_sum_to_zero() {
        for f in 1..4 {
            let total: f64 = (0..16).map(|x| stripe(x, 16, f)).sum();
            assert!(total.abs() < 1e-12);
            let power: f64 = (0..16).map(|x| stripe(x, 16, f).powi(2)).sum();
            assert!((power - 8.0).abs() < 1e-12);
        }
    }
}
