//! StyleSpace layout: which style vector feeds which convolution.
//!
//! Every resolution above the base has three modulated convolutions, `s1`
//! (the upsampling conv), `s2` and `tRGB`; the base resolution has only `s1`
//! and `tRGB`. `s1` at resolution `r` is sized by the incoming feature width,
//! `s2` and `tRGB` by the width at `r`. Each resolution gets two W+ slots:
//! one for `s1`, one shared by `s2` and `tRGB`. For the 1024px model this is
//! exactly the published breakdown (18 slots, 26 style layers, 9088 channels);
//! other resolutions extrapolate the same per-resolution pattern.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleKind {
    S1,
    S2,
    Trgb,
}

impl fmt::Display for StyleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StyleKind::S1 => "s1",
            StyleKind::S2 => "s2",
            StyleKind::Trgb => "trgb",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    /// Position of this layer's resolution in the resolution list.
    pub level: usize,
    pub resolution: usize,
    pub kind: StyleKind,
    pub channels: usize,
    pub wplus_slot: usize,
    /// Offset of the first channel in the flat style vector.
    pub offset: usize,
}

/// One StyleSpace dimension, written `layer_channel`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId {
    pub layer: usize,
    pub channel: usize,
}

impl ChannelId {
    pub fn new(layer: usize, channel: usize) -> Self {
        Self { layer, channel }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.layer, self.channel)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub resolutions: Vec<usize>,
    pub widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleLayout {
    layers: Vec<LayerSpec>,
    resolutions: Vec<usize>,
    widths: Vec<usize>,
    total: usize,
    slots: usize,
}

/// Builds the layout for a generator with the given per-resolution widths.
pub fn build_layout(config: &LayoutConfig) -> Result<StyleLayout> {
    let res = &config.resolutions;
    let widths = &config.widths;
    if res.is_empty() {
        return Err(Error::Config("at least one resolution is required".into()));
    }
    if res.len() != widths.len() {
        return Err(Error::Config(format!(
            "{} resolutions but {} widths",
            res.len(),
            widths.len()
        )));
    }
    if res[0] < 4 {
        return Err(Error::Config(format!("base resolution {} is below 4", res[0])));
    }
    for &r in res {
        if !r.is_power_of_two() {
            return Err(Error::Config(format!("resolution {r} is not a power of two")));
        }
    }
    for pair in res.windows(2) {
        if pair[1] != 2 * pair[0] {
            return Err(Error::Config(format!(
                "resolutions must double: {} -> {}",
                pair[0], pair[1]
            )));
        }
    }
    if let Some(w) = widths.iter().find(|&&w| w == 0) {
        return Err(Error::Config(format!("channel width {w} must be positive")));
    }

    let mut layers = Vec::new();
    let mut offset = 0;
    let mut push = |level: usize, kind: StyleKind, channels: usize, slot: usize| {
        layers.push(LayerSpec {
            index: layers.len(),
            level,
            resolution: res[level],
            kind,
            channels,
            wplus_slot: slot,
            offset,
        });
        offset += channels;
    };
    push(0, StyleKind::S1, widths[0], 0);
    push(0, StyleKind::Trgb, widths[0], 1);
    for level in 1..res.len() {
        push(level, StyleKind::S1, widths[level - 1], 2 * level);
        push(level, StyleKind::S2, widths[level], 2 * level + 1);
        push(level, StyleKind::Trgb, widths[level], 2 * level + 1);
    }
    Ok(StyleLayout {
        total: offset,
        slots: 2 * res.len(),
        layers,
        resolutions: res.clone(),
        widths: widths.clone(),
    })
}

impl StyleLayout {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &LayerSpec {
        &self.layers[index]
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Total StyleSpace dimension.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Number of W+ slots (`n_l`).
    pub fn wplus_slots(&self) -> usize {
        self.slots
    }

    pub fn feature_total(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind != StyleKind::Trgb)
            .map(|l| l.channels)
            .sum()
    }

    pub fn trgb_total(&self) -> usize {
        self.total - self.feature_total()
    }

    pub fn flat_index(&self, id: ChannelId) -> Result<usize> {
        let layer = self
            .layers
            .get(id.layer)
            .ok_or_else(|| Error::Argument(format!("layer {} out of range", id.layer)))?;
        if id.channel >= layer.channels {
            return Err(Error::Argument(format!(
                "channel {} out of range for layer {} ({} channels)",
                id.channel, id.layer, layer.channels
            )));
        }
        Ok(layer.offset + id.channel)
    }

    pub fn channel_at(&self, flat: usize) -> ChannelId {
        assert!(flat < self.total, "flat index {flat} out of range");
        let layer = self
            .layers
            .iter()
            .rfind(|l| l.offset <= flat)
            .expect("layout has a layer at offset 0");
        ChannelId::new(layer.index, flat - layer.offset)
    }

    pub fn kind_of(&self, flat: usize) -> StyleKind {
        self.layers[self.channel_at(flat).layer].kind
    }

    pub fn is_trgb(&self, flat: usize) -> bool {
        self.kind_of(flat) == StyleKind::Trgb
    }

    /// All flat indices, optionally without tRGB channels.
    pub fn channels(&self, include_trgb: bool) -> Vec<usize> {
        (0..self.total)
            .filter(|&u| include_trgb || !self.is_trgb(u))
            .collect()
    }

    /// Stable short hash identifying the layout.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            h.update(format!("{}:{}:{}:{};", l.resolution, l.kind, l.channels, l.wplus_slot));
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Human-readable breakdown table (one row per layer).
    pub fn describe(&self) -> String {
        let mut out = String::from("wplus_slot,layer,resolution,kind,channels\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                l.wplus_slot, l.index, l.resolution, l.kind, l.channels
            ));
        }
        out
    }
}
