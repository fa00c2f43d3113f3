//! Locally-active channel detection from per-channel gradient maps.
//!
//! For every sample and channel the image derivative is reduced to an `r × r`
//! saliency grid, thresholded to the size of each semantic region and scored
//! by the overlap coefficient `|mask ∩ region| / |region|^d`. A channel is
//! local when one region wins for a strict majority of samples and at least
//! twice as often as the runner-up.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ChannelId, Generator, NoiseInputs, PlantedGroundTruth};
use crate::numerics::{avg_pool, quantile_threshold, Tensor};
use crate::testbed::{BankEntry, SemanticMask};

/// How the 3 color components of the image derivative become one saliency value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Saliency {
    #[default]
    L2,
    AbsMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientMap {
    pub size: usize,
    pub values: Vec<f64>,
    pub channel: ChannelId,
    pub sample: usize,
}

impl GradientMap {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Saliency of an image tangent, average-pooled to `r × r`.
pub fn saliency_map(tangent: &Tensor, r: usize, mode: Saliency) -> Result<Vec<f64>> {
    let (c, h, w) = tangent.dims3()?;
    if h != w || r == 0 || h % r != 0 {
        return Err(Error::Argument(format!("grid {r} does not divide image size {h}×{w}")));
    }
    let mut sal = vec![0.0; h * w];
    for (p, out) in sal.iter_mut().enumerate() {
        *out = match mode {
            Saliency::L2 => (0..c).map(|k| tangent.plane(k)[p].powi(2)).sum::<f64>().sqrt(),
            Saliency::AbsMean => ((0..c).map(|k| tangent.plane(k)[p]).sum::<f64>() / c as f64).abs(),
        };
    }
    let pooled = avg_pool(&Tensor::new(vec![1, h, w], sal)?, h / r)?;
    Ok(pooled.into_data())
}

pub fn gradient_map(
    generator: &Generator,
    styles: &[f64],
    noise: &NoiseInputs,
    u: usize,
    r: usize,
    mode: Saliency,
) -> Result<GradientMap> {
    let tangent = generator.channel_jvp(styles, noise, u)?;
    Ok(GradientMap {
        size: r,
        values: saliency_map(&tangent, r, mode)?,
        channel: generator.layout().channel_at(u),
        sample: 0,
    })
}

/// Overlap coefficient of the size-matched gradient mask with `category`;
/// `None` when the category is absent from the mask.
pub fn overlap_coefficient(map: &GradientMap, mask: &SemanticMask, category: usize, d: f64) -> Result<Option<f64>> {
    if mask.size != map.size {
        return Err(Error::dim("mask size", map.size, mask.size));
    }
    let cells = mask.cells(category);
    if cells.is_empty() {
        return Ok(None);
    }
    let m = cells.len();
    let top = quantile_threshold(&map.values, m)?;
    let bitmap = top.to_bitmap(map.values.len());
    let hits = cells.iter().filter(|&&i| bitmap[i]).count();
    Ok(Some(hits as f64 / (m as f64).powf(d)))
}

/// Region maximizing the overlap coefficient (lowest id on ties); `None`
/// for an identically zero map, which localizes nothing.
pub fn best_category(map: &GradientMap, mask: &SemanticMask, d: f64) -> Result<Option<(usize, f64)>> {
    if map.is_zero() {
        return Ok(None);
    }
    let mut best: Option<(usize, f64)> = None;
    for c in 0..mask.categories {
        if let Some(oc) = overlap_coefficient(map, mask, c, d)? {
            if best.is_none_or(|(_, b)| oc > b) {
                best = Some((c, oc));
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub samples: usize,
    pub grid: usize,
    pub d: f64,
    pub include_trgb: bool,
    pub saliency: Saliency,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            grid: 32,
            d: 2.0,
            include_trgb: false,
            saliency: Saliency::L2,
        }
    }
}

/// Vote tally for one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelVotes {
    pub channel: ChannelId,
    /// Votes per region.
    pub votes: Vec<usize>,
    /// Samples whose map was identically zero.
    pub abstained: usize,
    /// Sum of the winning overlap coefficient per region.
    pub oc_sum: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalChannelReport {
    pub channel: ChannelId,
    pub region: usize,
    pub vote: f64,
    pub runner_up: f64,
    pub mean_oc: f64,
}

/// Majority and twice-as-rare rules.
pub fn accept(votes: &[usize], total: usize) -> Option<(usize, f64, f64)> {
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..votes.len()).collect();
    order.sort_by(|&a, &b| votes[b].cmp(&votes[a]).then(a.cmp(&b)));
    let first = *order.first()?;
    let vote = votes[first] as f64 / total as f64;
    let runner = order.get(1).map_or(0.0, |&c| votes[c] as f64 / total as f64);
    (vote > 0.5 && vote >= 2.0 * runner).then_some((first, vote, runner))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalDetection {
    pub samples: usize,
    pub tallies: Vec<ChannelVotes>,
    pub accepted: Vec<LocalChannelReport>,
}

/// Runs the detector over the first `config.samples` bank entries.
pub fn detect_local_channels(
    generator: &Generator,
    entries: &[BankEntry],
    mask: &SemanticMask,
    config: &LocalConfig,
) -> Result<LocalDetection> {
    let n = config.samples.min(entries.len());
    if n < 2 {
        return Err(Error::Argument("local detection needs at least two samples".into()));
    }
    if mask.size != config.grid {
        return Err(Error::dim("mask size", config.grid, mask.size));
    }
    let channels = generator.layout().channels(config.include_trgb);
    // per sample: best category (and OC) for every channel
    let per_sample = crate::exec::try_map_range(n, |i| {
        let e = &entries[i];
        let noise = e.noise(generator);
        channels
            .iter()
            .map(|&u| {
                let map = gradient_map(generator, &e.styles.0, &noise, u, config.grid, config.saliency)?;
                best_category(&map, mask, config.d)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let k = mask.categories;
    let mut tallies: Vec<ChannelVotes> = channels
        .iter()
        .map(|&u| ChannelVotes {
            channel: generator.layout().channel_at(u),
            votes: vec![0; k],
            abstained: 0,
            oc_sum: vec![0.0; k],
        })
        .collect();
    for row in &per_sample {
        for (t, best) in tallies.iter_mut().zip(row) {
            match best {
                Some((c, oc)) => {
                    t.votes[*c] += 1;
                    t.oc_sum[*c] += oc;
                }
                None => t.abstained += 1,
            }
        }
    }
    let accepted = tallies
        .iter()
        .filter_map(|t| {
            accept(&t.votes, n).map(|(region, vote, runner_up)| LocalChannelReport {
                channel: t.channel,
                region,
                vote,
                runner_up,
                mean_oc: t.oc_sum[region] / t.votes[region] as f64,
            })
        })
        .collect();
    Ok(LocalDetection {
        samples: n,
        tallies,
        accepted,
    })
}

impl LocalDetection {
    /// Channel -> region for the accepted channels.
    pub fn regions(&self) -> BTreeMap<ChannelId, usize> {
        self.accepted.iter().map(|r| (r.channel, r.region)).collect()
    }

    /// Accepted channels whose region is `region`.
    pub fn channels_in(&self, region: usize) -> Vec<ChannelId> {
        self.accepted.iter().filter(|r| r.region == region).map(|r| r.channel).collect()
    }

    /// `layer,channel,region,vote,runner_up,mean_oc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,channel,region,vote,runner_up,mean_oc\n");
        for r in &self.accepted {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.8}\n",
                r.channel.layer, r.channel.channel, r.region, r.vote, r.runner_up, r.mean_oc
            ));
        }
        out
    }
}

/// Precision and recall of detected channel -> region pairs against the truth.
pub fn score_against_truth(found: &BTreeMap<ChannelId, usize>, truth: &PlantedGroundTruth) -> (f64, f64) {
    let hits = found
        .iter()
        .filter(|(id, region)| truth.region_of(**id) == Some(**region))
        .count() as f64;
    let precision = if found.is_empty() { 0.0 } else { hits / found.len() as f64 };
    let recall = if truth.regions.is_empty() {
        1.0
    } else {
        hits / truth.regions.len() as f64
    };
    (precision, recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: Vec<f64>) -> GradientMap {
        let size = (values.len() as f64).sqrt() as usize;
        GradientMap {
            size,
            values,
            channel: ChannelId::new(0, 0),
            sample: 0,
        }
    }

    #[test]
    fn rule_arithmetic() {
        assert_eq!(accept(&[800, 100, 50, 50], 1000).map(|a| a.0), Some(0));
        assert!(accept(&[550, 400, 50, 0], 1000).is_none());
        assert!(accept(&[500, 0, 0, 0], 1000).is_none());
    }

    #[test]
    fn identical_mask_scores_inverse_size() {
        let mask = crate::testbed::segment(4, 4, 4).unwrap();
        let g = map((0..16).map(|i| if mask.labels[i] == 2 { 1.0 } else { 0.0 }).collect());
        let oc = overlap_coefficient(&g, &mask, 2, 2.0).unwrap().unwrap();
        assert_eq!(oc, 4.0 / 16.0);
        assert_eq!(overlap_coefficient(&g, &mask, 1, 2.0).unwrap(), Some(0.0));
        assert_eq!(best_category(&g, &mask, 2.0).unwrap().unwrap().0, 2);
    }

    #[test]
    fn uniform_saliency_ties_to_lowest_id() {
        let mask = crate::testbed::segment(4, 4, 4).unwrap();
        assert_eq!(best_category(&map(vec![1.0; 16]), &mask, 2.0).unwrap().unwrap().0, 0);
        assert_eq!(best_category(&map(vec![0.0; 16]), &mask, 2.0).unwrap(), None);
    }
}
