//! Attribute-specific channels from a handful of positive examples.
//!
//! Exemplar styles are normalized against the population, `δ = (s − μ^p)/σ^p`,
//! and each channel is scored by `θ_u = |mean δ_u| / std δ_u`: channels that
//! move consistently across the exemplars rank first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ChannelId, StyleLayout};
use crate::numerics::{stats, Rng};
use crate::testbed::{BankStats, ImageBank};

/// Floor on the exemplar standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// One row of normalized deviations per exemplar; constant channels give 0.
pub fn exemplar_deltas(exemplars: &[&[f64]], stats: &BankStats) -> Result<Vec<Vec<f64>>> {
    let dim = stats.style_mean.len();
    exemplars
        .iter()
        .map(|s| {
            if s.len() != dim {
                return Err(Error::dim("exemplar styles", dim, s.len()));
            }
            Ok(s.iter()
                .zip(stats.style_mean.iter().zip(&stats.style_std))
                .map(|(v, (m, sd))| if *sd > 0.0 { (v - m) / sd } else { 0.0 })
                .collect())
        })
        .collect()
}

/// `θ_u = |μ^e_u| / max(σ^e_u, floor)`, population convention; `μ^e_u = 0` gives 0.
pub fn relevance(deltas: &[Vec<f64>]) -> Result<Vec<f64>> {
    if deltas.len() < 2 {
        return Err(Error::Argument("relevance needs at least two exemplars".into()));
    }
    let dim = deltas[0].len();
    Ok((0..dim)
        .map(|u| {
            let col: Vec<f64> = deltas.iter().map(|r| r[u]).collect();
            let m = stats::mean(&col);
            if m == 0.0 {
                0.0
            } else {
                m.abs() / stats::std_pop(&col).max(SIGMA_FLOOR)
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedChannel {
    pub channel: ChannelId,
    pub flat: usize,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRanking {
    pub attribute: String,
    pub exemplars: usize,
    pub restricted: bool,
    pub entries: Vec<RankedChannel>,
}

impl RelevanceRanking {
    pub fn top(&self, k: usize) -> &[RankedChannel] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// 1-based rank of `channel`, if ranked.
    pub fn rank_of(&self, channel: ChannelId) -> Option<usize> {
        self.entries.iter().position(|e| e.channel == channel).map(|p| p + 1)
    }

    /// `rank,layer,channel,theta`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,layer,channel,theta\n");
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!("{},{},{},{:.8}\n", i + 1, e.channel.layer, e.channel.channel, e.theta));
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankOptions {
    /// Only rank these flat channels.
    pub restrict_to: Option<Vec<usize>>,
    pub include_trgb: bool,
    /// Channels to leave out (e.g. zero population spread).
    pub exclude: Vec<usize>,
}

/// Descending θ over the allowed channels; ties by `(layer, channel)`.
pub fn rank_channels(attribute: &str, theta: &[f64], layout: &StyleLayout, exemplars: usize, options: &RankOptions) -> Result<RelevanceRanking> {
    if theta.len() != layout.total() {
        return Err(Error::dim("theta", layout.total(), theta.len()));
    }
    let allowed: Vec<usize> = match &options.restrict_to {
        Some(list) => {
            if let Some(bad) = list.iter().find(|&&u| u >= layout.total()) {
                return Err(Error::Argument(format!("channel {bad} out of range")));
            }
            let mut l = list.clone();
            l.sort_unstable();
            l.dedup();
            l
        }
        None => (0..layout.total()).collect(),
    };
    let mut entries: Vec<RankedChannel> = allowed
        .into_iter()
        .filter(|&u| options.include_trgb || !layout.is_trgb(u))
        .filter(|u| !options.exclude.contains(u))
        .map(|u| RankedChannel {
            channel: layout.channel_at(u),
            flat: u,
            theta: theta[u],
        })
        .collect();
    entries.sort_by(|a, b| b.theta.total_cmp(&a.theta).then(a.channel.cmp(&b.channel)));
    Ok(RelevanceRanking {
        attribute: attribute.to_string(),
        exemplars,
        restricted: options.restrict_to.is_some(),
        entries,
    })
}

/// Bank indices whose logit for `attribute` lies below its `q`-quantile
/// (the strongest `⌊q n⌋` positives, most negative first).
pub fn positive_exemplars(bank: &ImageBank, attribute: usize, q: f64) -> Vec<usize> {
    let logits = bank.logit_column(attribute);
    let k = (logits.len() as f64 * q + 1e-9).floor() as usize;
    stats::argsort(&logits).into_iter().take(k).filter(|&i| logits[i] < 0.0).collect()
}

/// Ranking from the given bank entries.
pub fn rank_from_exemplars(bank: &ImageBank, layout: &StyleLayout, attribute: usize, indices: &[usize], options: &RankOptions) -> Result<RelevanceRanking> {
    let rows: Vec<&[f64]> = indices.iter().map(|&i| bank.entries[i].styles.0.as_slice()).collect();
    let theta = relevance(&exemplar_deltas(&rows, &bank.stats)?)?;
    let mut options = options.clone();
    options.exclude.extend(bank.stats.constant_channels.iter().copied());
    rank_channels(&bank.meta.attributes[attribute], &theta, layout, indices.len(), &options)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub n_examples: usize,
    pub trials: usize,
    pub top_k: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotResult {
    pub attribute: String,
    pub n_examples: usize,
    pub restricted: bool,
    pub successes: usize,
    pub trials: usize,
    pub accuracy: f64,
}

/// Repeatedly ranks channels from `n_examples` positives drawn from `pool`
/// and counts how often the top `k` hits the verified set.
pub fn fewshot_experiment(
    bank: &ImageBank,
    layout: &StyleLayout,
    attribute: usize,
    pool: &[usize],
    verified: &[usize],
    options: &RankOptions,
    config: &FewShotConfig,
) -> Result<FewShotResult> {
    if pool.len() < config.n_examples {
        return Err(Error::Argument(format!(
            "{} positives available, {} requested",
            pool.len(),
            config.n_examples
        )));
    }
    let hits = crate::exec::try_map_range(config.trials, |t| {
        let mut rng = Rng::new(config.seed, t as u64);
        let picked: Vec<usize> = rng
            .sample_indices(pool.len(), config.n_examples)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        let ranking = rank_from_exemplars(bank, layout, attribute, &picked, options)?;
        Ok::<_, Error>(ranking.top(config.top_k).iter().any(|e| verified.contains(&e.flat)))
    })?;
    let successes = hits.iter().filter(|&&h| h).count();
    Ok(FewShotResult {
        attribute: bank.meta.attributes[attribute].clone(),
        n_examples: config.n_examples,
        restricted: options.restrict_to.is_some(),
        successes,
        trials: config.trials,
        accuracy: if config.trials == 0 { 0.0 } else { successes as f64 / config.trials as f64 },
    })
}

/// `attribute,n_examples,restricted,accuracy,trials`.
pub fn fewshot_csv(results: &[FewShotResult]) -> String {
    let mut out = String::from("attribute,n_examples,restricted,accuracy,trials\n");
    for r in results {
        out.push_str(&format!("{},{},{},{:.6},{}\n", r.attribute, r.n_examples, r.restricted, r.accuracy, r.trials));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_theta() {
        let d = vec![vec![2.0], vec![2.2], vec![1.8]];
        let t = relevance(&d).unwrap()[0];
        assert!((t - 2.0 / (0.08f64 / 3.0).sqrt()).abs() < 1e-9);
        assert!((t - 12.247).abs() < 1e-3);
    }

    #[test]
    fn single_exemplar_rejected() {
        assert!(relevance(&[vec![1.0]]).is_err());
    }

    #[test]
    fn zero_mean_gives_zero_theta() {
        let d = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(relevance(&d).unwrap(), vec![0.0, 0.0]);
    }
}
