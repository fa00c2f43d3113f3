//! End-to-end experiment steps that turn a bank into report files.
//!
//! Each step returns its outputs as an in-memory [`Report`] (file name ->
//! bytes) so the CLI can write them next to a manifest and tests can compare
//! runs byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attr_detect::{
    exemplar_deltas, fewshot_csv, fewshot_experiment, positive_exemplars, rank_from_exemplars, FewShotConfig,
    FewShotResult, RankOptions, RelevanceRanking,
};
use crate::dci::{dci_compare, reports_csv, DciConfig, DciReport, Space};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::local_detect::{detect_local_channels, score_against_truth, LocalConfig, LocalDetection};
use crate::manip_ad::{ad_curve, calibrate_m_max, w_direction_for, AdConfig, AdCurve, Direction};
use crate::numerics::stats;
use crate::testbed::{segment, ImageBank};

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Report {
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(name.into(), bytes.into());
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add(name, text);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- dci

pub fn dci_report(
    bank: &ImageBank,
    wplus_bank: Option<&ImageBank>,
    spaces: &[Space],
    config: &DciConfig,
) -> Result<(Vec<DciReport>, Report)> {
    let reports = dci_compare(bank, wplus_bank, spaces, config)?;
    let mut out = Report::default();
    out.add("dci.csv", reports_csv(&reports));
    out.add_json("dci.json", &reports)?;
    Ok((reports, out))
}

// ---------------------------------------------------------------- local

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSummary {
    pub samples: usize,
    pub accepted: usize,
    /// Against the planted map, when there is one.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn local_report(generator: &Generator, bank: &ImageBank, config: &LocalConfig) -> Result<(LocalDetection, Report)> {
    bank.check_generator(generator)?;
    let mask = segment(config.grid, bank.meta.classifier.tiles(), config.grid)?;
    let found = detect_local_channels(generator, &bank.entries, &mask, config)?;
    let (precision, recall) = match generator.planted_truth() {
        Some(t) => {
            let (p, r) = score_against_truth(&found.regions(), t);
            (Some(p), Some(r))
        }
        None => (None, None),
    };
    let summary = LocalSummary {
        samples: found.samples,
        accepted: found.accepted.len(),
        precision,
        recall,
    };
    let mut out = Report::default();
    out.add("local.csv", found.to_csv());
    out.add_json("local.json", &found)?;
    out.add_json("local_summary.json", &summary)?;
    Ok((found, out))
}

// ---------------------------------------------------------------- attr

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrConfig {
    /// Fraction of the bank (lowest logits) used as positive exemplars.
    pub exemplar_quantile: f64,
    pub shots: Vec<usize>,
    pub trials: usize,
    pub top_k: usize,
    pub seed: u64,
    pub include_trgb: bool,
}

impl Default for AttrConfig {
    fn default() -> Self {
        Self {
            exemplar_quantile: 0.02,
            shots: vec![10, 20, 30],
            trials: 200,
            top_k: 5,
            seed: 0,
            include_trgb: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeChannels {
    pub attribute: String,
    pub exemplars: usize,
    /// Planted channel if known, otherwise the top full-exemplar channel.
    pub verified: usize,
    pub verified_source: String,
    /// Top channel of the full-exemplar ranking.
    pub top: usize,
    pub top_is_verified: bool,
    /// +1 when positives sit above the channel mean.
    pub sign: f64,
    /// Locally-active channels of the attribute's region, when available.
    pub local: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrSummary {
    pub attributes: Vec<AttributeChannels>,
    pub fewshot: Vec<FewShotResult>,
}

/// Flat indices of the local channels in the attribute's tile.
fn local_channels(generator: &Generator, bank: &ImageBank, local: &LocalDetection, attribute: usize) -> Vec<usize> {
    let tile = bank.meta.classifier.specs()[attribute].tile;
    local
        .channels_in(tile)
        .into_iter()
        .filter_map(|id| generator.layout().flat_index(id).ok())
        .collect()
}

fn mean_sign(bank: &ImageBank, exemplars: &[usize], flat: usize) -> Result<f64> {
    let rows: Vec<&[f64]> = exemplars.iter().map(|&i| bank.entries[i].styles.0.as_slice()).collect();
    let deltas = exemplar_deltas(&rows, &bank.stats)?;
    let m = stats::mean(&deltas.iter().map(|d| d[flat]).collect::<Vec<_>>());
    Ok(if m < 0.0 { -1.0 } else { 1.0 })
}

/// θ rankings for every attribute plus few-shot accuracy per shot count.
pub fn attr_analysis(
    generator: &Generator,
    bank: &ImageBank,
    local: Option<&LocalDetection>,
    config: &AttrConfig,
) -> Result<(AttrSummary, Vec<RelevanceRanking>)> {
    bank.check_generator(generator)?;
    let layout = generator.layout();
    let base = RankOptions {
        include_trgb: config.include_trgb,
        ..Default::default()
    };
    let mut attributes = Vec::new();
    let mut rankings = Vec::new();
    let mut fewshot = Vec::new();
    for (a, name) in bank.meta.attributes.iter().enumerate() {
        let pool = positive_exemplars(bank, a, config.exemplar_quantile);
        if pool.len() < 2 {
            return Err(Error::Data(format!("attribute `{name}` has fewer than two positive exemplars")));
        }
        let ranking = rank_from_exemplars(bank, layout, a, &pool, &base)?;
        let top = ranking.top(1)[0].flat;
        let (verified, source) = match generator.planted_truth().and_then(|t| t.attribute(name)) {
            Some(p) => (layout.flat_index(p.channel)?, "planted"),
            None => (top, "full_ranking"),
        };
        let restrict = local.map(|l| local_channels(generator, bank, l, a));
        attributes.push(AttributeChannels {
            attribute: name.clone(),
            exemplars: pool.len(),
            verified,
            verified_source: source.into(),
            top,
            top_is_verified: top == verified,
            sign: mean_sign(bank, &pool, verified)?,
            local: restrict.clone(),
        });
        let mut variants = vec![base.clone()];
        if let Some(r) = &restrict {
            variants.push(RankOptions {
                restrict_to: Some(r.clone()),
                ..base.clone()
            });
        }
        for opts in &variants {
            for &n in &config.shots {
                let fs = FewShotConfig {
                    n_examples: n,
                    trials: config.trials,
                    top_k: config.top_k,
                    seed: crate::numerics::derive_seed(config.seed, (a * 1000 + n) as u64),
                };
                fewshot.push(fewshot_experiment(bank, layout, a, &pool, &[verified], opts, &fs)?);
            }
        }
        rankings.push(ranking);
    }
    Ok((AttrSummary { attributes, fewshot }, rankings))
}

pub fn attr_report(
    generator: &Generator,
    bank: &ImageBank,
    local: Option<&LocalDetection>,
    config: &AttrConfig,
) -> Result<(AttrSummary, Report)> {
    let (summary, rankings) = attr_analysis(generator, bank, local, config)?;
    let mut out = Report::default();
    for r in &rankings {
        out.add(format!("ranking_{}.csv", r.attribute), r.to_csv());
    }
    out.add("fewshot.csv", fewshot_csv(&summary.fewshot));
    out.add_json("attr.json", &summary)?;
    Ok((summary, out))
}

// ---------------------------------------------------------------- ad

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdRunConfig {
    pub ad: AdConfig,
    /// Bank entries probed when calibrating `m_max`.
    pub probes: usize,
    /// Attributes to manipulate; `None` means all.
    pub attributes: Option<Vec<String>>,
    pub exemplar_quantile: f64,
}

impl Default for AdRunConfig {
    fn default() -> Self {
        Self {
            ad: AdConfig {
                max_candidates: Some(100),
                ..AdConfig::default()
            },
            probes: 32,
            attributes: None,
            exemplar_quantile: 0.02,
        }
    }
}

/// Channel and W-space curves for each requested attribute. The channel is
/// the attribute's verified channel from `attrs`.
pub fn ad_curves(
    generator: &Generator,
    bank: &ImageBank,
    attrs: &AttrSummary,
    config: &AdRunConfig,
) -> Result<Vec<AdCurve>> {
    bank.check_generator(generator)?;
    let cls = &bank.meta.classifier;
    let names: Vec<String> = match &config.attributes {
        Some(v) => v.clone(),
        None => bank.meta.attributes.clone(),
    };
    let probes = &bank.entries[..config.probes.min(bank.len())];
    let sigma = &bank.stats.style_std;
    let mut curves = Vec::new();
    for name in &names {
        let a = cls.index_of(name)?;
        let info = attrs
            .attributes
            .iter()
            .find(|x| &x.attribute == name)
            .ok_or_else(|| Error::Missing(format!("no channel analysis for `{name}`")))?;
        let positives = positive_exemplars(bank, a, config.exemplar_quantile);
        let dirs = [
            Direction::channel(info.verified, info.sign),
            w_direction_for(generator, bank, &positives)?,
        ];
        for dir in &dirs {
            let m_max = calibrate_m_max(generator, cls, probes, dir, sigma)?;
            curves.push(ad_curve(generator, cls, bank, a, dir, m_max, &config.ad)?);
        }
    }
    Ok(curves)
}

pub fn ad_report(
    generator: &Generator,
    bank: &ImageBank,
    attrs: &AttrSummary,
    config: &AdRunConfig,
) -> Result<(Vec<AdCurve>, Report)> {
    let curves = ad_curves(generator, bank, attrs, config)?;
    let mut csv = String::from("attribute,r,mean_ad,max_ad,converged,nonconverged,direction_label\n");
    for c in &curves {
        let mut rows = String::new();
        c.append_rows(&mut rows);
        for line in rows.lines() {
            csv.push_str(&format!("{},{line}\n", c.attribute));
        }
    }
    let points: Vec<_> = curves
        .iter()
        .map(|c| {
            serde_json::json!({
                "attribute": c.attribute,
                "direction": c.direction,
                "m_max": c.m_max,
                "points": c.points,
            })
        })
        .collect();
    let mut out = Report::default();
    out.add("ad.csv", csv);
    out.add_json("ad.json", &points)?;
    Ok((curves, out))
}
