//! DCI scoring of latent spaces against attribute logits.

pub mod lasso;
pub mod scores;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use lasso::{fit_lasso, LassoConfig, LassoFit};
pub use scores::{completeness, disentanglement, one_minus_entropy, ImportanceMatrix};

use crate::error::{Error, Result};
use crate::numerics::stats;
use crate::testbed::{filter_active_attributes, select_extremes, ImageBank, LatentMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    Z,
    W,
    #[serde(rename = "W+")]
    WPlus,
    S,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Z => "Z",
            Space::W => "W",
            Space::WPlus => "W+",
            Space::S => "S",
        })
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "Z" => Ok(Space::Z),
            "W" => Ok(Space::W),
            "W+" | "WPLUS" | "W_PLUS" => Ok(Space::WPlus),
            "S" => Ok(Space::S),
            other => Err(Error::Argument(format!("unknown latent space `{other}`"))),
        }
    }
}

/// Latent codes of every bank entry in `space`.
pub fn latents(bank: &ImageBank, space: Space) -> Result<Vec<Vec<f64>>> {
    let mode = bank.meta.mode;
    let pick = |f: fn(&crate::testbed::BankEntry) -> &Vec<f64>| bank.entries.iter().map(|e| f(e).clone()).collect();
    match (space, mode) {
        (Space::S, _) => Ok(bank.entries.iter().map(|e| e.styles.0.clone()).collect()),
        (Space::Z, LatentMode::W) => Ok(pick(|e| &e.z)),
        (Space::W, LatentMode::W) => Ok(pick(|e| &e.w)),
        (Space::WPlus, LatentMode::WPlus) => Ok(pick(|e| &e.w)),
        (space, mode) => Err(Error::Missing(format!(
            "a {mode:?}-sampled bank records no {space} provenance"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DciConfig {
    pub lasso: LassoConfig,
    /// Tail fraction used for training/testing examples.
    pub quantile: f64,
    /// Attribute activity threshold.
    pub active_threshold: f64,
    pub standardize_logits: bool,
    /// Attributes below this test accuracy are excluded from C and I.
    pub min_accuracy: f64,
}

impl Default for DciConfig {
    fn default() -> Self {
        Self {
            lasso: LassoConfig::default(),
            quantile: 0.02,
            active_threshold: 0.05,
            standardize_logits: true,
            min_accuracy: 0.55,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub name: String,
    pub completeness: Option<f64>,
    pub accuracy: f64,
    pub informative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DciReport {
    pub space: Space,
    pub disentanglement: f64,
    pub completeness: f64,
    pub informativeness: f64,
    pub per_dimension: Vec<Option<f64>>,
    pub per_attribute: Vec<AttributeScore>,
    pub excluded: Vec<String>,
    pub importance: ImportanceMatrix,
}

/// Binary accuracy of predicting the label (negative logit = present) by sign.
pub fn informativeness(fit: &LassoFit, rows: &[Vec<f64>], present: &[bool], center: f64, scale: f64) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    let hits = rows
        .iter()
        .zip(present)
        .filter(|(r, &p)| (fit.predict(r) * scale + center < 0.0) == p)
        .count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Runs the DCI protocol for one space over the bank's active attributes.
pub fn dci_scores(bank: &ImageBank, space: Space, config: &DciConfig) -> Result<DciReport> {
    let codes = latents(bank, space)?;
    let active = filter_active_attributes(bank, config.active_threshold);
    let fits = crate::exec::try_map_range(active.len(), |k| {
        let a = active[k];
        let logits = bank.logit_column(a);
        let ext = select_extremes(&logits, config.quantile)?;
        let (center, scale) = if config.standardize_logits {
            let sd = stats::std_pop(&logits);
            (stats::mean(&logits), if sd > 0.0 { sd } else { 1.0 })
        } else {
            (0.0, 1.0)
        };
        let train_x: Vec<Vec<f64>> = ext.train.indices.iter().map(|&i| codes[i].clone()).collect();
        let train_y: Vec<f64> = ext.train.indices.iter().map(|&i| (logits[i] - center) / scale).collect();
        let fit = fit_lasso(&train_x, &train_y, &config.lasso)?;
        let test_x: Vec<Vec<f64>> = ext.test.indices.iter().map(|&i| codes[i].clone()).collect();
        let acc = informativeness(&fit, &test_x, &ext.test.present, center, scale)?;
        Ok::<_, Error>((fit, acc))
    })?;
    let weights: Vec<Vec<f64>> = fits.iter().map(|(f, _)| f.weights.clone()).collect();
    let dims = codes.first().map_or(0, Vec::len);
    let importance = if weights.is_empty() {
        ImportanceMatrix::new(dims, 0, vec![])?
    } else {
        ImportanceMatrix::from_weights(&weights)?
    };
    let zero = importance.zero_columns();
    let included: Vec<usize> = (0..active.len())
        .filter(|&j| !zero.contains(&j) && fits[j].1 >= config.min_accuracy)
        .collect();
    let (per_dimension, d) = disentanglement(&importance);
    let (per_c, c) = completeness(&importance, &included);
    let i = if included.is_empty() {
        0.0
    } else {
        included.iter().map(|&j| fits[j].1).sum::<f64>() / included.len() as f64
    };
    let per_attribute: Vec<AttributeScore> = active
        .iter()
        .enumerate()
        .map(|(j, &a)| AttributeScore {
            name: bank.meta.attributes[a].clone(),
            completeness: per_c[j],
            accuracy: fits[j].1,
            informative: included.contains(&j),
        })
        .collect();
    let excluded = per_attribute
        .iter()
        .filter(|s| !s.informative)
        .map(|s| s.name.clone())
        .collect();
    Ok(DciReport {
        space,
        disentanglement: d,
        completeness: c,
        informativeness: i,
        per_dimension,
        per_attribute,
        excluded,
        importance,
    })
}

/// Scores each requested space; W+ is scored on its own bank when supplied.
pub fn dci_compare(
    bank: &ImageBank,
    wplus_bank: Option<&ImageBank>,
    spaces: &[Space],
    config: &DciConfig,
) -> Result<Vec<DciReport>> {
    spaces
        .iter()
        .map(|&space| match (space, wplus_bank) {
            (Space::WPlus, Some(b)) => dci_scores(b, space, config),
            (Space::WPlus, None) if bank.meta.mode != LatentMode::WPlus => Err(Error::Missing(
                "W+ scoring needs a bank sampled in W+ mode".into(),
            )),
            _ => dci_scores(bank, space, config),
        })
        .collect()
}

/// One row per report: `space,disentanglement,completeness,informativeness,attributes,excluded`.
pub fn reports_csv(reports: &[DciReport]) -> String {
    let mut out = String::from("space,disentanglement,completeness,informativeness,attributes,excluded\n");
    for r in reports {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{}\n",
            r.space,
            r.disentanglement,
            r.completeness,
            r.informativeness,
            r.per_attribute.len(),
            r.excluded.len()
        ));
    }
    out
}
