//! Attribute manipulation, logit-targeted strength search and Attribute
//! Dependency (how much *other* attributes move when one is edited).

pub mod trgb;

use serde::{Deserialize, Serialize};

pub use trgb::{perturb_trgb, trgb_group_of, trgb_response, TrgbGroup};

use crate::error::{Error, Result};
use crate::generator::{Generator, LatentW, LatentWPlus, StyleVector};
use crate::numerics::{derive_seed, stats};
use crate::testbed::{BankEntry, Classifier, ImageBank};

/// A manipulation direction in style space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Direction {
    /// One channel, stepped in units of its population std.
    Channel { flat: usize, sign: f64 },
    /// Unit style-space vector, scaled per channel by the population std.
    Style { vector: Vec<f64> },
    /// Unit W vector; `lifted` is its image under the linear part of W -> S.
    W { vector: Vec<f64>, lifted: Vec<f64> },
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Argument("direction has zero or non-finite norm".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

impl Direction {
    pub fn channel(flat: usize, sign: f64) -> Self {
        Direction::Channel {
            flat,
            sign: if sign < 0.0 { -1.0 } else { 1.0 },
        }
    }

    pub fn style(vector: &[f64]) -> Result<Self> {
        Ok(Direction::Style { vector: unit(vector)? })
    }

    pub fn w(generator: &Generator, vector: &[f64]) -> Result<Self> {
        if vector.len() != generator.config().w_dim {
            return Err(Error::dim("w direction", generator.config().w_dim, vector.len()));
        }
        let v = unit(vector)?;
        let slots = generator.layout().wplus_slots();
        let lifted = generator
            .affine()
            .apply_linear(generator.layout(), &LatentWPlus::broadcast(&LatentW(v.clone()), slots));
        Ok(Direction::W { vector: v, lifted })
    }

    pub fn label(&self) -> String {
        match self {
            Direction::Channel { flat, sign } => format!("channel_{flat}{}", if *sign < 0.0 { "-" } else { "+" }),
            Direction::Style { .. } => "style".into(),
            Direction::W { .. } => "w".into(),
        }
    }
}

/// `s + m · step`; W directions move `w` and re-derive `s` (exactly, since W -> S is affine).
pub fn manipulate(styles: &StyleVector, dir: &Direction, m: f64, sigma: &[f64]) -> Result<StyleVector> {
    let mut out = styles.clone();
    let n = out.len();
    match dir {
        Direction::Channel { flat, sign } => {
            if *flat >= n {
                return Err(Error::Argument(format!("channel {flat} out of range")));
            }
            out.0[*flat] += m * sigma[*flat] * sign;
        }
        Direction::Style { vector } => {
            if vector.len() != n {
                return Err(Error::dim("style direction", n, vector.len()));
            }
            for ((s, v), sd) in out.0.iter_mut().zip(vector).zip(sigma) {
                *s += m * v * sd;
            }
        }
        Direction::W { lifted, .. } => {
            if lifted.len() != n {
                return Err(Error::dim("lifted w direction", n, lifted.len()));
            }
            for (s, v) in out.0.iter_mut().zip(lifted) {
                *s += m * v;
            }
        }
    }
    Ok(out)
}

/// Unit W direction pointing from the population mean `w` towards the mean
/// `w` of the given positives.
pub fn w_direction_for(generator: &Generator, bank: &ImageBank, positives: &[usize]) -> Result<Direction> {
    if positives.is_empty() {
        return Err(Error::Argument("no positive examples".into()));
    }
    let d = generator.config().w_dim;
    if bank.entries.iter().any(|e| e.w.len() != d) {
        return Err(Error::Missing("W direction needs a W-sampled bank".into()));
    }
    let mean = |idx: &mut dyn Iterator<Item = &BankEntry>| -> Vec<f64> {
        let mut acc = vec![0.0; d];
        let mut k = 0.0;
        for e in idx {
            acc.iter_mut().zip(&e.w).for_each(|(a, b)| *a += b);
            k += 1.0;
        }
        acc.into_iter().map(|a| a / k).collect()
    };
    let pos = mean(&mut positives.iter().map(|&i| &bank.entries[i]));
    let all = mean(&mut bank.entries.iter());
    let v: Vec<f64> = pos.iter().zip(&all).map(|(a, b)| a - b).collect();
    Direction::w(generator, &v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectionConfig {
    /// Acceptance band as a fraction of `σ(l_t)`.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            max_iter: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthResult {
    /// `None` when no strength in `[0, m_max]` met the tolerance.
    pub strength: Option<f64>,
    pub iterations: usize,
    pub final_logit: f64,
}

/// Bisection on `[0, m_max]` for `l(m) = l(0) − Δ` within `tolerance · σ`.
///
/// `logit_at(m)` must be the target logit after manipulating by `m`. The
/// logit is assumed to decrease with `m` near the root.
pub fn find_strength(
    logit_at: impl Fn(f64) -> Result<f64>,
    initial: f64,
    delta: f64,
    sigma: f64,
    m_max: f64,
    config: &BisectionConfig,
) -> Result<StrengthResult> {
    if !(m_max > 0.0) || delta < 0.0 || !(sigma > 0.0) {
        return Err(Error::Argument(format!("bad bisection inputs: m_max {m_max}, Δ {delta}, σ {sigma}")));
    }
    let target = initial - delta;
    let tol = config.tolerance * sigma;
    if delta == 0.0 {
        return Ok(StrengthResult {
            strength: Some(0.0),
            iterations: 0,
            final_logit: initial,
        });
    }
    let g_hi = logit_at(m_max)? - target;
    if g_hi.abs() < tol {
        return Ok(StrengthResult {
            strength: Some(m_max),
            iterations: 0,
            final_logit: g_hi + target,
        });
    }
    if g_hi > 0.0 {
        // g(0) = Δ > 0 as well: no bracket
        return Ok(StrengthResult {
            strength: None,
            iterations: 0,
            final_logit: g_hi + target,
        });
    }
    let (mut lo, mut hi) = (0.0, m_max);
    let mut last = g_hi + target;
    for it in 1..=config.max_iter {
        let mid = 0.5 * (lo + hi);
        let l = logit_at(mid)?;
        last = l;
        let g = l - target;
        if g.abs() < tol {
            return Ok(StrengthResult {
                strength: Some(mid),
                iterations: it,
                final_logit: l,
            });
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(StrengthResult {
        strength: None,
        iterations: config.max_iter,
        final_logit: last,
    })
}

/// Smallest strength on a doubling grid at which any probe image leaves the
/// classifier's physical statistic ranges, halved.
pub fn calibrate_m_max(
    generator: &Generator,
    classifier: &Classifier,
    probes: &[BankEntry],
    dir: &Direction,
    sigma: &[f64],
) -> Result<f64> {
    let mut m = 0.25;
    while m <= 1024.0 {
        let out = crate::exec::try_map_range(probes.len(), |i| {
            let e = &probes[i];
            let s = manipulate(&e.styles, dir, m, sigma)?;
            classifier.in_range(&generator.synthesize(&s, &e.noise(generator))?)
        })?;
        if out.iter().any(|ok| !ok) {
            return Ok(m / 2.0);
        }
        m *= 2.0;
    }
    Ok(512.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdConfig {
    pub r_values: Vec<f64>,
    pub bisection: BisectionConfig,
    /// Cap on candidates (evenly spaced through the band); `None` keeps all.
    pub max_candidates: Option<usize>,
    /// Attributes counted as "other"; `None` means every attribute but the target.
    pub others: Option<Vec<usize>>,
}

impl Default for AdConfig {
    fn default() -> Self {
        Self {
            r_values: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            bisection: BisectionConfig::default(),
            max_candidates: None,
            others: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdCurvePoint {
    pub r: f64,
    pub mean_ad: f64,
    pub max_ad: f64,
    /// Standard error of the per-candidate mean-AD.
    pub std_err: f64,
    /// Mean signed normalized change of the other attributes, and its standard error.
    pub signed_mean: f64,
    pub signed_std_err: f64,
    pub converged: usize,
    pub nonconverged: usize,
    /// Fraction of candidates whose target logit landed within tolerance of its goal.
    pub target_within_tol: f64,
    /// Largest number of bisection iterations used.
    pub max_iterations: usize,
}

impl AdCurvePoint {
    pub fn is_empty(&self) -> bool {
        self.converged == 0
    }

    pub fn nonconverged_fraction(&self) -> f64 {
        let n = self.converged + self.nonconverged;
        if n == 0 {
            0.0
        } else {
            self.nonconverged as f64 / n as f64
        }
    }
}

/// Bank indices whose target-logit rank lies in `[0.5 n, 0.75 n]` (ascending logits).
pub fn candidate_band(logits: &[f64]) -> Vec<usize> {
    let n = logits.len() as f64;
    let order = stats::argsort(logits);
    let (lo, hi) = ((0.5 * n).ceil() as usize, (0.75 * n).floor() as usize);
    order
        .into_iter()
        .enumerate()
        .filter(|(rank, _)| *rank >= lo && *rank <= hi)
        .map(|(_, i)| i)
        .collect()
}

fn spread(items: Vec<usize>, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(k) if k < items.len() => (0..k).map(|j| items[j * items.len() / k]).collect(),
        _ => items,
    }
}

/// Per-candidate outcome at one `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub index: usize,
    pub strength: Option<f64>,
    pub iterations: usize,
    pub target_error: f64,
    /// `|Δl_i| / σ(l_i)` per other attribute, empty when not converged.
    pub changes: Vec<f64>,
    pub signed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdCurve {
    pub attribute: String,
    pub direction: String,
    pub m_max: f64,
    pub points: Vec<AdCurvePoint>,
    pub outcomes: Vec<Vec<CandidateOutcome>>,
}

/// Mean-AD / max-AD curve for manipulating attribute `target` along `dir`.
#[allow(clippy::too_many_arguments)]
pub fn ad_curve(
    generator: &Generator,
    classifier: &Classifier,
    bank: &ImageBank,
    target: usize,
    dir: &Direction,
    m_max: f64,
    config: &AdConfig,
) -> Result<AdCurve> {
    let sigma_l = &bank.stats.logit_std;
    let sigma_s = &bank.stats.style_std;
    let others: Vec<usize> = config
        .others
        .clone()
        .unwrap_or_else(|| (0..sigma_l.len()).collect())
        .into_iter()
        .filter(|&a| a != target)
        .collect();
    if others.iter().any(|&a| !(sigma_l[a] > 0.0)) || !(sigma_l[target] > 0.0) {
        return Err(Error::Data("an attribute has zero logit spread in the bank".into()));
    }
    let candidates = spread(candidate_band(&bank.logit_column(target)), config.max_candidates);
    if candidates.is_empty() {
        return Err(Error::Argument("no manipulation candidates".into()));
    }
    let mut points = Vec::new();
    let mut all_outcomes = Vec::new();
    for &r in &config.r_values {
        let outcomes = crate::exec::try_map_range(candidates.len(), |k| {
            let idx = candidates[k];
            let e = &bank.entries[idx];
            let noise = e.noise(generator);
            let before = &e.logits;
            let (strength, iterations, after) = if r == 0.0 {
                // control group: same styles, fresh noise
                let fresh = generator.noise(derive_seed(e.noise_seed, 1));
                let img = generator.synthesize(&e.styles, &fresh)?;
                (Some(0.0), 0, classifier.logits(&img)?)
            } else {
                let delta = r * sigma_l[target];
                let res = find_strength(
                    |m| {
                        let s = manipulate(&e.styles, dir, m, sigma_s)?;
                        classifier.logit(&generator.synthesize(&s, &noise)?, target)
                    },
                    before[target],
                    delta,
                    sigma_l[target],
                    m_max,
                    &config.bisection,
                )?;
                match res.strength {
                    Some(m) => {
                        let s = manipulate(&e.styles, dir, m, sigma_s)?;
                        (Some(m), res.iterations, classifier.logits(&generator.synthesize(&s, &noise)?)?)
                    }
                    None => (None, res.iterations, Vec::new()),
                }
            };
            let goal = before[target] - r * sigma_l[target];
            let (changes, signed, target_error) = if strength.is_some() {
                let signed: Vec<f64> = others.iter().map(|&a| (after[a] - before[a]) / sigma_l[a]).collect();
                (signed.iter().map(|v| v.abs()).collect(), signed, (after[target] - goal).abs())
            } else {
                (Vec::new(), Vec::new(), f64::INFINITY)
            };
            Ok::<_, Error>(CandidateOutcome {
                index: idx,
                strength,
                iterations,
                target_error,
                changes,
                signed,
            })
        })?;
        points.push(summarize(r, &outcomes, sigma_l[target] * config.bisection.tolerance));
        all_outcomes.push(outcomes);
    }
    Ok(AdCurve {
        attribute: bank.meta.attributes[target].clone(),
        direction: dir.label(),
        m_max,
        points,
        outcomes: all_outcomes,
    })
}

fn summarize(r: f64, outcomes: &[CandidateOutcome], tol: f64) -> AdCurvePoint {
    let done: Vec<&CandidateOutcome> = outcomes.iter().filter(|o| o.strength.is_some()).collect();
    let means: Vec<f64> = done.iter().map(|o| stats::mean(&o.changes)).collect();
    let maxes: Vec<f64> = done
        .iter()
        .map(|o| o.changes.iter().copied().fold(0.0, f64::max))
        .collect();
    let signed: Vec<f64> = done.iter().map(|o| stats::mean(&o.signed)).collect();
    let within = done.iter().filter(|o| o.target_error < tol).count();
    let se = |v: &[f64]| if v.len() > 1 { stats::std_error(v) } else { 0.0 };
    AdCurvePoint {
        r,
        mean_ad: if means.is_empty() { 0.0 } else { stats::mean(&means) },
        max_ad: if maxes.is_empty() { 0.0 } else { stats::mean(&maxes) },
        std_err: se(&means),
        signed_mean: if signed.is_empty() { 0.0 } else { stats::mean(&signed) },
        signed_std_err: se(&signed),
        converged: done.len(),
        nonconverged: outcomes.len() - done.len(),
        target_within_tol: if done.is_empty() { 0.0 } else { within as f64 / done.len() as f64 },
        max_iterations: outcomes.iter().map(|o| o.iterations).max().unwrap_or(0),
    }
}

impl AdCurve {
    /// `r,mean_ad,max_ad,converged,nonconverged,direction_label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,mean_ad,max_ad,converged,nonconverged,direction_label\n");
        self.append_rows(&mut out);
        out
    }

    pub fn append_rows(&self, out: &mut String) {
        for p in &self.points {
            out.push_str(&format!(
                "{},{:.8},{:.8},{},{},{}\n",
                p.r, p.mean_ad, p.max_ad, p.converged, p.nonconverged, self.direction
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_on_linear_logit() {
        let a = 0.8;
        let res = find_strength(|m| Ok(1.0 - a * m), 1.0, 0.5, 1.0, 4.0, &BisectionConfig::default()).unwrap();
        let m = res.strength.unwrap();
        assert!((1.0 - a * m - 0.5).abs() < 0.05);
        assert!(res.iterations <= 20);
    }

    #[test]
    fn zero_target_accepts_zero() {
        let res = find_strength(|_| panic!("not evaluated"), 0.3, 0.0, 1.0, 1.0, &BisectionConfig::default()).unwrap();
        assert_eq!(res.strength, Some(0.0));
    }

    #[test]
    fn unreachable_target_is_nonconverged() {
        let res = find_strength(|m| Ok(-0.1 * m), 0.0, 5.0, 1.0, 1.0, &BisectionConfig::default()).unwrap();
        assert_eq!(res.strength, None);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn band_is_closed_quantile_range() {
        let logits: Vec<f64> = (0..100).rev().map(|i| i as f64).collect();
        let band = candidate_band(&logits);
        assert_eq!(band.len(), 26);
        for i in band {
            let rank = 99 - i;
            assert!((50..=75).contains(&rank));
        }
    }
}
