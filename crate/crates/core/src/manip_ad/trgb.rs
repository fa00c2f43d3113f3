//! Random tRGB perturbations grouped by resolution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Generator, StyleLayout, StyleVector};
use crate::numerics::Rng;
use crate::testbed::BankEntry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrgbGroup {
    Early,
    Mid,
    Late,
    All,
}

impl fmt::Display for TrgbGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrgbGroup::Early => "early",
            TrgbGroup::Mid => "mid",
            TrgbGroup::Late => "late",
            TrgbGroup::All => "all",
        })
    }
}

impl FromStr for TrgbGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(TrgbGroup::Early),
            "mid" | "middle" => Ok(TrgbGroup::Mid),
            "late" => Ok(TrgbGroup::Late),
            "all" => Ok(TrgbGroup::All),
            other => Err(Error::Argument(format!("unknown tRGB group `{other}`"))),
        }
    }
}

/// Group of resolution level `level` out of `levels`, splitting the levels into
/// thirds (the 9-level 1024px model gives 0-2 / 3-5 / 6-8).
pub fn trgb_group_of(level: usize, levels: usize) -> TrgbGroup {
    match 3 * level / levels.max(1) {
        0 => TrgbGroup::Early,
        1 => TrgbGroup::Mid,
        _ => TrgbGroup::Late,
    }
}

fn selected(layout: &StyleLayout, group: TrgbGroup, u: usize) -> bool {
    if !layout.is_trgb(u) {
        return false;
    }
    let level = layout.layer(layout.channel_at(u).layer).level;
    group == TrgbGroup::All || trgb_group_of(level, layout.resolutions().len()) == group
}

/// `s + n σ^p` on the group's tRGB channels, `n ~ N(0, σ_n²)`.
pub fn perturb_trgb(
    layout: &StyleLayout,
    styles: &StyleVector,
    group: TrgbGroup,
    sigma_n: f64,
    sigma_p: &[f64],
    rng: &mut Rng,
) -> Result<StyleVector> {
    styles.check(layout)?;
    if sigma_p.len() != layout.total() {
        return Err(Error::dim("population std", layout.total(), sigma_p.len()));
    }
    let mut out = styles.clone();
    for u in 0..layout.total() {
        if selected(layout, group, u) {
            out.0[u] += sigma_n * rng.normal() * sigma_p[u];
        }
    }
    Ok(out)
}

/// Per-entry size of the change in mean image color (L2 over RGB) after a
/// random perturbation of `group`; entry `i` draws from stream `(seed, i)`.
pub fn trgb_response(
    generator: &Generator,
    entries: &[BankEntry],
    group: TrgbGroup,
    sigma_n: f64,
    sigma_p: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    crate::exec::try_map_range(entries.len(), |i| {
        let e = &entries[i];
        let noise = e.noise(generator);
        let mut rng = Rng::new(seed, i as u64);
        let s = perturb_trgb(generator.layout(), &e.styles, group, sigma_n, sigma_p, &mut rng)?;
        let a = generator.synthesize(&e.styles, &noise)?;
        let b = generator.synthesize(&s, &noise)?;
        let px = (a.len() / 3) as f64;
        Ok((0..3)
            .map(|c| {
                let d: f64 = b.plane(c).iter().zip(a.plane(c)).map(|(x, y)| x - y).sum();
                (d / px).powi(2)
            })
            .sum::<f64>()
            .sqrt())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_grouping() {
        let groups: Vec<TrgbGroup> = (0..9).map(|l| trgb_group_of(l, 9)).collect();
        assert_eq!(groups[..3], [TrgbGroup::Early; 3]);
        assert_eq!(groups[3..6], [TrgbGroup::Mid; 3]);
        assert_eq!(groups[6..], [TrgbGroup::Late; 3]);
        assert_eq!(trgb_group_of(3, 4), TrgbGroup::Late);
    }

    #[test]
    fn parse_groups() {
        assert_eq!("late".parse::<TrgbGroup>().unwrap(), TrgbGroup::Late);
        assert!("coarse".parse::<TrgbGroup>().is_err());
    }
}
