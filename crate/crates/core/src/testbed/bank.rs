//! Seeded image banks: latents, styles, logits and population statistics.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use crate::error::{Error, Result};
use crate::generator::{Generator, LatentWPlus, LatentZ, StyleVector};
use crate::numerics::{derive_seed, stats, Rng, Tensor};

/// How the bank's latents were drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentMode {
    /// One `w` per image, broadcast to every slot.
    W,
    /// An independent `w` per W+ slot.
    WPlus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    /// Z provenance; `slots × d_z` values in W+ mode.
    pub z: Vec<f64>,
    /// W provenance; `slots × d_w` values in W+ mode.
    pub w: Vec<f64>,
    pub styles: StyleVector,
    pub noise_seed: u64,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankStats {
    pub style_mean: Vec<f64>,
    pub style_std: Vec<f64>,
    pub logit_mean: Vec<f64>,
    pub logit_std: Vec<f64>,
    /// Channels with zero population spread.
    pub constant_channels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub generator_hash: String,
    pub layout_hash: String,
    pub seed: u64,
    pub n: usize,
    pub mode: LatentMode,
    pub attributes: Vec<String>,
    pub classifier: Classifier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBank {
    pub meta: BankMeta,
    pub entries: Vec<BankEntry>,
    pub stats: BankStats,
}

/// The bank file minus the bulk arrays.
#[derive(Serialize, Deserialize)]
struct BankFile {
    meta: BankMeta,
    stats: BankStats,
    noise_seeds: Vec<u64>,
    z_dim: usize,
    w_dim: usize,
    style_dim: usize,
}

pub fn compute_stats(entries: &[BankEntry]) -> BankStats {
    let dim = entries.first().map_or(0, |e| e.styles.len());
    let na = entries.first().map_or(0, |e| e.logits.len());
    let column = |f: &dyn Fn(&BankEntry) -> f64| -> Vec<f64> { entries.iter().map(f).collect() };
    let mut style_mean = Vec::with_capacity(dim);
    let mut style_std = Vec::with_capacity(dim);
    for u in 0..dim {
        let col = column(&|e| e.styles.0[u]);
        style_mean.push(stats::mean(&col));
        style_std.push(stats::std_pop(&col));
    }
    let mut logit_mean = Vec::with_capacity(na);
    let mut logit_std = Vec::with_capacity(na);
    for a in 0..na {
        let col = column(&|e| e.logits[a]);
        logit_mean.push(stats::mean(&col));
        logit_std.push(stats::std_pop(&col));
    }
    let constant_channels = (0..dim).filter(|&u| !(style_std[u] > 0.0)).collect();
    BankStats {
        style_mean,
        style_std,
        logit_mean,
        logit_std,
        constant_channels,
    }
}

/// Draws one bank entry; entry `i` depends only on `(seed, i)`.
pub fn sample_entry(
    generator: &Generator,
    classifier: &Classifier,
    seed: u64,
    index: usize,
    mode: LatentMode,
) -> Result<BankEntry> {
    let mut rng = Rng::new(seed, index as u64);
    let slots = generator.layout().wplus_slots();
    let rows = match mode {
        LatentMode::W => 1,
        LatentMode::WPlus => slots,
    };
    let mut z = Vec::new();
    let mut w = Vec::new();
    let mut wplus = Vec::with_capacity(rows);
    for _ in 0..rows {
        let zi = generator.sample_z(&mut rng);
        let wi = generator.map_z_to_w(&zi)?;
        z.extend_from_slice(&zi.0);
        w.extend_from_slice(&wi.0);
        wplus.push(wi.0);
    }
    let wplus = match mode {
        LatentMode::W => LatentWPlus(vec![wplus[0].clone(); slots]),
        LatentMode::WPlus => LatentWPlus(wplus),
    };
    let styles = generator.w_to_styles(&wplus)?;
    let noise_seed = derive_seed(seed, index as u64);
    let image = generator.synthesize(&styles, &generator.noise(noise_seed))?;
    let logits = classifier.logits(&image)?;
    Ok(BankEntry {
        z,
        w,
        styles,
        noise_seed,
        logits,
    })
}

pub fn build_bank(
    generator: &Generator,
    classifier: &Classifier,
    n: usize,
    seed: u64,
    mode: LatentMode,
) -> Result<ImageBank> {
    if n < 2 {
        return Err(Error::Argument(format!("bank needs at least 2 entries, got {n}")));
    }
    let entries = crate::exec::try_map_range(n, |i| sample_entry(generator, classifier, seed, i, mode))?;
    let stats = compute_stats(&entries);
    Ok(ImageBank {
        meta: BankMeta {
            generator_hash: generator.config().hash(),
            layout_hash: generator.layout().hash(),
            seed,
            n,
            mode,
            attributes: classifier.names(),
            classifier: classifier.clone(),
        },
        entries,
        stats,
    })
}

impl BankEntry {
    pub fn noise(&self, generator: &Generator) -> crate::generator::NoiseInputs {
        generator.noise(self.noise_seed)
    }

    /// Regenerates the entry's image.
    pub fn image(&self, generator: &Generator) -> Result<Tensor> {
        generator.synthesize(&self.styles, &self.noise(generator))
    }

    pub fn wplus(&self, w_dim: usize, slots: usize, mode: LatentMode) -> LatentWPlus {
        match mode {
            LatentMode::W => LatentWPlus(vec![self.w.clone(); slots]),
            LatentMode::WPlus => LatentWPlus(self.w.chunks(w_dim).map(|c| c.to_vec()).collect()),
        }
    }

    pub fn z_latent(&self) -> LatentZ {
        LatentZ(self.z.clone())
    }
}

impl ImageBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn logit_column(&self, attribute: usize) -> Vec<f64> {
        self.entries.iter().map(|e| e.logits[attribute]).collect()
    }

    /// Checks the bank was made by `generator`.
    pub fn check_generator(&self, generator: &Generator) -> Result<()> {
        let h = generator.config().hash();
        if h != self.meta.generator_hash {
            return Err(Error::Provenance(format!(
                "bank was built by generator {}, not {}",
                &self.meta.generator_hash[..12],
                &h[..12]
            )));
        }
        Ok(())
    }

    /// Recomputes the population statistics and requires an exact match.
    pub fn verify_stats(&self) -> Result<()> {
        if compute_stats(&self.entries) != self.stats {
            return Err(Error::Data("stored bank statistics do not match the entries".into()));
        }
        Ok(())
    }

    /// SHA-256 over the bank's bulk files, as written by [`ImageBank::save`].
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.meta.generator_hash.as_bytes());
        h.update(f64_bytes(self.entries.iter().flat_map(|e| e.styles.0.iter().copied())));
        h.update(self.logits_csv().as_bytes());
        h.update(f64_bytes(self.entries.iter().flat_map(|e| e.z.iter().copied())));
        h.update(f64_bytes(self.entries.iter().flat_map(|e| e.w.iter().copied())));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn logits_csv(&self) -> String {
        let mut out = self.meta.attributes.join(",");
        out.push('\n');
        for e in &self.entries {
            let row: Vec<String> = e.logits.iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let first = self.entries.first().expect("non-empty bank");
        let file = BankFile {
            meta: self.meta.clone(),
            stats: self.stats.clone(),
            noise_seeds: self.entries.iter().map(|e| e.noise_seed).collect(),
            z_dim: first.z.len(),
            w_dim: first.w.len(),
            style_dim: first.styles.len(),
        };
        fs::write(dir.join("bank.json"), serde_json::to_string_pretty(&file)?)?;
        fs::write(dir.join("styles.bin"), f64_bytes(self.entries.iter().flat_map(|e| e.styles.0.iter().copied())))?;
        fs::write(dir.join("z.bin"), f64_bytes(self.entries.iter().flat_map(|e| e.z.iter().copied())))?;
        fs::write(dir.join("w.bin"), f64_bytes(self.entries.iter().flat_map(|e| e.w.iter().copied())))?;
        let mut f = fs::File::create(dir.join("logits.csv"))?;
        f.write_all(self.logits_csv().as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("bank.json");
        if !path.exists() {
            return Err(Error::Missing(format!("no bank at {}", dir.display())));
        }
        let file: BankFile = serde_json::from_str(&fs::read_to_string(&path)?)?;
        let n = file.meta.n;
        let styles = read_f64(&dir.join("styles.bin"), n * file.style_dim)?;
        let z = read_f64(&dir.join("z.bin"), n * file.z_dim)?;
        let w = read_f64(&dir.join("w.bin"), n * file.w_dim)?;
        let text = fs::read_to_string(dir.join("logits.csv"))?;
        let mut lines = text.lines();
        let header: Vec<String> = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
        if header != file.meta.attributes {
            return Err(Error::Data("logits.csv header does not match bank.json".into()));
        }
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data(format!("logits.csv has fewer than {n} rows")))?;
            let logits = line
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|e| Error::Data(format!("logits.csv row {i}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            entries.push(BankEntry {
                z: z[i * file.z_dim..(i + 1) * file.z_dim].to_vec(),
                w: w[i * file.w_dim..(i + 1) * file.w_dim].to_vec(),
                styles: StyleVector(styles[i * file.style_dim..(i + 1) * file.style_dim].to_vec()),
                noise_seed: file.noise_seeds[i],
                logits,
            });
        }
        let bank = Self {
            meta: file.meta,
            entries,
            stats: file.stats,
        };
        bank.verify_stats()?;
        Ok(bank)
    }
}

fn f64_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f64(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    if bytes.len() != expected * 8 {
        return Err(Error::dim(path.display().to_string(), expected * 8, bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Attributes with more than `threshold` of the bank on each side of zero.
pub fn filter_active_attributes(bank: &ImageBank, threshold: f64) -> Vec<usize> {
    let n = bank.len() as f64;
    (0..bank.meta.attributes.len())
        .filter(|&a| {
            let neg = bank.entries.iter().filter(|e| e.logits[a] < 0.0).count() as f64;
            let pos = bank.entries.iter().filter(|e| e.logits[a] > 0.0).count() as f64;
            neg / n > threshold && pos / n > threshold
        })
        .collect()
}

/// Labelled bank indices; `present` means a negative-tail example.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub indices: Vec<usize>,
    pub present: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extremes {
    pub train: Split,
    pub test: Split,
}

/// The `q` most negative and `q` most positive logits, each tail split
/// between train and test by alternating rank (most extreme first).
pub fn select_extremes(logits: &[f64], q: f64) -> Result<Extremes> {
    let k = (logits.len() as f64 * q + 1e-9).floor() as usize;
    if k < 2 {
        return Err(Error::Argument(format!(
            "{} samples at q = {q} leave fewer than 2 per tail",
            logits.len()
        )));
    }
    let order = stats::argsort(logits);
    let negative = order[..k].iter().copied();
    let positive = order[order.len() - k..].iter().rev().copied();
    let mut out = Extremes {
        train: Split::default(),
        test: Split::default(),
    };
    for (present, tail) in [(true, negative.collect::<Vec<_>>()), (false, positive.collect())] {
        for (rank, idx) in tail.into_iter().enumerate() {
            let split = if rank % 2 == 0 { &mut out.train } else { &mut out.test };
            split.indices.push(idx);
            split.present.push(present);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_counting() {
        let logits: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let e = select_extremes(&logits, 0.02).unwrap();
        assert_eq!(e.train.indices, vec![0, 99]);
        assert_eq!(e.test.indices, vec![1, 98]);
        assert_eq!(e.train.present, vec![true, false]);
        assert!(select_extremes(&logits[..50], 0.02).is_err());
    }
}
