//! `manifest.json`: resolved parameters plus content hashes of inputs and
//! outputs. No timestamps, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use stylespace::pipeline::{sha256_hex, Report};
use stylespace::{Error, Result};

pub const FILE: &str = "manifest.json";

pub struct Manifest {
    pub command: &'static str,
    pub params: Value,
    pub generator_hash: String,
    pub bank_hash: Option<String>,
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &'static str, params: Value, generator_hash: String) -> Self {
        Self {
            command,
            params,
            generator_hash,
            bank_hash: None,
            inputs: BTreeMap::new(),
        }
    }

    pub fn bank(mut self, hash: String) -> Self {
        self.bank_hash = Some(hash);
        self
    }

    pub fn input(mut self, name: &str, hash: String) -> Self {
        self.inputs.insert(name.to_string(), hash);
        self
    }

    /// Writes `report` and then the manifest describing it into `dir`.
    pub fn write_with(self, dir: &Path, report: &Report) -> Result<()> {
        report.write(dir)?;
        let value = json!({
            "command": self.command,
            "params": self.params,
            "generator_hash": self.generator_hash,
            "bank_hash": self.bank_hash,
            "inputs": self.inputs,
            "outputs": report.hashes(),
        });
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        std::fs::write(dir.join(FILE), text)?;
        Ok(())
    }
}

/// Reads a previous step's manifest; absent means the step never ran.
pub fn read(dir: &Path) -> Result<Value> {
    let path = dir.join(FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::Missing(format!("no manifest at {} (run the prerequisite step first)", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Requires `manifest.bank_hash == bank_hash` and that the listed outputs
/// still hash to what was recorded.
pub fn check(dir: &Path, manifest: &Value, bank_hash: &str) -> Result<()> {
    let recorded = manifest["bank_hash"].as_str().unwrap_or_default();
    if recorded != bank_hash {
        return Err(Error::Provenance(format!(
            "{} was produced from a different bank ({} vs {})",
            dir.display(),
            short(recorded),
            short(bank_hash)
        )));
    }
    if let Some(outputs) = manifest["outputs"].as_object() {
        for (name, hash) in outputs {
            let bytes = std::fs::read(dir.join(name)).map_err(|_| Error::Missing(format!("{} is missing", dir.join(name).display())))?;
            if Some(sha256_hex(&bytes).as_str()) != hash.as_str() {
                return Err(Error::Provenance(format!("{} changed since its manifest was written", dir.join(name).display())));
            }
        }
    }
    Ok(())
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}
