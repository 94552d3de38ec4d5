use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mpl_index::{build_panel_with_order, Panel, Record};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// One row of an input CSV: `entity,period,quantity,value`.
#[derive(Debug, Deserialize)]
struct Row {
    entity: String,
    period: String,
    quantity: f64,
    value: f64,
}

/// Records of a CSV file. Rows with zero quantity and zero value mark absent
/// cells and are skipped.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.with_context(|| format!("malformed row in {}", path.display()))?;
        if row.quantity == 0.0 && row.value == 0.0 {
            continue;
        }
        out.push(Record::new(row.entity, row.period, row.quantity, row.value));
    }
    Ok(out)
}

pub fn read_panel(path: &Path, period_order: Option<&[String]>) -> Result<Panel> {
    let records = read_records(path)?;
    Ok(build_panel_with_order(&records, period_order)?)
}

/// `x` rounded to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64().filter(|_| n.is_f64()) {
                if let Some(r) = serde_json::Number::from_f64(sig12(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    round_numbers(&mut v);
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

/// Number formatted to 12 significant digits for CSV and tables.
pub fn fmt12(x: f64) -> String {
    format!("{}", sig12(x))
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub flags: Value,
    pub seed: Option<u64>,
    pub version: String,
    /// SHA-256 over the concatenated input contents, in order.
    pub digest: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: &[PathBuf], flags: Value, seed: Option<u64>) -> Result<Self> {
        let mut all = Sha256::new();
        let mut digests = Vec::new();
        for p in inputs {
            let bytes = fs::read(p).with_context(|| format!("cannot read {}", p.display()))?;
            all.update(&bytes);
            digests.push(InputDigest {
                path: p.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        Ok(RunManifest {
            command: command.into(),
            inputs: digests,
            flags,
            seed,
            version: mpl_index::VERSION.into(),
            digest: hex::encode(all.finalize()),
            outputs: Vec::new(),
        })
    }

    pub fn write(mut self, dir: &Path, outputs: &[&str]) -> Result<()> {
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        write_json(&dir.join("manifest.json"), &self)
    }
}
