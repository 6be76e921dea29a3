//! CSV schemas of the diagnostics and mitigation tables. Columns are only
//! ever appended.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Failure sources of one method at one grid point, pooled over repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionCsv {
    pub method: String,
    pub point: usize,
    pub searches: usize,
    pub failed: usize,
    pub generation: usize,
    pub selection: usize,
    pub generation_share: Option<f64>,
    pub selection_share: Option<f64>,
    pub stage_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityCsv {
    pub method: String,
    pub point: usize,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStageCsv {
    pub repeat: usize,
    pub b: usize,
    pub k: usize,
    pub problems: usize,
    pub verifier_success: f64,
    pub oracle_success: f64,
}

/// `repeat` is the repeat index, or `mean` for the average row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MitigationCsv {
    pub repeat: String,
    pub policy: String,
    pub baseline: Option<f64>,
    pub accuracy: Option<f64>,
    pub gain: Option<f64>,
    pub stages: usize,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}:{}", path.display(), i + 2)))
        .collect()
}
