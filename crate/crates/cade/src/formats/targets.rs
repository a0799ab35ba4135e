//! Per-patient target lists: `[{center_mm, radius_mm, contrast_hu}]`.

use std::fs;
use std::path::Path;

use cade_core::phantom::Target;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    center_mm: [f64; 3],
    radius_mm: f64,
    contrast_hu: f64,
}

pub fn write(path: &Path, targets: &[Target]) -> Result<()> {
    let entries: Vec<Entry> = targets
        .iter()
        .map(|t| Entry { center_mm: t.center_mm, radius_mm: t.radius_mm, contrast_hu: t.contrast_hu })
        .collect();
    let json = serde_json::to_string_pretty(&entries).expect("targets serialize");
    fs::write(path, json).map_err(Error::io(path))
}

pub fn read(path: &Path, patient_id: u32) -> Result<Vec<Target>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let entries: Vec<Entry> = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    Ok(entries
        .into_iter()
        .map(|e| Target { center_mm: e.center_mm, radius_mm: e.radius_mm, contrast_hu: e.contrast_hu, patient_id })
        .collect())
}
