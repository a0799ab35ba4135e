//! FROC CSVs and the run summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cade_core::eval::{FrocCurve, FrocPoint};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `threshold,fp_per_patient,sensitivity`, one row per operating point.
/// The leading infinite threshold is written as `inf`.
pub fn write_csv(path: &Path, curve: &FrocCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    for p in &curve.points {
        w.serialize(p).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<FrocPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::format(path, e))).collect()
}

/// One curve per view count: `n,threshold,fp_per_patient,sensitivity`.
pub fn write_sweep_csv(path: &Path, curves: &[(usize, FrocCurve)]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        n: usize,
        threshold: f64,
        fp_per_patient: f64,
        sensitivity: f64,
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    for (n, curve) in curves {
        for p in &curve.points {
            w.serialize(Row {
                n: *n,
                threshold: p.threshold,
                fp_per_patient: p.fp_per_patient,
                sensitivity: p.sensitivity,
            })
            .map_err(|e| Error::format(path, e))?;
        }
    }
    w.flush().map_err(Error::io(path))
}

/// Tier-1 reference figures kept next to the headline numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSummary {
    pub auc: f64,
    pub sens_at_fp: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Candidate-level AUC of the aggregated probabilities.
    pub auc: f64,
    /// Sensitivity at each configured FP-per-patient rate.
    pub sens_at_fp: BTreeMap<String, f64>,
    /// Fisher's exact test of tier-2 against tier-1 hits at the configured
    /// operating point.
    pub fisher_p_at_3fp: f64,
    pub tier1: TierSummary,
    pub n_patients: usize,
    pub n_targets: usize,
    pub n_candidates: usize,
}

/// Key of an FP rate in `sens_at_fp`: `"3"` for 3.0, `"0.5"` for 0.5.
pub fn fp_key(fp: f64) -> String {
    format!("{fp}")
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(summary).expect("summary serializes")).map_err(Error::io(path))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}
