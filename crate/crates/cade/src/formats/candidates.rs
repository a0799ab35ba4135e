//! Candidate CSV:
//! `patient_id,candidate_id,x_mm,y_mm,z_mm,cg_score,label,final_prob`.
//! `final_prob` is empty until the candidate has been scored.

use std::path::Path;

use cade_core::candidates::{Candidate, Label};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    patient_id: u32,
    candidate_id: u32,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
    cg_score: f64,
    label: String,
    final_prob: Option<f64>,
}

pub fn write(path: &Path, cands: &[Candidate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    for c in cands {
        w.serialize(Row {
            patient_id: c.patient_id,
            candidate_id: c.id,
            x_mm: c.center_mm[0],
            y_mm: c.center_mm[1],
            z_mm: c.center_mm[2],
            cg_score: c.cg_score,
            label: c.label.as_str().into(),
            final_prob: c.final_prob,
        })
        .map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(Error::io(path))
}

/// Read candidates back. Target matches are not stored, so positives come
/// back without `matched_target`; relabel against the targets to restore it.
pub fn read(path: &Path) -> Result<Vec<Candidate>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: Row = row.map_err(|e| Error::format(path, e))?;
        let label: Label = row.label.parse().map_err(|e| Error::format(path, e))?;
        let mut c = Candidate::new(row.patient_id, row.candidate_id, [row.x_mm, row.y_mm, row.z_mm], row.cg_score);
        c.label = label;
        c.final_prob = row.final_prob;
        out.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let mut a = Candidate::new(3, 0, [1.0 / 3.0, -2.5, 1e-7], 0.123456789012345);
        a.label = Label::Positive;
        a.final_prob = Some(0.1 + 0.2);
        let mut b = Candidate::new(3, 1, [0.0, 0.0, 64.0], 0.5);
        b.label = Label::Negative;
        write(&path, &[a.clone(), b.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("patient_id,candidate_id,x_mm,y_mm,z_mm,cg_score,label,final_prob\n"));
        assert_eq!(read(&path).unwrap(), vec![a, b]);
    }
}
