//! Observation dumps for debugging: a JSON header line followed by every
//! patch's pixels as little-endian `f32`, in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use cade_core::candidates::Label;
use cade_core::sampler::{Observation, ViewParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    patient_id: u32,
    candidate_id: u32,
    params: ViewParams,
    label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    shape: [usize; 4],
    observations: Vec<Entry>,
}

pub fn write(path: &Path, obs: &[Observation]) -> Result<()> {
    let shape = obs.first().map_or([0; 4], |o| o.shape);
    if obs.iter().any(|o| o.shape != shape) {
        return Err(Error::format(path, "observations of different shapes in one dump"));
    }
    let header = Header {
        shape,
        observations: obs
            .iter()
            .map(|o| Entry { patient_id: o.patient_id, candidate_id: o.candidate_id, params: o.params, label: o.label })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    for o in obs {
        for &p in &o.pixels {
            bytes.write_all(&(p as f32).to_le_bytes()).expect("writing to a Vec");
        }
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn read(path: &Path) -> Result<Vec<Observation>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::format(path, "missing header line"))?;
    let header: Header = serde_json::from_slice(&bytes[..split]).map_err(|e| Error::format(path, e))?;
    let per: usize = header.shape.iter().product();
    let body = &bytes[split + 1..];
    if body.len() != 4 * per * header.observations.len() {
        return Err(Error::format(path, "pixel block length does not match the header"));
    }
    Ok(header
        .observations
        .into_iter()
        .zip(body.chunks_exact(4 * per.max(1)))
        .map(|(e, chunk)| Observation {
            patient_id: e.patient_id,
            candidate_id: e.candidate_id,
            params: e.params,
            shape: header.shape,
            pixels: chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect(),
            label: e.label,
        })
        .collect())
}
