//! RV1 volumes: a JSON header plus raw little-endian `i16` voxels,
//! x fastest. `name.json` pairs with `name.raw`.

use std::fs;
use std::path::{Path, PathBuf};

use cade_core::volume::{Geometry, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rv1Header {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
}

pub fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Write `vol` rounded to the nearest integer HU. Returns the two paths.
pub fn write(header_path: &Path, vol: &Volume) -> Result<[PathBuf; 2]> {
    let g = vol.geometry();
    let header = Rv1Header { dims: g.dims, spacing_mm: g.spacing, origin_mm: g.origin, dtype: "i16".into() };
    let mut bytes = Vec::with_capacity(2 * vol.voxels().len());
    for &v in vol.voxels() {
        let r = v.round();
        if !(r >= i16::MIN as f64 && r <= i16::MAX as f64) {
            return Err(Error::format(header_path, format!("voxel value {v} does not fit in i16")));
        }
        bytes.extend_from_slice(&(r as i16).to_le_bytes());
    }
    let raw = raw_path(header_path);
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(header_path, json).map_err(Error::io(header_path))?;
    fs::write(&raw, bytes).map_err(Error::io(&raw))?;
    Ok([header_path.to_path_buf(), raw])
}

pub fn read(header_path: &Path) -> Result<Volume> {
    let text = fs::read_to_string(header_path).map_err(Error::io(header_path))?;
    let header: Rv1Header = serde_json::from_str(&text).map_err(|e| Error::format(header_path, e))?;
    if header.dtype != "i16" {
        return Err(Error::format(header_path, format!("unsupported dtype {:?}", header.dtype)));
    }
    let geometry =
        Geometry::new(header.dims, header.spacing_mm, header.origin_mm).map_err(|e| Error::format(header_path, e))?;
    let raw = raw_path(header_path);
    let bytes = fs::read(&raw).map_err(Error::io(&raw))?;
    let expected = 2 * geometry.len();
    if bytes.len() != expected {
        return Err(Error::format(&raw, format!("{} bytes, expected {expected}", bytes.len())));
    }
    let voxels = bytes.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]]) as f64).collect();
    Ok(Volume::new(geometry, voxels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_length_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        let g = Geometry::new([3, 2, 2], [0.5, 1.0, 2.5], [1.0, -4.0, 3.0]).unwrap();
        let vol = Volume::new(g, (0..12).map(|i| i as f64 * 100.0 - 600.0).collect()).unwrap();
        write(&path, &vol).unwrap();
        assert_eq!(read(&path).unwrap(), vol);

        fs::write(raw_path(&path), [0u8; 23]).unwrap();
        assert!(matches!(read(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let vol = Volume::new(g, vec![40000.0]).unwrap();
        assert!(write(&dir.path().join("v.json"), &vol).is_err());
    }
}
