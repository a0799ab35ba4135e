//! Volumetric images, intensity windowing and world-space sampling.
//!
//! Voxels are stored x-fastest. The world position of voxel `(i, j, k)` is
//! `origin + (i, j, k) ⊙ spacing`, in millimetres.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point or vector in world space (mm).
pub type Vec3 = [f64; 3];

/// Grid layout shared by raw and windowed volumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: Vec3,
    pub origin: Vec3,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::arg("volume dims must all be >= 1"));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::arg("voxel spacing must be positive and finite"));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::arg("volume origin must be finite"));
        }
        Ok(Geometry { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// World position of a (possibly fractional) voxel index.
    #[inline]
    pub fn to_world(&self, index: Vec3) -> Vec3 {
        [
            self.origin[0] + index[0] * self.spacing[0],
            self.origin[1] + index[1] * self.spacing[1],
            self.origin[2] + index[2] * self.spacing[2],
        ]
    }

    /// Continuous voxel index of a world position.
    #[inline]
    pub fn to_index(&self, world: Vec3) -> Vec3 {
        [
            (world[0] - self.origin[0]) / self.spacing[0],
            (world[1] - self.origin[1]) / self.spacing[1],
            (world[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Physical extent between the first and last voxel centres.
    pub fn extent(&self) -> Vec3 {
        [
            (self.dims[0] - 1) as f64 * self.spacing[0],
            (self.dims[1] - 1) as f64 * self.spacing[1],
            (self.dims[2] - 1) as f64 * self.spacing[2],
        ]
    }

    /// True when `world` lies within the box spanned by the voxel centres.
    pub fn contains(&self, world: Vec3) -> bool {
        let idx = self.to_index(world);
        (0..3).all(|a| idx[a] >= 0.0 && idx[a] <= (self.dims[a] - 1) as f64)
    }
}

/// CT volume in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    voxels: Vec<f64>,
}

impl Volume {
    pub fn new(geometry: Geometry, voxels: Vec<f64>) -> Result<Self> {
        if voxels.len() != geometry.len() {
            return Err(Error::arg(alloc::format!(
                "voxel count {} does not match dims {:?}",
                voxels.len(),
                geometry.dims
            )));
        }
        Ok(Volume { geometry, voxels })
    }

    pub fn filled(geometry: Geometry, value: f64) -> Self {
        Volume { voxels: alloc::vec![value; geometry.len()], geometry }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f64] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f64> {
        self.voxels
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.voxels[self.geometry.offset(i, j, k)]
    }
}

/// Volume whose intensities have been windowed into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedVolume {
    geometry: Geometry,
    voxels: Vec<f64>,
}

impl WindowedVolume {
    /// Wrap already-normalised intensities. Values are clamped into `[0, 1]`.
    pub fn from_normalized(geometry: Geometry, mut voxels: Vec<f64>) -> Result<Self> {
        if voxels.len() != geometry.len() {
            return Err(Error::arg("voxel count does not match dims"));
        }
        for v in &mut voxels {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(WindowedVolume { geometry, voxels })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.voxels[self.geometry.offset(i, j, k)]
    }

    /// Trilinear interpolation at a world position.
    ///
    /// Corners outside the grid contribute the fill value 0.0, so the
    /// result fades continuously to zero across the volume border and is
    /// exactly zero once all eight corners are outside.
    pub fn sample(&self, world: Vec3) -> f64 {
        trilinear(&self.geometry, &self.voxels, self.geometry.to_index(world), Boundary::Zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Boundary {
    Zero,
    Clamp,
}

fn trilinear(geom: &Geometry, voxels: &[f64], idx: Vec3, boundary: Boundary) -> f64 {
    let [nx, ny, nz] = geom.dims;
    let mut base = [0i64; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let mut x = idx[a];
        if !x.is_finite() {
            return 0.0;
        }
        if boundary == Boundary::Clamp {
            x = x.clamp(0.0, (geom.dims[a] - 1) as f64);
        }
        let f = libm::floor(x);
        base[a] = f as i64;
        frac[a] = x - f;
    }
    let fetch = |i: i64, j: i64, k: i64| -> f64 {
        let (i, j, k) = match boundary {
            Boundary::Zero => {
                if i < 0 || j < 0 || k < 0 || i >= nx as i64 || j >= ny as i64 || k >= nz as i64 {
                    return 0.0;
                }
                (i as usize, j as usize, k as usize)
            }
            Boundary::Clamp => (
                i.clamp(0, nx as i64 - 1) as usize,
                j.clamp(0, ny as i64 - 1) as usize,
                k.clamp(0, nz as i64 - 1) as usize,
            ),
        };
        voxels[geom.offset(i, j, k)]
    };
    let [i, j, k] = base;
    let [fx, fy, fz] = frac;
    let mut acc = 0.0;
    for (dk, wz) in [(0, 1.0 - fz), (1, fz)] {
        if wz == 0.0 {
            continue;
        }
        for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                acc += wx * wy * wz * fetch(i + di, j + dj, k + dk);
            }
        }
    }
    acc
}

/// Resample onto an isotropic grid of `target_spacing` mm.
///
/// The origin is kept and each axis gets `round(extent / t) + 1` voxels, so
/// the physical extent is preserved to within one output voxel. Output
/// positions past the last input centre (at most half a voxel) take the
/// edge value.
pub fn resample_isotropic(vol: &Volume, target_spacing: f64) -> Result<Volume> {
    if !(target_spacing > 0.0) || !target_spacing.is_finite() {
        return Err(Error::arg("target spacing must be positive"));
    }
    let src = vol.geometry();
    let mut dims = [0usize; 3];
    let mut ratio = [0.0; 3];
    for a in 0..3 {
        let extent = (src.dims[a] - 1) as f64 * src.spacing[a];
        dims[a] = libm::round(extent / target_spacing) as usize + 1;
        ratio[a] = target_spacing / src.spacing[a];
    }
    let geometry = Geometry::new(dims, [target_spacing; 3], src.origin)?;
    let mut voxels = Vec::with_capacity(geometry.len());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let idx = [i as f64 * ratio[0], j as f64 * ratio[1], k as f64 * ratio[2]];
                voxels.push(trilinear(src, vol.voxels(), idx, Boundary::Clamp));
            }
        }
    }
    Volume::new(geometry, voxels)
}

/// Map HU linearly onto `[0, 1]` over `[lo, hi]`, clamping outside.
pub fn window_hu(vol: &Volume, lo: f64, hi: f64) -> Result<WindowedVolume> {
    if !(lo < hi) {
        return Err(Error::arg("window requires lo < hi"));
    }
    let width = hi - lo;
    let voxels = vol.voxels().iter().map(|&v| ((v - lo) / width).clamp(0.0, 1.0)).collect();
    Ok(WindowedVolume { geometry: *vol.geometry(), voxels })
}

/// Named HU windows.
pub mod windows {
    pub const BONE: (f64, f64) = (-250.0, 1250.0);
    pub const SOFT_TISSUE: (f64, f64) = (-100.0, 200.0);
}
