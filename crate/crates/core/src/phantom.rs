//! Synthetic patient volumes with known lesion positions.
//!
//! Each phantom is a noisy homogeneous background with two populations of
//! raised-cosine ellipsoids rendered into it: near-spherical lesions, which
//! are the ground-truth targets, and elongated lower-contrast distractors
//! that a threshold detector cannot tell apart from small lesions.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::volume::{Geometry, Vec3, Volume};

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Inclusive `[min, max]` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T> Range<T> {
    pub const fn new(min: T, max: T) -> Self {
        Range { min, max }
    }
}

impl Range<f64> {
    fn check(&self, name: &str) -> Result<()> {
        if !(self.min >= 0.0) || !(self.min <= self.max) || !self.max.is_finite() {
            return Err(Error::arg(format!("{name}: need 0 <= min <= max")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

impl Range<usize> {
    fn check(&self, name: &str) -> Result<()> {
        if self.min > self.max {
            return Err(Error::arg(format!("{name}: need min <= max")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: Vec3,
    pub background_hu: f64,
    pub noise_sigma_hu: f64,
    pub lesion_count: Range<usize>,
    pub lesion_radius_mm: Range<f64>,
    pub lesion_contrast_hu: Range<f64>,
    /// Long-to-short axis ratio of lesion ellipsoids.
    pub lesion_elongation: Range<f64>,
    pub distractor_count: Range<usize>,
    pub distractor_radius_mm: Range<f64>,
    pub distractor_contrast_hu: Range<f64>,
    pub distractor_elongation: Range<f64>,
    /// Minimum gap (mm) kept between a distractor and any lesion surface.
    pub distractor_clearance_mm: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 64],
            spacing_mm: [1.0; 3],
            background_hu: 100.0,
            noise_sigma_hu: 20.0,
            lesion_count: Range::new(0, 6),
            lesion_radius_mm: Range::new(2.5, 8.0),
            lesion_contrast_hu: Range::new(200.0, 600.0),
            lesion_elongation: Range::new(1.0, 1.3),
            distractor_count: Range::new(20, 40),
            distractor_radius_mm: Range::new(2.0, 4.0),
            distractor_contrast_hu: Range::new(120.0, 320.0),
            distractor_elongation: Range::new(2.5, 5.0),
            distractor_clearance_mm: 6.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.dims, self.spacing_mm, [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        let geom = self.geometry()?;
        if !(self.noise_sigma_hu >= 0.0) || !self.background_hu.is_finite() {
            return Err(Error::arg("background: need finite mean and sigma >= 0"));
        }
        self.lesion_count.check("lesion_count")?;
        self.lesion_radius_mm.check("lesion_radius_mm")?;
        self.lesion_contrast_hu.check("lesion_contrast_hu")?;
        self.lesion_elongation.check("lesion_elongation")?;
        self.distractor_count.check("distractor_count")?;
        self.distractor_radius_mm.check("distractor_radius_mm")?;
        self.distractor_contrast_hu.check("distractor_contrast_hu")?;
        self.distractor_elongation.check("distractor_elongation")?;
        if self.lesion_elongation.min < 1.0 || self.distractor_elongation.min < 1.0 {
            return Err(Error::arg("elongation ratios must be >= 1"));
        }
        if self.lesion_count.max > 0 && !(self.lesion_radius_mm.min > 0.0) {
            return Err(Error::arg("lesion_radius_mm: radii must be > 0"));
        }
        let largest = bounding_radius(self.lesion_radius_mm.max, self.lesion_elongation.max);
        let extent = geom.extent();
        if self.lesion_count.max > 0 && extent.iter().any(|&e| 2.0 * largest >= e) {
            return Err(Error::arg("lesion_radius_mm: largest lesion does not fit in the volume"));
        }
        Ok(())
    }
}

/// Ground-truth lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub center_mm: Vec3,
    /// Sphere-equivalent radius.
    pub radius_mm: f64,
    pub contrast_hu: f64,
    pub patient_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub patient_id: u32,
    pub volume: Volume,
    pub targets: Vec<Target>,
}

/// Ellipsoid with one long axis along `axis` and a circular cross-section.
/// Semi-axes are `r·e^(2/3)` and `r·e^(-1/3)`, so the volume equals that of
/// a sphere of radius `r`.
#[derive(Debug, Clone, Copy)]
struct Blob {
    center: Vec3,
    axis: Vec3,
    long: f64,
    short: f64,
    contrast: f64,
}

fn bounding_radius(radius: f64, elongation: f64) -> f64 {
    radius * libm::cbrt(elongation * elongation)
}

impl Blob {
    fn new(center: Vec3, axis: Vec3, radius: f64, elongation: f64, contrast: f64) -> Self {
        let cbrt = libm::cbrt(elongation);
        Blob { center, axis, long: radius * cbrt * cbrt, short: radius / cbrt, contrast }
    }

    fn bound(&self) -> f64 {
        self.long.max(self.short)
    }

    /// Raised-cosine profile: `contrast` at the centre, 0 on the surface.
    fn value_at(&self, p: Vec3) -> f64 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let along = d[0] * self.axis[0] + d[1] * self.axis[1] + d[2] * self.axis[2];
        let perp2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] - along * along).max(0.0);
        let rho2 = (along / self.long) * (along / self.long) + perp2 / (self.short * self.short);
        if rho2 >= 1.0 {
            return 0.0;
        }
        let rho = libm::sqrt(rho2);
        self.contrast * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * rho))
    }

    fn render(&self, geom: &Geometry, voxels: &mut [f64]) {
        let lo = geom.to_index([
            self.center[0] - self.bound(),
            self.center[1] - self.bound(),
            self.center[2] - self.bound(),
        ]);
        let hi = geom.to_index([
            self.center[0] + self.bound(),
            self.center[1] + self.bound(),
            self.center[2] + self.bound(),
        ]);
        let clamp = |x: f64, n: usize| (x.max(0.0) as usize).min(n - 1);
        let (i0, j0, k0) = (
            clamp(libm::floor(lo[0]), geom.dims[0]),
            clamp(libm::floor(lo[1]), geom.dims[1]),
            clamp(libm::floor(lo[2]), geom.dims[2]),
        );
        let (i1, j1, k1) = (
            clamp(libm::ceil(hi[0]), geom.dims[0]),
            clamp(libm::ceil(hi[1]), geom.dims[1]),
            clamp(libm::ceil(hi[2]), geom.dims[2]),
        );
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let v = self.value_at(geom.to_world([i as f64, j as f64, k as f64]));
                    if v > 0.0 {
                        voxels[geom.offset(i, j, k)] += v;
                    }
                }
            }
        }
    }
}

fn random_unit(rng: &mut Rng) -> Vec3 {
    loop {
        let v: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = libm::sqrt(n2);
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Uniform centre such that a sphere of `margin` mm around it stays inside
/// the grid, or `None` if the grid is too small.
fn random_center(geom: &Geometry, margin: f64, rng: &mut Rng) -> Option<Vec3> {
    let ext = geom.extent();
    let mut c = [0.0; 3];
    for a in 0..3 {
        let (lo, hi) = (geom.origin[a] + margin, geom.origin[a] + ext[a] - margin);
        if lo > hi {
            return None;
        }
        c[a] = if lo == hi { lo } else { rng.random_range(lo..hi) };
    }
    Some(c)
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

fn generate(spec: &PhantomSpec, patient_id: u32, lesion_free: bool) -> Result<Phantom> {
    spec.validate()?;
    let geom = spec.geometry()?;
    let mut rng = rng::rng_for(spec.seed, rng::stream::PHANTOM, patient_id as u64);

    let n_lesions = if lesion_free { 0 } else { spec.lesion_count.draw(&mut rng) };
    let mut lesions: Vec<Blob> = Vec::with_capacity(n_lesions);
    let mut targets = Vec::with_capacity(n_lesions);
    for n in 0..n_lesions {
        let radius = spec.lesion_radius_mm.draw(&mut rng);
        let elongation = spec.lesion_elongation.draw(&mut rng);
        let contrast = spec.lesion_contrast_hu.draw(&mut rng);
        let axis = random_unit(&mut rng);
        let bound = bounding_radius(radius, elongation);
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let Some(c) = random_center(&geom, bound, &mut rng) else { break };
            if lesions.iter().all(|l| dist(l.center, c) > l.bound() + bound + 1.0) {
                placed = Some(c);
                break;
            }
        }
        let center = placed.ok_or_else(|| {
            Error::Generation(format!(
                "patient {patient_id}: could not place lesion {n} (radius {radius:.2} mm) after {MAX_PLACEMENT_ATTEMPTS} attempts"
            ))
        })?;
        lesions.push(Blob::new(center, axis, radius, elongation, contrast));
        targets.push(Target { center_mm: center, radius_mm: radius, contrast_hu: contrast, patient_id });
    }

    let n_distractors = spec.distractor_count.draw(&mut rng);
    let mut distractors = Vec::with_capacity(n_distractors);
    let mut skipped = 0usize;
    for _ in 0..n_distractors {
        let radius = spec.distractor_radius_mm.draw(&mut rng);
        let elongation = spec.distractor_elongation.draw(&mut rng);
        let contrast = spec.distractor_contrast_hu.draw(&mut rng);
        let axis = random_unit(&mut rng);
        let bound = bounding_radius(radius, elongation);
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let Some(c) = random_center(&geom, 0.5 * bound, &mut rng) else { break };
            if lesions.iter().all(|l| dist(l.center, c) > l.bound() + bound + spec.distractor_clearance_mm) {
                placed = Some(c);
                break;
            }
        }
        match placed {
            Some(c) => distractors.push(Blob::new(c, axis, radius, elongation, contrast)),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::debug!("patient {patient_id}: skipped {skipped} distractors that did not fit");
    }

    let mut voxels = alloc::vec![spec.background_hu; geom.len()];
    if spec.noise_sigma_hu > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma_hu).map_err(|e| Error::arg(format!("noise: {e}")))?;
        for v in voxels.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    for blob in lesions.iter().chain(&distractors) {
        blob.render(&geom, &mut voxels);
    }
    Ok(Phantom { patient_id, volume: Volume::new(geom, voxels)?, targets })
}

/// Generate one phantom; the output depends only on `(spec, patient_id)`.
pub fn generate_phantom(spec: &PhantomSpec, patient_id: u32) -> Result<Phantom> {
    generate(spec, patient_id, false)
}

/// Generate `n_patients` phantoms with ids `0..n`. A seeded subset of
/// `round(control_fraction · n)` patients are lesion-free controls.
pub fn generate_cohort(spec: &PhantomSpec, n_patients: usize, control_fraction: f64) -> Result<Vec<Phantom>> {
    if n_patients == 0 {
        return Err(Error::arg("cohort needs at least one patient"));
    }
    if !(0.0..=1.0).contains(&control_fraction) {
        return Err(Error::arg("control_fraction must be in [0, 1]"));
    }
    let controls = control_mask(spec.seed, n_patients, control_fraction);
    (0..n_patients).map(|p| generate(spec, p as u32, controls[p])).collect()
}

/// Which patients of a cohort are lesion-free controls.
pub fn control_mask(seed: u64, n_patients: usize, control_fraction: f64) -> Vec<bool> {
    let n_controls = libm::round(control_fraction * n_patients as f64) as usize;
    let mut order: Vec<usize> = (0..n_patients).collect();
    order.shuffle(&mut rng::rng_for(seed, rng::stream::COHORT, 0));
    let mut mask = alloc::vec![false; n_patients];
    for &p in order.iter().take(n_controls) {
        mask[p] = true;
    }
    mask
}
