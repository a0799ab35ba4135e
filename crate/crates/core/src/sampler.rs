//! Random views of a candidate and their pixel observations.
//!
//! A view is one `(scale, translation, rotation)` transform of the region
//! around a candidate. Every candidate gets `Ns·Nt·Nr` views: each scale is
//! paired with `Nt` random translations, and each translation with `Nr`
//! random rotations. Patches always have `patch_px` pixels per edge, so the
//! pixel size in mm grows with the scale.

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::candidates::{Candidate, Label, Labeled};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::volume::{Vec3, WindowedVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "2D")]
    TwoD,
    #[serde(rename = "2.5D")]
    TwoHalfD,
    #[serde(rename = "3D")]
    ThreeD,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::TwoD, Mode::TwoHalfD, Mode::ThreeD];

    pub fn channels(self) -> usize {
        match self {
            Mode::TwoD | Mode::ThreeD => 1,
            Mode::TwoHalfD => 3,
        }
    }

    /// `[channels, depth, height, width]` of an observation.
    pub fn shape(self, patch_px: usize) -> [usize; 4] {
        match self {
            Mode::TwoD => [1, 1, patch_px, patch_px],
            Mode::TwoHalfD => [3, 1, patch_px, patch_px],
            Mode::ThreeD => [1, patch_px, patch_px, patch_px],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TwoD => "2D",
            Mode::TwoHalfD => "2.5D",
            Mode::ThreeD => "3D",
        }
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2D" | "2d" => Ok(Mode::TwoD),
            "2.5D" | "2.5d" => Ok(Mode::TwoHalfD),
            "3D" | "3d" => Ok(Mode::ThreeD),
            other => Err(Error::arg(alloc::format!("unknown sampling mode {other:?}"))),
        }
    }
}

/// How the rotation axis of a 2.5D/3D view is chosen. 2D views always
/// rotate within the axial plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisPolicy {
    /// Uniformly random axis of the orthogonal triplet.
    #[default]
    RandomTriplet,
    /// Always rotate about z.
    Axial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub mode: Mode,
    pub scales_mm: Vec<f64>,
    pub n_translations: usize,
    pub n_rotations: usize,
    pub max_translation_mm: f64,
    pub patch_px: usize,
    #[serde(default)]
    pub axis_policy: AxisPolicy,
    /// When false every view is the untransformed patch at its scale.
    #[serde(default = "default_true")]
    pub random_transforms: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mode: Mode::TwoHalfD,
            scales_mm: alloc::vec![30.0, 35.0, 40.0, 45.0],
            n_translations: 5,
            n_rotations: 5,
            max_translation_mm: 3.0,
            patch_px: 32,
            axis_policy: AxisPolicy::RandomTriplet,
            random_transforms: true,
            seed: 0,
        }
    }
}

fn default_true() -> bool {
    true
}

impl SamplerConfig {
    /// One untransformed view at the middle scale.
    pub fn original(&self) -> SamplerConfig {
        SamplerConfig {
            scales_mm: self.scales_mm.get(self.scales_mm.len() / 2).copied().into_iter().collect(),
            n_translations: 1,
            n_rotations: 1,
            random_transforms: false,
            ..self.clone()
        }
    }

    pub fn n_scales(&self) -> usize {
        self.scales_mm.len()
    }

    /// Views per candidate, `Ns·Nt·Nr`.
    pub fn n_views(&self) -> usize {
        self.n_scales() * self.n_translations * self.n_rotations
    }

    pub fn shape(&self) -> [usize; 4] {
        self.mode.shape(self.patch_px)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales_mm.is_empty() || self.n_translations == 0 || self.n_rotations == 0 {
            return Err(Error::arg("sampler needs Ns, Nt, Nr >= 1"));
        }
        if self.scales_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::arg("sampler scales must be positive"));
        }
        if self.patch_px < 8 {
            return Err(Error::arg("patch_px must be >= 8"));
        }
        if !(self.max_translation_mm >= 0.0) || !self.max_translation_mm.is_finite() {
            return Err(Error::arg("max_translation_mm must be >= 0"));
        }
        Ok(())
    }
}

/// Which random stream views are drawn from. Training and test views of
/// the same candidate never coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewSet {
    Train,
    Test,
}

impl ViewSet {
    fn stream(self) -> u64 {
        match self {
            ViewSet::Train => rng::stream::TRAIN_VIEWS,
            ViewSet::Test => rng::stream::TEST_VIEWS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewParams {
    /// Patch edge length in mm.
    pub scale_mm: f64,
    pub translation_mm: Vec3,
    /// Rotation angle in degrees, `[0, 360)`.
    pub rotation_deg: f64,
    pub axis: Axis,
}

impl ViewParams {
    pub fn identity(scale_mm: f64) -> Self {
        ViewParams { scale_mm, translation_mm: [0.0; 3], rotation_deg: 0.0, axis: Axis::Z }
    }

    /// Columns are the rotated x, y and z axes.
    pub fn frame(&self) -> [Vec3; 3] {
        let a = self.rotation_deg.to_radians();
        let (s, c) = (libm::sin(a), libm::cos(a));
        match self.axis {
            Axis::Z => [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]],
            Axis::X => [[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]],
            Axis::Y => [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]],
        }
    }
}

fn uniform_in_ball(radius: f64, planar: bool, rng: &mut Rng) -> Vec3 {
    if radius == 0.0 {
        return [0.0; 3];
    }
    loop {
        let x = rng.random_range(-1.0..=1.0);
        let y = rng.random_range(-1.0..=1.0);
        let z = if planar { 0.0 } else { rng.random_range(-1.0..=1.0) };
        if x * x + y * y + z * z <= 1.0 {
            return [x * radius, y * radius, z * radius];
        }
    }
}

/// The `Ns·Nt·Nr` views of one candidate, ordered scale-major. The list
/// depends only on `(cfg, key, set)`.
pub fn make_view_params(cfg: &SamplerConfig, key: u64, set: ViewSet) -> Vec<ViewParams> {
    let mut rng = rng::rng_for(cfg.seed, set.stream(), key);
    let planar = cfg.mode == Mode::TwoD;
    let mut views = Vec::with_capacity(cfg.n_views());
    if !cfg.random_transforms {
        for &scale_mm in &cfg.scales_mm {
            views.extend(core::iter::repeat_n(ViewParams::identity(scale_mm), cfg.n_translations * cfg.n_rotations));
        }
        return views;
    }
    for &scale_mm in &cfg.scales_mm {
        for _ in 0..cfg.n_translations {
            let translation_mm = uniform_in_ball(cfg.max_translation_mm, planar, &mut rng);
            for _ in 0..cfg.n_rotations {
                let rotation_deg = rng.random_range(0.0..360.0);
                let axis = if planar || cfg.axis_policy == AxisPolicy::Axial {
                    Axis::Z
                } else {
                    [Axis::X, Axis::Y, Axis::Z][rng.random_range(0..3)]
                };
                views.push(ViewParams { scale_mm, translation_mm, rotation_deg, axis });
            }
        }
    }
    views
}

/// One sampled patch. Pixels are stored planar: channel, then depth, then
/// rows, then columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub patient_id: u32,
    pub candidate_id: u32,
    pub params: ViewParams,
    pub shape: [usize; 4],
    pub pixels: Vec<f64>,
    pub label: Label,
}

impl Observation {
    pub fn uid(&self) -> u64 {
        ((self.patient_id as u64) << 32) | self.candidate_id as u64
    }
}

impl Labeled for Observation {
    fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

/// Offset (mm) of pixel `i` from the patch centre.
#[inline]
fn pixel_offset(i: usize, patch_px: usize, scale_mm: f64) -> f64 {
    ((i as f64 + 0.5) / patch_px as f64 - 0.5) * scale_mm
}

/// World coordinate of pixel `(row, col)` of the plane spanned by `a`
/// (columns) and `b` (rows) through `center`.
#[inline]
pub fn plane_point(center: Vec3, a: Vec3, b: Vec3, row: usize, col: usize, patch_px: usize, scale_mm: f64) -> Vec3 {
    let oa = pixel_offset(col, patch_px, scale_mm);
    let ob = pixel_offset(row, patch_px, scale_mm);
    [center[0] + oa * a[0] + ob * b[0], center[1] + oa * a[1] + ob * b[1], center[2] + oa * a[2] + ob * b[2]]
}

/// In-plane axes `(columns, rows)` of each channel of a 2D/2.5D patch.
pub fn channel_planes(mode: Mode, frame: [Vec3; 3]) -> Vec<(Vec3, Vec3)> {
    let [u, w, n] = frame;
    match mode {
        Mode::TwoD => alloc::vec![(u, w)],
        Mode::TwoHalfD => alloc::vec![(u, w), (u, n), (w, n)],
        Mode::ThreeD => Vec::new(),
    }
}

/// Resample one view of `cand` from `vol`.
pub fn extract_observation(
    vol: &WindowedVolume,
    cand: &Candidate,
    vp: &ViewParams,
    mode: Mode,
    patch_px: usize,
) -> Result<Observation> {
    if !vol.geometry().contains(cand.center_mm) {
        return Err(Error::InvalidCandidate(cand.uid()));
    }
    let center = [
        cand.center_mm[0] + vp.translation_mm[0],
        cand.center_mm[1] + vp.translation_mm[1],
        cand.center_mm[2] + vp.translation_mm[2],
    ];
    let frame = vp.frame();
    let shape = mode.shape(patch_px);
    let mut pixels = Vec::with_capacity(shape.iter().product());
    match mode {
        Mode::TwoD | Mode::TwoHalfD => {
            for (a, b) in channel_planes(mode, frame) {
                for row in 0..patch_px {
                    for col in 0..patch_px {
                        pixels.push(vol.sample(plane_point(center, a, b, row, col, patch_px, vp.scale_mm)));
                    }
                }
            }
        }
        Mode::ThreeD => {
            let [u, w, n] = frame;
            for d in 0..patch_px {
                let od = pixel_offset(d, patch_px, vp.scale_mm);
                let slice_center = [center[0] + od * n[0], center[1] + od * n[1], center[2] + od * n[2]];
                for row in 0..patch_px {
                    for col in 0..patch_px {
                        pixels.push(vol.sample(plane_point(slice_center, u, w, row, col, patch_px, vp.scale_mm)));
                    }
                }
            }
        }
    }
    Ok(Observation {
        patient_id: cand.patient_id,
        candidate_id: cand.id,
        params: *vp,
        shape,
        pixels,
        label: cand.label,
    })
}

/// All views of one candidate from the given stream.
pub fn observe_candidate(
    vol: &WindowedVolume,
    cand: &Candidate,
    cfg: &SamplerConfig,
    set: ViewSet,
) -> Result<Vec<Observation>> {
    make_view_params(cfg, cand.uid(), set)
        .iter()
        .map(|vp| extract_observation(vol, cand, vp, cfg.mode, cfg.patch_px))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_candidate(cand.uid()))
}

/// Per-pixel mean of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanImage {
    pub shape: [usize; 4],
    pub values: Vec<f64>,
}

pub fn compute_pixel_mean(train: &[Observation]) -> Result<MeanImage> {
    let first = train.first().ok_or_else(|| Error::arg("pixel mean of an empty training set"))?;
    let mut values = alloc::vec![0.0; first.pixels.len()];
    for obs in train {
        if obs.shape != first.shape || obs.pixels.len() != values.len() {
            return Err(Error::arg("observations of different shapes in one training set"));
        }
        for (m, &p) in values.iter_mut().zip(&obs.pixels) {
            *m += p;
        }
    }
    let n = train.len() as f64;
    for m in &mut values {
        *m /= n;
    }
    Ok(MeanImage { shape: first.shape, values })
}

impl MeanImage {
    /// Subtract the mean in place.
    pub fn apply(&self, obs: &mut Observation) -> Result<()> {
        if obs.shape != self.shape || obs.pixels.len() != self.values.len() {
            return Err(Error::arg(alloc::format!(
                "observation shape {:?} does not match mean image {:?}",
                obs.shape,
                self.shape
            )));
        }
        for (p, &m) in obs.pixels.iter_mut().zip(&self.values) {
            *p -= m;
        }
        Ok(())
    }
}

pub fn apply_mean(mut obs: Observation, mean: &MeanImage) -> Result<Observation> {
    mean.apply(&mut obs)?;
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use alloc::vec;

    fn cfg(ns: usize, nt: usize, nr: usize) -> SamplerConfig {
        SamplerConfig {
            scales_mm: (0..ns).map(|i| 30.0 + 5.0 * i as f64).collect(),
            n_translations: nt,
            n_rotations: nr,
            ..SamplerConfig::default()
        }
    }

    fn pattern_volume() -> WindowedVolume {
        let g = Geometry::new([41, 41, 41], [1.0; 3], [-20.0; 3]).unwrap();
        let mut v = Vec::with_capacity(g.len());
        for k in 0..41 {
            for j in 0..41 {
                for i in 0..41 {
                    let p = g.to_world([i as f64, j as f64, k as f64]);
                    // asymmetric in every axis
                    v.push(
                        (0.5 + 0.01 * p[0] + 0.004 * p[1] * p[1] / 20.0 - 0.006 * p[2] + 0.0001 * p[0] * p[1])
                            .clamp(0.0, 1.0),
                    );
                }
            }
        }
        WindowedVolume::from_normalized(g, v).unwrap()
    }

    fn cand_at(c: Vec3) -> Candidate {
        Candidate::new(0, 0, c, 1.0)
    }

    #[test]
    fn original_config_is_one_identity_view() {
        let orig = SamplerConfig::default().original();
        assert_eq!(orig.n_views(), 1);
        assert_eq!(make_view_params(&orig, 9, ViewSet::Test), alloc::vec![ViewParams::identity(40.0)]);
    }

    #[test]
    fn view_counts() {
        assert_eq!(make_view_params(&cfg(4, 5, 5), 1, ViewSet::Train).len(), 100);
        assert_eq!(make_view_params(&cfg(4, 2, 5), 1, ViewSet::Train).len(), 40);
        let one = make_view_params(&cfg(1, 1, 1), 1, ViewSet::Train);
        assert_eq!(one.len(), 1);
        let v = one[0].translation_mm;
        assert!(libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) <= 3.0);
    }

    #[test]
    fn views_are_deterministic_and_streams_disjoint() {
        let c = cfg(4, 5, 5);
        assert_eq!(make_view_params(&c, 9, ViewSet::Test), make_view_params(&c, 9, ViewSet::Test));
        assert_ne!(make_view_params(&c, 9, ViewSet::Test), make_view_params(&c, 9, ViewSet::Train));
        assert_ne!(make_view_params(&c, 9, ViewSet::Test), make_view_params(&c, 10, ViewSet::Test));
    }

    #[test]
    fn view_params_respect_config() {
        let c = cfg(4, 5, 5);
        for vp in make_view_params(&c, 3, ViewSet::Train) {
            assert!(c.scales_mm.contains(&vp.scale_mm));
            let t = vp.translation_mm;
            assert!(libm::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]) <= c.max_translation_mm + 1e-12);
            assert!((0.0..360.0).contains(&vp.rotation_deg));
        }
        let planar = SamplerConfig { mode: Mode::TwoD, ..c };
        for vp in make_view_params(&planar, 3, ViewSet::Train) {
            assert_eq!(vp.translation_mm[2], 0.0);
            assert_eq!(vp.axis, Axis::Z);
        }
    }

    #[test]
    fn shapes_per_mode() {
        assert_eq!(Mode::TwoD.shape(32), [1, 1, 32, 32]);
        assert_eq!(Mode::TwoHalfD.shape(32), [3, 1, 32, 32]);
        assert_eq!(Mode::ThreeD.shape(16), [1, 16, 16, 16]);
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
    }

    #[test]
    fn constant_volume_gives_constant_patch() {
        let g = Geometry::new([20, 20, 20], [1.0; 3], [0.0; 3]).unwrap();
        let w = WindowedVolume::from_normalized(g, vec![0.4; g.len()]).unwrap();
        let c = cand_at([10.0, 10.0, 10.0]);
        let vp = ViewParams { scale_mm: 8.0, translation_mm: [0.5, -0.5, 1.0], rotation_deg: 33.0, axis: Axis::Y };
        for mode in Mode::ALL {
            let o = extract_observation(&w, &c, &vp, mode, 8).unwrap();
            assert!(o.pixels.iter().all(|&p| (p - 0.4).abs() < 1e-12));
            assert_eq!(o.pixels.len(), o.shape.iter().product::<usize>());
        }
    }

    #[test]
    fn triplet_channel_zero_is_axial_patch() {
        let w = pattern_volume();
        let c = cand_at([1.0, -2.0, 0.5]);
        let vp = ViewParams::identity(30.0);
        let axial = extract_observation(&w, &c, &vp, Mode::TwoD, 16).unwrap();
        let triplet = extract_observation(&w, &c, &vp, Mode::TwoHalfD, 16).unwrap();
        assert_eq!(triplet.shape[0], 3);
        assert_eq!(&triplet.pixels[..256], &axial.pixels[..]);
    }

    #[test]
    fn rotated_patch_matches_direct_resampling() {
        let w = pattern_volume();
        let c = cand_at([0.0, 0.0, 0.0]);
        let vp = ViewParams { scale_mm: 24.0, translation_mm: [0.0; 3], rotation_deg: 90.0, axis: Axis::Z };
        let p = 12;
        let o = extract_observation(&w, &c, &vp, Mode::TwoD, p).unwrap();
        for row in 0..p {
            for col in 0..p {
                let x = ((col as f64 + 0.5) / p as f64 - 0.5) * 24.0;
                let y = ((row as f64 + 0.5) / p as f64 - 0.5) * 24.0;
                // rotate (x, y) by +90 degrees about z
                let expect = w.sample([-y, x, 0.0]);
                assert!((o.pixels[row * p + col] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pixels_sit_at_their_world_coordinates() {
        let w = pattern_volume();
        let c = cand_at([2.0, 1.0, -1.0]);
        let p = 10;
        for vp in make_view_params(&cfg(2, 2, 2), 4, ViewSet::Train) {
            let o = extract_observation(&w, &c, &vp, Mode::TwoHalfD, p).unwrap();
            let center = [
                c.center_mm[0] + vp.translation_mm[0],
                c.center_mm[1] + vp.translation_mm[1],
                c.center_mm[2] + vp.translation_mm[2],
            ];
            for (ch, (a, b)) in channel_planes(Mode::TwoHalfD, vp.frame()).into_iter().enumerate() {
                for (row, col) in [(0, 0), (0, p - 1), (p - 1, 0), (p - 1, p - 1), (p / 2, p / 2)] {
                    let expect = w.sample(plane_point(center, a, b, row, col, p, vp.scale_mm));
                    assert_eq!(o.pixels[ch * p * p + row * p + col], expect);
                }
            }
        }
    }

    #[test]
    fn candidate_outside_volume_is_rejected() {
        let w = pattern_volume();
        let c = cand_at([100.0, 0.0, 0.0]);
        assert!(matches!(
            extract_observation(&w, &c, &ViewParams::identity(30.0), Mode::TwoD, 8),
            Err(Error::InvalidCandidate(_))
        ));
    }

    fn obs(pixels: Vec<f64>) -> Observation {
        Observation {
            patient_id: 0,
            candidate_id: 0,
            params: ViewParams::identity(30.0),
            shape: [1, 1, 1, pixels.len()],
            pixels,
            label: Label::Negative,
        }
    }

    #[test]
    fn pixel_mean_cases() {
        let a = obs(vec![0.2, 0.4, 0.9]);
        let m = compute_pixel_mean(core::slice::from_ref(&a)).unwrap();
        assert_eq!(m.values, a.pixels);
        assert!(apply_mean(a.clone(), &m).unwrap().pixels.iter().all(|&p| p == 0.0));

        let b = obs(vec![0.0, 0.6, 0.1]);
        let m = compute_pixel_mean(&[a.clone(), b.clone()]).unwrap();
        for i in 0..3 {
            assert!((m.values[i] - 0.5 * (a.pixels[i] + b.pixels[i])).abs() < 1e-15);
        }
        assert!(compute_pixel_mean(&[]).is_err());
        assert!(apply_mean(obs(vec![0.0; 2]), &m).is_err());
    }
}
