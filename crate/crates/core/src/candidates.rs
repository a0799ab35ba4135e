//! Tier-1 candidate generation, ground-truth labelling, target injection
//! and training-set balancing.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::Target;
use crate::rng;
use crate::volume::{Vec3, WindowedVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl core::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(Error::input(alloc::format!("unknown label {other:?}"))),
        }
    }
}

/// A tier-1 detection.
///
/// `id` is local to the patient; `uid()` combines both ids into a key that
/// is unique across a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub patient_id: u32,
    pub center_mm: Vec3,
    pub cg_score: f64,
    pub label: Label,
    /// Index into the patient's target list; set iff `label` is positive.
    pub matched_target: Option<usize>,
    pub final_prob: Option<f64>,
    /// Added by [`inject_targets`] rather than found by the detector.
    #[serde(default)]
    pub injected: bool,
}

impl Candidate {
    pub fn new(patient_id: u32, id: u32, center_mm: Vec3, cg_score: f64) -> Self {
        Candidate {
            id,
            patient_id,
            center_mm,
            cg_score,
            label: Label::Unlabeled,
            matched_target: None,
            final_prob: None,
            injected: false,
        }
    }

    pub fn uid(&self) -> u64 {
        ((self.patient_id as u64) << 32) | self.id as u64
    }

    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub threshold: f64,
    pub min_voxels: usize,
    pub max_candidates: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { threshold: 0.3, min_voxels: 3, max_candidates: 200 }
    }
}

/// Threshold the volume and emit one candidate per 26-connected component
/// of at least `min_voxels` voxels, at its intensity-weighted centroid.
///
/// `cg_score` is the mean intensity of the component. The result is sorted
/// by score (descending, ties by position) and truncated to
/// `max_candidates`; ids are assigned in that order.
pub fn generate_candidates(vol: &WindowedVolume, patient_id: u32, cfg: &DetectorConfig) -> Result<Vec<Candidate>> {
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::arg("detector threshold must lie in (0, 1)"));
    }
    let geom = vol.geometry();
    let [nx, ny, nz] = geom.dims;
    let vox = vol.voxels();
    let mut visited = alloc::vec![false; vox.len()];
    let mut queue = VecDeque::new();
    let mut found: Vec<(f64, Vec3)> = Vec::new();

    for start in 0..vox.len() {
        if visited[start] || vox[start] < cfg.threshold {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let (mut count, mut mass) = (0usize, 0.0);
        let mut moment = [0.0; 3];
        while let Some(at) = queue.pop_front() {
            let (i, j, k) = (at % nx, (at / nx) % ny, at / (nx * ny));
            let w = vox[at];
            count += 1;
            mass += w;
            moment[0] += w * i as f64;
            moment[1] += w * j as f64;
            moment[2] += w * k as f64;
            for dk in -1i64..=1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                        if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                            continue;
                        }
                        let n = geom.offset(a as usize, b as usize, c as usize);
                        if !visited[n] && vox[n] >= cfg.threshold {
                            visited[n] = true;
                            queue.push_back(n);
                        }
                    }
                }
            }
        }
        if count >= cfg.min_voxels {
            let centroid = geom.to_world([moment[0] / mass, moment[1] / mass, moment[2] / mass]);
            found.push((mass / count as f64, centroid));
        }
    }

    found.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal)));
    found.truncate(cfg.max_candidates);
    Ok(found
        .into_iter()
        .enumerate()
        .map(|(id, (score, center))| Candidate::new(patient_id, id as u32, center, score))
        .collect())
}

/// Distance within which a candidate counts as hitting a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRadius {
    /// Same distance for every target.
    Fixed(f64),
    /// Target radius plus a margin.
    TargetRadiusPlus(f64),
}

impl Default for MatchRadius {
    fn default() -> Self {
        MatchRadius::Fixed(15.0)
    }
}

impl MatchRadius {
    pub fn for_target(&self, target: &Target) -> f64 {
        match *self {
            MatchRadius::Fixed(d) => d,
            MatchRadius::TargetRadiusPlus(m) => target.radius_mm + m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            MatchRadius::Fixed(d) => d > 0.0,
            MatchRadius::TargetRadiusPlus(m) => m >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg("labeling distance must be positive"))
        }
    }
}

fn distance(a: Vec3, b: Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

/// Nearest target whose match radius covers `p`; ties go to the lower index.
fn nearest_covering(p: Vec3, targets: &[Target], radius: MatchRadius) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (t, target) in targets.iter().enumerate() {
        let d = distance(p, target.center_mm);
        if d <= radius.for_target(target) && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((t, d));
        }
    }
    best.map(|(t, _)| t)
}

/// Label each candidate against the patient's targets. Several candidates
/// may match one target.
pub fn label_candidates(cands: &mut [Candidate], targets: &[Target], radius: MatchRadius) {
    for c in cands.iter_mut() {
        match nearest_covering(c.center_mm, targets, radius) {
            Some(t) => {
                c.label = Label::Positive;
                c.matched_target = Some(t);
            }
            None => {
                c.label = Label::Negative;
                c.matched_target = None;
            }
        }
    }
}

/// Append a positive candidate at the centre of every target that no
/// positive candidate is matched to. Injected candidates take the maximum
/// existing `cg_score` (1.0 for an empty list).
pub fn inject_targets(cands: &mut Vec<Candidate>, targets: &[Target], patient_id: u32) -> usize {
    let mut covered = alloc::vec![false; targets.len()];
    for c in cands.iter() {
        if let (Label::Positive, Some(t)) = (c.label, c.matched_target) {
            if t < covered.len() {
                covered[t] = true;
            }
        }
    }
    let top = cands.iter().map(|c| c.cg_score).reduce(f64::max).unwrap_or(1.0);
    let mut next_id = cands.iter().map(|c| c.id + 1).max().unwrap_or(0);
    let mut injected = 0;
    for (t, target) in targets.iter().enumerate() {
        if covered[t] {
            continue;
        }
        let mut c = Candidate::new(patient_id, next_id, target.center_mm, top);
        c.label = Label::Positive;
        c.matched_target = Some(t);
        c.injected = true;
        cands.push(c);
        next_id += 1;
        injected += 1;
    }
    injected
}

/// Anything carrying a binary training label.
pub trait Labeled {
    fn is_positive(&self) -> bool;
}

impl Labeled for Candidate {
    fn is_positive(&self) -> bool {
        Candidate::is_positive(self)
    }
}

/// Keep every positive and an equal-sized uniform subset of negatives,
/// then shuffle. With fewer negatives than positives both classes are kept
/// whole.
pub fn balance_training_views<T: Labeled>(views: Vec<T>, seed: u64) -> Result<Vec<T>> {
    let (pos, neg): (Vec<T>, Vec<T>) = views.into_iter().partition(|v| v.is_positive());
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::dataset(alloc::format!(
            "balancing needs both classes ({} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = rng::rng_for(seed, rng::stream::BALANCE, 0);
    let n_pos = pos.len();
    let mut out = pos;
    if neg.len() < n_pos {
        log::warn!("only {} negatives for {} positives; keeping all of both", neg.len(), n_pos);
        out.extend(neg);
    } else {
        let mut keep = index::sample(&mut rng, neg.len(), n_pos).into_vec();
        keep.sort_unstable();
        let mut keep = keep.into_iter().peekable();
        for (i, v) in neg.into_iter().enumerate() {
            if keep.peek() == Some(&i) {
                keep.next();
                out.push(v);
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}
