//! FROC and ROC analysis, patient-level folds and Fisher's exact test.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::candidates::{Candidate, Label};
use crate::error::{Error, Result};
use crate::phantom::Target;
use crate::rng;

/// Which candidate score an evaluation ranks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Tier-1 detector confidence.
    Tier1,
    /// Aggregated second-tier probability.
    Final,
}

impl ScoreSource {
    pub fn score(self, c: &Candidate) -> Result<f64> {
        match self {
            ScoreSource::Tier1 => Ok(c.cg_score),
            ScoreSource::Final => c
                .final_prob
                .ok_or_else(|| Error::dataset(alloc::format!("candidate {} has no final probability", c.uid()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub fp_per_patient: f64,
    pub sensitivity: f64,
}

/// Operating points ordered by decreasing threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocCurve {
    pub points: Vec<FrocPoint>,
    pub n_patients: usize,
    pub n_targets: usize,
}

impl FrocCurve {
    /// FP rate and sensitivity never decrease as the threshold drops.
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| {
            w[1].threshold <= w[0].threshold
                && w[1].fp_per_patient >= w[0].fp_per_patient
                && w[1].sensitivity >= w[0].sensitivity
        }) && self.points.iter().all(|p| p.fp_per_patient >= 0.0 && (0.0..=1.0).contains(&p.sensitivity))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrocOptions {
    /// Targets smaller than this are excluded from the sensitivity
    /// denominator; candidates matched to them count neither as hits nor
    /// as false positives.
    pub min_target_radius_mm: f64,
}

/// Free-response operating characteristic.
///
/// Sensitivity is per target (a target is hit when at least one positive
/// candidate matched to it scores `>= t`); false positives are per
/// negative candidate, divided by all patients including lesion-free ones.
/// `targets` holds every patient's targets in list order, so candidate
/// `matched_target = i` refers to the `i`-th target carrying its patient id.
/// Without explicit thresholds the curve has one point per distinct score,
/// plus a leading `+inf` point at the origin.
pub fn froc(
    cands: &[Candidate],
    targets: &[Target],
    n_patients: usize,
    source: ScoreSource,
    thresholds: Option<&[f64]>,
    opts: FrocOptions,
) -> Result<FrocCurve> {
    if n_patients == 0 {
        return Err(Error::dataset("FROC needs at least one patient"));
    }
    let mut per_patient: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
    for t in targets {
        per_patient.entry(t.patient_id).or_default().push(t.radius_mm >= opts.min_target_radius_mm);
    }
    let mut target_key: BTreeMap<(u32, usize), usize> = BTreeMap::new();
    for (pid, included) in &per_patient {
        for (i, _) in included.iter().enumerate().filter(|(_, inc)| **inc) {
            let next = target_key.len();
            target_key.insert((*pid, i), next);
        }
    }
    let n_targets = target_key.len();
    if n_targets == 0 {
        return Err(Error::dataset("FROC needs at least one target"));
    }

    let mut best_hit = alloc::vec![f64::NEG_INFINITY; n_targets];
    let mut fp_scores = Vec::new();
    let mut all_scores = Vec::new();
    for c in cands {
        let s = source.score(c)?;
        if s.is_nan() {
            return Err(Error::dataset(alloc::format!("candidate {} has a NaN score", c.uid())));
        }
        match (c.label, c.matched_target) {
            (Label::Positive, Some(t)) => {
                let known = per_patient.get(&c.patient_id).is_some_and(|v| t < v.len());
                if !known {
                    return Err(Error::dataset(alloc::format!("candidate {} matches an unknown target", c.uid())));
                }
                if let Some(&k) = target_key.get(&(c.patient_id, t)) {
                    best_hit[k] = best_hit[k].max(s);
                    all_scores.push(s);
                }
            }
            (Label::Negative, _) => {
                fp_scores.push(s);
                all_scores.push(s);
            }
            _ => return Err(Error::dataset(alloc::format!("candidate {} is not labelled", c.uid()))),
        }
    }

    let ts: Vec<f64> = match thresholds {
        Some(ts) => {
            if ts.iter().any(|t| t.is_nan()) {
                return Err(Error::arg("thresholds must not be NaN"));
            }
            let mut ts = ts.to_vec();
            ts.sort_by(|a, b| b.total_cmp(a));
            ts
        }
        None => {
            all_scores.sort_by(|a, b| b.total_cmp(a));
            all_scores.dedup();
            core::iter::once(f64::INFINITY).chain(all_scores).collect()
        }
    };

    best_hit.sort_by(|a, b| b.total_cmp(a));
    fp_scores.sort_by(|a, b| b.total_cmp(a));
    let (mut hit, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(ts.len());
    for &t in &ts {
        while hit < best_hit.len() && best_hit[hit] >= t {
            hit += 1;
        }
        while fp < fp_scores.len() && fp_scores[fp] >= t {
            fp += 1;
        }
        points.push(FrocPoint {
            threshold: t,
            fp_per_patient: fp as f64 / n_patients as f64,
            sensitivity: hit as f64 / n_targets as f64,
        });
    }
    let curve = FrocCurve { points, n_patients, n_targets };
    debug_assert!(curve.is_monotone());
    Ok(curve)
}

/// Sensitivity at an FP rate by linear interpolation along the curve,
/// clamped to its end points. Where several points share an FP rate the
/// highest sensitivity among them is used.
pub fn sensitivity_at_fp(curve: &FrocCurve, fp_rate: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(curve.points.len());
    for p in &curve.points {
        match pts.last_mut() {
            Some(last) if last.0 == p.fp_per_patient => last.1 = last.1.max(p.sensitivity),
            _ => pts.push((p.fp_per_patient, p.sensitivity)),
        }
    }
    let Some(&first) = pts.first() else { return 0.0 };
    if fp_rate <= first.0 {
        return first.1;
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if fp_rate <= x1 {
            return y0 + (y1 - y0) * (fp_rate - x0) / (x1 - x0);
        }
    }
    pts[pts.len() - 1].1
}

/// `P(score⁺ > score⁻) + ½·P(tie)` over all positive/negative pairs.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::arg("labels and scores differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::dataset("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::dataset("ROC AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the Mann-Whitney U statistic, kept integral
    let mut twice_u: u128 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += 2 * pos as u128 * neg_below as u128 + pos as u128 * neg as u128;
        neg_below += neg;
        i = j;
    }
    Ok((twice_u as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Candidate-level AUC of labelled candidates.
pub fn candidate_auc(cands: &[Candidate], source: ScoreSource) -> Result<f64> {
    let mut labels = Vec::with_capacity(cands.len());
    let mut scores = Vec::with_capacity(cands.len());
    for c in cands {
        match c.label {
            Label::Positive => labels.push(true),
            Label::Negative => labels.push(false),
            Label::Unlabeled => return Err(Error::dataset("unlabelled candidate in AUC")),
        }
        scores.push(source.score(c)?);
    }
    roc_auc(&labels, &scores)
}

/// Patient → fold index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<u32, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, patient_id: u32) -> Option<usize> {
        self.folds.get(&patient_id).copied()
    }

    pub fn test_patients(&self, fold: usize) -> Vec<u32> {
        self.folds.iter().filter(|(_, &f)| f == fold).map(|(&p, _)| p).collect()
    }

    pub fn train_patients(&self, fold: usize) -> Vec<u32> {
        self.folds.iter().filter(|(_, &f)| f != fold).map(|(&p, _)| p).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle of the patients, then round-robin over `k` folds.
pub fn kfold_split(patient_ids: &[u32], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::arg("k-fold split needs k >= 2"));
    }
    if k > patient_ids.len() {
        return Err(Error::arg(alloc::format!("k = {k} exceeds the {} patients", patient_ids.len())));
    }
    let mut ids = patient_ids.to_vec();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::arg("duplicate patient id in k-fold split"));
    }
    ids.shuffle(&mut rng::rng_for(seed, rng::stream::FOLDS, k as u64));
    let folds = ids.into_iter().enumerate().map(|(i, p)| (p, i % k)).collect();
    Ok(FoldAssignment { k, folds })
}

/// `ln(i!)` for `i` in `0..=n`, by cumulative sums of logarithms.
fn log_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for i in 1..=n {
        acc += libm::log(i as f64);
        table.push(acc);
    }
    table
}

/// Two-sided Fisher's exact test for the table `[[a, b], [c, d]]`.
///
/// Sums the hypergeometric probabilities of every table with the same
/// margins that is no more likely than the observed one (relative slack
/// 1e-12). Tables with an empty row or column give 1.0.
pub fn fisher_exact(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return 1.0;
    }
    let n = (r1 + r2) as usize;
    let lf = log_factorials(n);
    let fixed = lf[r1 as usize] + lf[r2 as usize] + lf[c1 as usize] + lf[c2 as usize] - lf[n];
    let log_p = |x: u64| {
        let (x, y, z, w) = (x as usize, (r1 - x) as usize, (c1 - x) as usize, (r2 + x - c1) as usize);
        fixed - lf[x] - lf[y] - lf[z] - lf[w]
    };
    let observed = log_p(a);
    let cutoff = observed + libm::log1p(1e-12);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let p: f64 = (lo..=hi).map(log_p).filter(|&lp| lp <= cutoff).map(libm::exp).sum();
    p.min(1.0)
}
