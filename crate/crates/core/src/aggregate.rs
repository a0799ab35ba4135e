//! Per-candidate probability as the mean of per-view predictions.

use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::candidates::Candidate;
use crate::convnet::{Network, NetworkParams};
use crate::error::{Error, Result};
use crate::rng;
use crate::sampler::{observe_candidate, MeanImage, SamplerConfig, ViewSet};
use crate::volume::WindowedVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub patient_id: u32,
    pub candidate_id: u32,
    pub view_probs: Vec<f64>,
    pub n_used: usize,
    pub p_final: f64,
}

/// Mean of `view_probs`, or of a seeded uniform subset of `n` of them
/// (without replacement) when `n < len`.
pub fn aggregate(view_probs: &[f64], n: Option<usize>, seed: u64) -> Result<f64> {
    if view_probs.is_empty() {
        return Err(Error::arg("cannot aggregate an empty list of view probabilities"));
    }
    if view_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::arg("view probabilities must lie in [0, 1]"));
    }
    let n = n.unwrap_or(view_probs.len());
    if n == 0 || n > view_probs.len() {
        return Err(Error::arg(alloc::format!("subset size {n} outside 1..={}", view_probs.len())));
    }
    let mean = if n == view_probs.len() {
        view_probs.iter().sum::<f64>() / n as f64
    } else {
        let mut rng = rng::rng_for(seed, rng::stream::SUBSET, 0);
        let mut picked = index::sample(&mut rng, view_probs.len(), n).into_vec();
        picked.sort_unstable();
        picked.iter().map(|&i| view_probs[i]).sum::<f64>() / n as f64
    };
    // rounding can push a mean of identical values one ulp past them
    let (lo, hi) = view_probs.iter().fold((1.0f64, 0.0f64), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    Ok(mean.clamp(lo, hi))
}

/// A trained classifier together with the training-set pixel mean.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub params: NetworkParams,
    pub mean: MeanImage,
}

impl Model {
    pub fn new(params: NetworkParams, mean: MeanImage) -> Result<Self> {
        let network = Network::new(&params.spec)?;
        if mean.values.len() != network.input_len() {
            return Err(Error::arg("mean image does not match the network input"));
        }
        Ok(Model { network, params, mean })
    }

    /// Test-mode prediction for every test view of `cand`, in view order.
    pub fn view_probs(&self, vol: &WindowedVolume, cand: &Candidate, cfg: &SamplerConfig) -> Result<Vec<f64>> {
        let mut views = observe_candidate(vol, cand, cfg, ViewSet::Test)?;
        for v in &mut views {
            self.mean.apply(v).map_err(|e| e.at_candidate(cand.uid()))?;
        }
        let xs: Vec<&[f64]> = views.iter().map(|v| v.pixels.as_slice()).collect();
        self.network.predict_many(&self.params, &xs).map_err(|e| e.at_candidate(cand.uid()))
    }
}

/// Score every candidate of one patient, writing `final_prob`.
pub fn score_candidates(
    model: &Model,
    vol: &WindowedVolume,
    cands: &mut [Candidate],
    cfg: &SamplerConfig,
    n: Option<usize>,
) -> Result<Vec<CandidateScore>> {
    let mut scores = Vec::with_capacity(cands.len());
    for cand in cands.iter_mut() {
        let view_probs = model.view_probs(vol, cand, cfg)?;
        let n_used = n.unwrap_or(view_probs.len());
        if n_used > view_probs.len() {
            return Err(Error::arg(alloc::format!("N = {n_used} exceeds the {} configured views", view_probs.len())));
        }
        let p_final = aggregate(&view_probs, Some(n_used), subset_seed(cfg.seed, cand.uid()))
            .map_err(|e| e.at_candidate(cand.uid()))?;
        cand.final_prob = Some(p_final);
        scores.push(CandidateScore { patient_id: cand.patient_id, candidate_id: cand.id, view_probs, n_used, p_final });
    }
    Ok(scores)
}

/// Seed of the N-subset drawn for one candidate.
pub fn subset_seed(seed: u64, candidate_uid: u64) -> u64 {
    rng::derive_seed(seed, rng::stream::SUBSET, candidate_uid)
}

/// Score a cohort given as `(windowed volume, candidates)` per patient.
pub fn score_cohort(
    model: &Model,
    patients: &mut [(WindowedVolume, Vec<Candidate>)],
    cfg: &SamplerConfig,
    n: Option<usize>,
) -> Result<Vec<CandidateScore>> {
    let mut all = Vec::new();
    for (vol, cands) in patients.iter_mut() {
        all.extend(score_candidates(model, vol, cands, cfg, n)?);
    }
    Ok(all)
}
