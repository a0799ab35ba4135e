//! Single pipeline stages that communicate through files in a work
//! directory:
//!
//! ```text
//! cohort/index.json, cohort/patient_NNNN.{json,raw,targets.json}
//! candidates_tier1.csv
//! model[_foldK]/model.{json,bin}, kernels.{png,txt}, loss.csv
//! candidates_scored.csv
//! froc_tier1.csv, froc_tier2.csv, summary.json, froc.svg
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use cade_core::candidates::label_candidates;
use cade_core::eval::kfold_split;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::formats::{self, svg};
use crate::pipeline::{self, Patient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CohortIndex {
    patient_ids: Vec<u32>,
}

fn cohort_dir(work: &Path) -> PathBuf {
    work.join("cohort")
}

fn volume_path(work: &Path, id: u32) -> PathBuf {
    cohort_dir(work).join(format!("patient_{id:04}.json"))
}

fn targets_path(work: &Path, id: u32) -> PathBuf {
    cohort_dir(work).join(format!("patient_{id:04}.targets.json"))
}

pub fn tier1_path(work: &Path) -> PathBuf {
    work.join("candidates_tier1.csv")
}

pub fn model_dir(work: &Path, fold: Option<usize>) -> PathBuf {
    match fold {
        Some(k) => work.join(format!("model_fold{k}")),
        None => work.join("model"),
    }
}

pub fn scored_path(work: &Path) -> PathBuf {
    work.join("candidates_scored.csv")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializable")).map_err(Error::io(path))
}

/// Generate the cohort and store every volume (RV1) and target list.
pub fn phantom(cfg: &ExperimentConfig, work: &Path) -> Result<usize> {
    let dir = cohort_dir(work);
    fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    let volumes = pipeline::generate_volumes(cfg)?;
    for (id, vol, targets) in &volumes {
        formats::rv1::write(&volume_path(work, *id), vol)?;
        formats::targets::write(&targets_path(work, *id), targets)?;
    }
    let index = CohortIndex { patient_ids: volumes.iter().map(|v| v.0).collect() };
    write_json(&dir.join("index.json"), &index)?;
    Ok(volumes.len())
}

fn cohort_ids(work: &Path) -> Result<Vec<u32>> {
    let path = cohort_dir(work).join("index.json");
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let index: CohortIndex = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    Ok(index.patient_ids)
}

/// Read the stored cohort and run the detector on every patient.
pub fn candidates(cfg: &ExperimentConfig, work: &Path) -> Result<usize> {
    let mut all = Vec::new();
    for id in cohort_ids(work)? {
        let vol = formats::rv1::read(&volume_path(work, id))?;
        let targets = formats::targets::read(&targets_path(work, id), id)?;
        all.extend(pipeline::prepare_patient(cfg, id, &vol, targets)?.detected);
    }
    formats::candidates::write(&tier1_path(work), &all)?;
    Ok(all.len())
}

/// Stored cohort plus stored tier-1 candidates, relabelled so that target
/// matches are restored.
pub fn load_patients(cfg: &ExperimentConfig, work: &Path) -> Result<Vec<Patient>> {
    let tier1 = formats::candidates::read(&tier1_path(work))?;
    cohort_ids(work)?
        .into_iter()
        .map(|id| {
            let vol = formats::rv1::read(&volume_path(work, id))?;
            let targets = formats::targets::read(&targets_path(work, id), id)?;
            let volume = pipeline::preprocess(cfg, &vol)?;
            let mut detected: Vec<_> = tier1.iter().filter(|c| c.patient_id == id).cloned().collect();
            label_candidates(&mut detected, &targets, cfg.labeling.match_radius);
            Ok(Patient { id, volume, targets, detected })
        })
        .collect()
}

/// Patients used for training (`test = false`) or testing in `fold`; with
/// no fold every patient is in both sets.
fn split<'a>(
    cfg: &ExperimentConfig,
    patients: &'a [Patient],
    fold: Option<usize>,
    test: bool,
) -> Result<Vec<&'a Patient>> {
    let Some(k) = fold else { return Ok(patients.iter().collect()) };
    if k >= cfg.eval.k_folds {
        return Err(Error::config("eval.k_folds", format!("fold {k} does not exist")));
    }
    let ids: Vec<u32> = patients.iter().map(|p| p.id).collect();
    let folds = kfold_split(&ids, cfg.eval.k_folds, cfg.seed)?;
    Ok(patients.iter().filter(|p| (folds.fold_of(p.id) == Some(k)) == test).collect())
}

pub fn train(cfg: &ExperimentConfig, work: &Path, fold: Option<usize>) -> Result<PathBuf> {
    let patients = load_patients(cfg, work)?;
    let train = split(cfg, &patients, fold, false)?;
    let sampler = pipeline::seeded_sampler(cfg, &cfg.sampler);
    let trained = pipeline::train_model(cfg, &sampler, &cfg.network, &train, fold.unwrap_or(0))
        .map_err(|e| e.in_fold(fold.unwrap_or(0)))?;
    let dir = model_dir(work, fold);
    fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    let header = dir.join("model.json");
    formats::checkpoint::write(&header, &trained.model)?;
    let mut loss = String::from("epoch,loss\n");
    for (i, l) in trained.loss_trace.iter().enumerate() {
        loss.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(dir.join("loss.csv"), loss).map_err(Error::io(dir.join("loss.csv")))?;
    if let Some(tiles) = formats::kernels::first_layer_tiles(&trained.model.params) {
        formats::kernels::write_png(&dir.join("kernels.png"), &tiles)?;
        let txt = dir.join("kernels.txt");
        fs::write(&txt, formats::kernels::to_ascii(&tiles)).map_err(Error::io(&txt))?;
    }
    Ok(header)
}

pub fn score(cfg: &ExperimentConfig, work: &Path, fold: Option<usize>, checkpoint: Option<&Path>) -> Result<usize> {
    let header = checkpoint.map_or_else(|| model_dir(work, fold).join("model.json"), Path::to_path_buf);
    let model = formats::checkpoint::read(&header)?;
    let patients = load_patients(cfg, work)?;
    let test = split(cfg, &patients, fold, true)?;
    let sampler = pipeline::seeded_sampler(cfg, &cfg.sampler);
    let scored = pipeline::score_patients(&model, &test, &sampler, cfg.labeling.inject_test)?;
    formats::candidates::write(&scored_path(work), &scored.candidates)?;
    Ok(scored.candidates.len())
}

/// Evaluate a scored candidate CSV against the stored targets of the
/// patients it covers.
pub fn eval(cfg: &ExperimentConfig, work: &Path, scored: Option<&Path>) -> Result<formats::froc::Summary> {
    let path = scored.map_or_else(|| scored_path(work), Path::to_path_buf);
    let mut cands = formats::candidates::read(&path)?;
    if cands.iter().any(|c| c.final_prob.is_none()) {
        return Err(Error::format(&path, "every candidate needs a final_prob"));
    }
    let mut ids: Vec<u32> = cands.iter().map(|c| c.patient_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut targets = Vec::new();
    for &id in &ids {
        let t = formats::targets::read(&targets_path(work, id), id)?;
        let mine: Vec<_> = cands.iter().enumerate().filter(|(_, c)| c.patient_id == id).map(|(i, _)| i).collect();
        let mut subset: Vec<_> = mine.iter().map(|&i| cands[i].clone()).collect();
        label_candidates(&mut subset, &t, cfg.labeling.match_radius);
        for (i, c) in mine.into_iter().zip(subset) {
            cands[i] = c;
        }
        targets.extend(t);
    }
    let e = pipeline::evaluate(cfg, &cands, &targets, ids.len())?;
    formats::froc::write_csv(&work.join("froc_tier1.csv"), &e.tier1)?;
    formats::froc::write_csv(&work.join("froc_tier2.csv"), &e.tier2)?;
    formats::froc::write_summary(&work.join("summary.json"), &e.summary)?;
    let plot = svg::froc_plot("FROC", &[("tier 1".into(), &e.tier1), ("tier 2".into(), &e.tier2)], 9.0);
    svg::write(&work.join("froc.svg"), &plot)?;
    Ok(e.summary)
}
