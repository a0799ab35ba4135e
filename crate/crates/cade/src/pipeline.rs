//! The cascade end to end: phantoms → tier-1 candidates → labelling and
//! injection → random views → balanced training → aggregated scoring →
//! FROC evaluation, over patient-level folds.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cade_core::aggregate::{aggregate, subset_seed, Model};
use cade_core::candidates::{
    balance_training_views, generate_candidates, inject_targets, label_candidates, Candidate, Labeled,
};
use cade_core::convnet::{init_params, train_observations, Network};
use cade_core::eval::{
    candidate_auc, fisher_exact, froc, kfold_split, sensitivity_at_fp, FoldAssignment, FrocCurve, FrocOptions,
    ScoreSource,
};
use cade_core::phantom::{generate_cohort, Target};
use cade_core::rng::{derive_seed, stream};
use cade_core::sampler::{
    compute_pixel_mean, extract_observation, make_view_params, Observation, SamplerConfig, ViewSet,
};
use cade_core::volume::{resample_isotropic, window_hu, Volume, WindowedVolume};

use crate::config::{ExperimentConfig, NetworkConfig};
use crate::error::{Error, Result};
use crate::formats::froc::{fp_key, Summary, TierSummary};
use crate::formats::{self, svg};

/// One preprocessed patient.
#[derive(Debug, Clone)]
pub struct Patient {
    pub id: u32,
    pub volume: WindowedVolume,
    pub targets: Vec<Target>,
    /// Detector output labelled against the targets, before injection.
    pub detected: Vec<Candidate>,
}

impl Patient {
    /// Candidate list used for training or testing; `inject` adds every
    /// target the detector missed.
    pub fn candidates(&self, inject: bool) -> Vec<Candidate> {
        let mut cands = self.detected.clone();
        if inject {
            inject_targets(&mut cands, &self.targets, self.id);
        }
        cands
    }
}

/// Integer HU, as stored on disk.
pub fn quantize(vol: &Volume) -> Result<Volume> {
    let voxels = vol.voxels().iter().map(|v| v.round().clamp(i16::MIN as f64, i16::MAX as f64)).collect();
    Ok(Volume::new(*vol.geometry(), voxels)?)
}

pub fn preprocess(cfg: &ExperimentConfig, vol: &Volume) -> Result<WindowedVolume> {
    let iso = resample_isotropic(vol, cfg.preprocess.isotropic_mm)?;
    let [lo, hi] = cfg.preprocess.window_hu;
    Ok(window_hu(&iso, lo, hi)?)
}

/// Preprocess a stored volume, run the detector and label its output.
pub fn prepare_patient(cfg: &ExperimentConfig, id: u32, vol: &Volume, targets: Vec<Target>) -> Result<Patient> {
    let volume = preprocess(cfg, vol)?;
    let mut detected = generate_candidates(&volume, id, &cfg.detector)?;
    label_candidates(&mut detected, &targets, cfg.labeling.match_radius);
    Ok(Patient { id, volume, targets, detected })
}

/// Raw phantom volumes (integer HU) and targets of the configured cohort.
pub fn generate_volumes(cfg: &ExperimentConfig) -> Result<Vec<(u32, Volume, Vec<Target>)>> {
    let mut spec = cfg.cohort.phantom.clone();
    spec.seed = cfg.seed;
    generate_cohort(&spec, cfg.cohort.n_patients, cfg.cohort.control_fraction)?
        .into_iter()
        .map(|p| Ok((p.patient_id, quantize(&p.volume)?, p.targets)))
        .collect()
}

pub fn prepare_cohort(cfg: &ExperimentConfig) -> Result<Vec<Patient>> {
    let patients = generate_volumes(cfg)?
        .into_iter()
        .map(|(id, vol, targets)| prepare_patient(cfg, id, &vol, targets))
        .collect::<Result<Vec<_>>>()?;
    let n_cands: usize = patients.iter().map(|p| p.detected.len()).sum();
    let n_targets: usize = patients.iter().map(|p| p.targets.len()).sum();
    log::info!("cohort: {} patients, {n_targets} targets, {n_cands} tier-1 candidates", patients.len());
    Ok(patients)
}

/// The sampler with the experiment seed in place.
pub fn seeded_sampler(cfg: &ExperimentConfig, sampler: &SamplerConfig) -> SamplerConfig {
    SamplerConfig { seed: cfg.seed, ..sampler.clone() }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub loss_trace: Vec<f64>,
    pub n_train_views: usize,
}

struct ViewRef {
    patient: usize,
    cand: usize,
    view: usize,
    positive: bool,
}

impl Labeled for ViewRef {
    fn is_positive(&self) -> bool {
        self.positive
    }
}

/// Train one model on the given patients. Candidates are injected, each
/// contributes its training views, and views are balanced before any
/// pixels are extracted.
pub fn train_model(
    cfg: &ExperimentConfig,
    sampler: &SamplerConfig,
    network: &NetworkConfig,
    patients: &[&Patient],
    fold: usize,
) -> Result<TrainedModel> {
    let cands: Vec<Vec<Candidate>> = patients.iter().map(|p| p.candidates(true)).collect();
    let views: Vec<Vec<_>> = cands
        .iter()
        .map(|cs| cs.iter().map(|c| make_view_params(sampler, c.uid(), ViewSet::Train)).collect())
        .collect();
    let mut refs = Vec::new();
    for (p, cs) in cands.iter().enumerate() {
        for (c, cand) in cs.iter().enumerate() {
            for view in 0..views[p][c].len() {
                refs.push(ViewRef { patient: p, cand: c, view, positive: cand.is_positive() });
            }
        }
    }
    let balanced = balance_training_views(refs, derive_seed(cfg.seed, stream::BALANCE, fold as u64))?;
    let mut obs: Vec<Observation> = balanced
        .iter()
        .map(|r| {
            let cand = &cands[r.patient][r.cand];
            extract_observation(
                &patients[r.patient].volume,
                cand,
                &views[r.patient][r.cand][r.view],
                sampler.mode,
                sampler.patch_px,
            )
            .map_err(|e| e.at_candidate(cand.uid()))
        })
        .collect::<cade_core::Result<_>>()?;
    let mean = compute_pixel_mean(&obs)?;
    for o in &mut obs {
        mean.apply(o)?;
    }
    let spec = network.spec_for(sampler.shape());
    let net = Network::new(&spec)?;
    let params0 = init_params(&spec, derive_seed(cfg.seed, stream::INIT, fold as u64))?;
    let schedule = cade_core::convnet::TrainSchedule {
        seed: derive_seed(cfg.seed, stream::SHUFFLE, fold as u64),
        ..cfg.schedule.clone()
    };
    log::info!("fold {fold}: training on {} views from {} patients", obs.len(), patients.len());
    let outcome = train_observations(&net, params0, &obs, &schedule)?;
    if let Some(last) = outcome.loss_trace.last() {
        log::info!("fold {fold}: final training loss {last:.4}");
    }
    Ok(TrainedModel {
        model: Model { network: net, params: outcome.params, mean },
        loss_trace: outcome.loss_trace,
        n_train_views: obs.len(),
    })
}

/// Test candidates of some patients with their per-view probabilities.
#[derive(Debug, Clone, Default)]
pub struct Scored {
    pub candidates: Vec<Candidate>,
    pub view_probs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
    pub n_patients: usize,
}

impl Scored {
    fn extend(&mut self, other: Scored) {
        self.candidates.extend(other.candidates);
        self.view_probs.extend(other.view_probs);
        self.targets.extend(other.targets);
        self.n_patients += other.n_patients;
    }

    /// Re-aggregate with `n` views per candidate, returning a copy.
    pub fn with_n(&self, n: usize, sampler: &SamplerConfig) -> Result<Vec<Candidate>> {
        self.candidates
            .iter()
            .zip(&self.view_probs)
            .map(|(c, probs)| {
                let p = aggregate(probs, Some(n), subset_seed(sampler.seed, c.uid()))
                    .map_err(|e| e.at_candidate(c.uid()))?;
                Ok(Candidate { final_prob: Some(p), ..c.clone() })
            })
            .collect()
    }
}

pub fn score_patients(model: &Model, patients: &[&Patient], sampler: &SamplerConfig, inject: bool) -> Result<Scored> {
    let mut out = Scored::default();
    for p in patients {
        for mut c in p.candidates(inject) {
            let probs = model.view_probs(&p.volume, &c, sampler)?;
            c.final_prob = Some(aggregate(&probs, None, 0).map_err(|e| e.at_candidate(c.uid()))?);
            out.candidates.push(c);
            out.view_probs.push(probs);
        }
        out.targets.extend(p.targets.iter().cloned());
        out.n_patients += 1;
    }
    Ok(out)
}

/// FROC curves, AUCs and the summary of one scored candidate pool.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub tier1: FrocCurve,
    pub tier2: FrocCurve,
    pub summary: Summary,
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    cands: &[Candidate],
    targets: &[Target],
    n_patients: usize,
) -> Result<Evaluation> {
    let opts = FrocOptions { min_target_radius_mm: cfg.eval.min_target_radius_mm };
    let tier1 = froc(cands, targets, n_patients, ScoreSource::Tier1, None, opts)?;
    let tier2 = froc(cands, targets, n_patients, ScoreSource::Final, None, opts)?;
    let sens =
        |curve: &FrocCurve| cfg.eval.fp_rates.iter().map(|&fp| (fp_key(fp), sensitivity_at_fp(curve, fp))).collect();
    let n = tier2.n_targets as u64;
    let hits = |curve: &FrocCurve| ((sensitivity_at_fp(curve, cfg.eval.fisher_fp) * n as f64).round() as u64).min(n);
    let (h2, h1) = (hits(&tier2), hits(&tier1));
    let summary = Summary {
        auc: candidate_auc(cands, ScoreSource::Final)?,
        sens_at_fp: sens(&tier2),
        fisher_p_at_3fp: fisher_exact(h2, n - h2, h1, n - h1),
        tier1: TierSummary { auc: candidate_auc(cands, ScoreSource::Tier1)?, sens_at_fp: sens(&tier1) },
        n_patients,
        n_targets: tier2.n_targets,
        n_candidates: cands.len(),
    };
    Ok(Evaluation { tier1, tier2, summary })
}

/// Map `f` over `items` on up to `threads` worker threads, keeping order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every item mapped")).collect()
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub threads: usize,
    /// Also score every fold's training patients (train-set FROC).
    pub score_train: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { threads: 1, score_train: false }
    }
}

pub struct FoldResult {
    pub fold: usize,
    pub trained: TrainedModel,
    pub test: Scored,
    pub train: Option<Scored>,
}

pub struct PipelineResult {
    pub sampler: SamplerConfig,
    pub folds: FoldAssignment,
    pub fold_results: Vec<FoldResult>,
    /// Tier-1 detections of every patient, labelled, before injection.
    pub detected: Vec<Candidate>,
    pub test: Scored,
    pub train: Option<Scored>,
    pub eval: Evaluation,
}

/// k-fold cross-validation of one sampler/network configuration.
pub fn run_folds(
    cfg: &ExperimentConfig,
    patients: &[Patient],
    sampler: &SamplerConfig,
    network: &NetworkConfig,
    opts: &RunOptions,
) -> Result<PipelineResult> {
    let sampler = seeded_sampler(cfg, sampler);
    let ids: Vec<u32> = patients.iter().map(|p| p.id).collect();
    let folds = kfold_split(&ids, cfg.eval.k_folds, cfg.seed)?;
    let fold_ids: Vec<usize> = (0..cfg.n_folds_run()).collect();
    let results = parallel_map(&fold_ids, opts.threads, |_, &fold| -> Result<FoldResult> {
        let pick = |test: bool| -> Vec<&Patient> {
            patients.iter().filter(|p| (folds.fold_of(p.id) == Some(fold)) == test).collect()
        };
        let run = || -> Result<FoldResult> {
            let trained = train_model(cfg, &sampler, network, &pick(false), fold)?;
            let test = score_patients(&trained.model, &pick(true), &sampler, cfg.labeling.inject_test)?;
            let train = if opts.score_train {
                Some(score_patients(&trained.model, &pick(false), &sampler, true)?)
            } else {
                None
            };
            Ok(FoldResult { fold, trained, test, train })
        };
        run().map_err(|e| e.in_fold(fold))
    });
    let fold_results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut test = Scored::default();
    let mut train: Option<Scored> = opts.score_train.then(Scored::default);
    for r in &fold_results {
        test.extend(r.test.clone());
        if let (Some(all), Some(t)) = (train.as_mut(), r.train.clone()) {
            all.extend(t);
        }
    }
    let eval = evaluate(cfg, &test.candidates, &test.targets, test.n_patients)?;
    let s = &eval.summary;
    log::info!(
        "{} {}: AUC {:.4} (tier-1 {:.4}), sensitivity at {} FP {:.3} (tier-1 {:.3})",
        sampler.mode,
        if sampler.random_transforms { "AUG" } else { "ORIG" },
        s.auc,
        s.tier1.auc,
        cfg.eval.fisher_fp,
        sensitivity_at_fp(&eval.tier2, cfg.eval.fisher_fp),
        sensitivity_at_fp(&eval.tier1, cfg.eval.fisher_fp),
    );
    let detected = patients.iter().flat_map(|p| p.detected.iter().cloned()).collect();
    Ok(PipelineResult { sampler, folds, fold_results, detected, test, train, eval })
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::io(path))
}

fn write_loss(path: &Path, trace: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        text.push_str(&format!("{},{l}\n", i + 1));
    }
    write_text(path, &text)
}

/// Write a pipeline report (without the manifest) into `dir`.
pub fn write_report(dir: &Path, cfg: &ExperimentConfig, result: &PipelineResult) -> Result<()> {
    mkdir(dir)?;
    write_text(&dir.join("config.json"), &cfg.to_json())?;
    formats::candidates::write(&dir.join("candidates_tier1.csv"), &result.detected)?;
    formats::candidates::write(&dir.join("candidates_scored.csv"), &result.test.candidates)?;
    for r in &result.fold_results {
        let fd = dir.join(format!("fold{}", r.fold));
        mkdir(&fd)?;
        formats::checkpoint::write(&fd.join("model.json"), &r.trained.model)?;
        write_loss(&fd.join("loss.csv"), &r.trained.loss_trace)?;
        if let Some(tiles) = formats::kernels::first_layer_tiles(&r.trained.model.params) {
            formats::kernels::write_png(&fd.join("kernels.png"), &tiles)?;
            write_text(&fd.join("kernels.txt"), &formats::kernels::to_ascii(&tiles))?;
        }
    }
    let e = &result.eval;
    formats::froc::write_csv(&dir.join("froc_tier1.csv"), &e.tier1)?;
    formats::froc::write_csv(&dir.join("froc_tier2.csv"), &e.tier2)?;
    formats::froc::write_summary(&dir.join("summary.json"), &e.summary)?;
    let max_fp = max_fp(cfg);
    let plot = svg::froc_plot(
        &format!("FROC, {} patients", e.summary.n_patients),
        &[("tier 1".into(), &e.tier1), ("tier 2".into(), &e.tier2)],
        max_fp,
    );
    svg::write(&dir.join("froc.svg"), &plot)?;
    if let Some(train) = &result.train {
        let opts = FrocOptions { min_target_radius_mm: cfg.eval.min_target_radius_mm };
        let curve = froc(&train.candidates, &train.targets, train.n_patients, ScoreSource::Final, None, opts)?;
        formats::froc::write_csv(&dir.join("froc_train.csv"), &curve)?;
    }
    Ok(())
}

fn max_fp(cfg: &ExperimentConfig) -> f64 {
    cfg.eval.fp_rates.iter().cloned().fold(cfg.eval.fisher_fp, f64::max).max(1.0) * 1.5
}

/// Full cross-validated pipeline; writes a report and manifest when `out`
/// is given.
pub fn run_pipeline(cfg: &ExperimentConfig, out: Option<&Path>, opts: &RunOptions) -> Result<PipelineResult> {
    cfg.validate()?;
    let patients = prepare_cohort(cfg)?;
    let result = run_folds(cfg, &patients, &cfg.sampler, &cfg.network, opts)?;
    if let Some(dir) = out {
        write_report(dir, cfg, &result)?;
        crate::manifest::write(dir)?;
    }
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub n: usize,
    pub curve: FrocCurve,
    pub auc: f64,
}

/// Re-aggregate a finished run with `n` of its test views per candidate.
pub fn n_sweep(cfg: &ExperimentConfig, result: &PipelineResult, n_values: &[usize]) -> Result<Vec<SweepPoint>> {
    let n_max = result.sampler.n_views();
    let opts = FrocOptions { min_target_radius_mm: cfg.eval.min_target_radius_mm };
    n_values
        .iter()
        .map(|&n| {
            if n == 0 || n > n_max {
                return Err(Error::Core(cade_core::Error::InvalidArgument(format!("N = {n} outside 1..={n_max}"))));
            }
            let cands = result.test.with_n(n, &result.sampler)?;
            let curve = froc(&cands, &result.test.targets, result.test.n_patients, ScoreSource::Final, None, opts)?;
            let auc = candidate_auc(&cands, ScoreSource::Final)?;
            log::info!("N = {n}: AUC {auc:.4}");
            Ok(SweepPoint { n, curve, auc })
        })
        .collect()
}

/// Pipeline plus N-sweep, with a combined CSV and overlay plot.
pub fn run_n_sweep(
    cfg: &ExperimentConfig,
    n_values: &[usize],
    out: Option<&Path>,
    opts: &RunOptions,
) -> Result<(PipelineResult, Vec<SweepPoint>)> {
    cfg.validate()?;
    let patients = prepare_cohort(cfg)?;
    let result = run_folds(cfg, &patients, &cfg.sampler, &cfg.network, opts)?;
    let sweep = n_sweep(cfg, &result, n_values)?;
    if let Some(dir) = out {
        write_report(dir, cfg, &result)?;
        write_sweep(dir, cfg, &sweep)?;
        crate::manifest::write(dir)?;
    }
    Ok((result, sweep))
}

pub fn write_sweep(dir: &Path, cfg: &ExperimentConfig, sweep: &[SweepPoint]) -> Result<()> {
    let curves: Vec<(usize, FrocCurve)> = sweep.iter().map(|s| (s.n, s.curve.clone())).collect();
    formats::froc::write_sweep_csv(&dir.join("n_sweep.csv"), &curves)?;
    let mut auc = String::from("n,auc\n");
    for s in sweep {
        auc.push_str(&format!("{},{}\n", s.n, s.auc));
    }
    write_text(&dir.join("n_sweep_auc.csv"), &auc)?;
    let labelled: Vec<(String, &FrocCurve)> = sweep.iter().map(|s| (format!("N = {}", s.n), &s.curve)).collect();
    svg::write(&dir.join("n_sweep.svg"), &svg::froc_plot("FROC by number of views", &labelled, max_fp(cfg)))
}

#[derive(Debug, Clone)]
pub struct MatrixCell {
    pub mode: cade_core::sampler::Mode,
    pub variant: crate::config::Variant,
    pub train: FrocCurve,
    pub test: FrocCurve,
    pub summary: Summary,
    pub n_views: usize,
}

impl MatrixCell {
    pub fn name(&self) -> String {
        format!("{}-{}", self.mode, self.variant.as_str())
    }
}

/// Every {mode} × {ORIG, AUG} cell of the configured matrix. ORIG cells
/// use a single untransformed view per candidate for training and testing.
pub fn run_mode_matrix(cfg: &ExperimentConfig, out: Option<&Path>, opts: &RunOptions) -> Result<Vec<MatrixCell>> {
    use crate::config::Variant;
    cfg.validate()?;
    let patients = prepare_cohort(cfg)?;
    let mut cells = Vec::new();
    let run_opts = RunOptions { score_train: true, ..opts.clone() };
    for &mode in &cfg.mode_matrix.modes {
        for &variant in &cfg.mode_matrix.variants {
            let base = SamplerConfig { mode, ..cfg.sampler.clone() };
            let sampler = match variant {
                Variant::Orig => base.original(),
                Variant::Aug => base,
            };
            let network = cfg.mode_matrix.network_for(mode).unwrap_or(&cfg.network);
            let name = format!("{}-{}", mode, variant.as_str());
            log::info!("mode matrix cell {name}: {} views per candidate", sampler.n_views());
            let result = run_folds(cfg, &patients, &sampler, network, &run_opts)?;
            let train = result.train.as_ref().expect("train scoring requested");
            let fopts = FrocOptions { min_target_radius_mm: cfg.eval.min_target_radius_mm };
            let train_curve =
                froc(&train.candidates, &train.targets, train.n_patients, ScoreSource::Final, None, fopts)?;
            if let Some(dir) = out {
                let mut cell_cfg = cfg.clone();
                cell_cfg.sampler = SamplerConfig { seed: cfg.sampler.seed, ..sampler.clone() };
                cell_cfg.network = network.clone();
                write_report(&dir.join(&name), &cell_cfg, &result)?;
            }
            cells.push(MatrixCell {
                mode,
                variant,
                train: train_curve,
                test: result.eval.tier2.clone(),
                summary: result.eval.summary.clone(),
                n_views: sampler.n_views(),
            });
        }
    }
    if let Some(dir) = out {
        write_matrix(dir, cfg, &cells)?;
        crate::manifest::write(dir)?;
    }
    Ok(cells)
}

pub fn write_matrix(dir: &Path, cfg: &ExperimentConfig, cells: &[MatrixCell]) -> Result<()> {
    mkdir(dir)?;
    let mut table = String::from("mode,variant,n_views,auc");
    for fp in &cfg.eval.fp_rates {
        table.push_str(&format!(",sens_at_{}fp", fp_key(*fp)));
    }
    table.push('\n');
    for c in cells {
        table.push_str(&format!("{},{},{},{}", c.mode, c.variant.as_str(), c.n_views, c.summary.auc));
        for fp in &cfg.eval.fp_rates {
            table.push_str(&format!(",{}", c.summary.sens_at_fp[&fp_key(*fp)]));
        }
        table.push('\n');
    }
    write_text(&dir.join("matrix.csv"), &table)?;
    let train: Vec<(String, &FrocCurve)> = cells.iter().map(|c| (c.name(), &c.train)).collect();
    let test: Vec<(String, &FrocCurve)> = cells.iter().map(|c| (c.name(), &c.test)).collect();
    svg::write(&dir.join("matrix_train.svg"), &svg::froc_plot("Training FROC", &train, max_fp(cfg)))?;
    svg::write(&dir.join("matrix_test.svg"), &svg::froc_plot("Testing FROC", &test, max_fp(cfg)))
}
