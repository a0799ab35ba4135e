//! Versioned experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use cade_core::candidates::{DetectorConfig, MatchRadius};
use cade_core::convnet::{ConvSpec, DropInference, LocalSpec, NetworkSpec, Phase, PoolSpec, TrainSchedule};
use cade_core::phantom::{PhantomSpec, Range};
use cade_core::sampler::{Mode, SamplerConfig};
use cade_core::volume::windows;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// The only source of randomness; every sub-seed is derived from it.
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub cohort: CohortConfig,
    pub preprocess: PreprocessConfig,
    pub detector: DetectorConfig,
    pub labeling: LabelingConfig,
    pub sampler: SamplerConfig,
    pub network: NetworkConfig,
    pub schedule: TrainSchedule,
    pub eval: EvalConfig,
    pub mode_matrix: MatrixConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub n_patients: usize,
    /// Fraction of patients generated without lesions.
    pub control_fraction: f64,
    pub phantom: PhantomSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub isotropic_mm: f64,
    pub window_hu: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelingConfig {
    pub match_radius: MatchRadius,
    /// Also inject missed targets into test patients' candidate lists.
    pub inject_test: bool,
}

/// Network layout without its input shape, which follows the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub conv: Vec<ConvSpec>,
    pub locally_connected: Vec<LocalSpec>,
    pub fully_connected: Vec<usize>,
    pub dropconnect_rate: f64,
    #[serde(default)]
    pub dropconnect_inference: DropInference,
    pub init_sigma: f64,
    #[serde(default)]
    pub crop_px: Option<usize>,
}

impl NetworkConfig {
    pub fn spec_for(&self, input: [usize; 4]) -> NetworkSpec {
        NetworkSpec {
            input,
            conv: self.conv.clone(),
            locally_connected: self.locally_connected.clone(),
            fully_connected: self.fully_connected.clone(),
            n_classes: 2,
            dropconnect_rate: self.dropconnect_rate,
            dropconnect_inference: self.dropconnect_inference,
            init_sigma: self.init_sigma,
            crop_px: self.crop_px,
        }
    }

    /// The full-size layout: 64-filter 5×5 convolutions with 3/2 pooling,
    /// two 32-filter 3×3 locally-connected layers and 256 hidden units.
    pub fn standard() -> Self {
        let s = NetworkSpec::standard([1, 1, 32, 32]);
        NetworkConfig {
            conv: s.conv,
            locally_connected: s.locally_connected,
            fully_connected: s.fully_connected,
            dropconnect_rate: s.dropconnect_rate,
            dropconnect_inference: s.dropconnect_inference,
            init_sigma: s.init_sigma,
            crop_px: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub k_folds: usize,
    /// Run only the first folds of the split (all when absent).
    #[serde(default)]
    pub max_folds: Option<usize>,
    /// Operating points reported in the summary, FP per patient.
    pub fp_rates: Vec<f64>,
    /// Operating point of the tier-1 vs tier-2 Fisher test.
    pub fisher_fp: f64,
    #[serde(default)]
    pub min_target_radius_mm: f64,
    /// View counts of the N-sweep.
    pub n_values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ORIG")]
    Orig,
    #[serde(rename = "AUG")]
    Aug,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Orig => "ORIG",
            Variant::Aug => "AUG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub modes: Vec<Mode>,
    pub variants: Vec<Variant>,
    /// Per-mode network overrides, e.g. a lighter 3D layout.
    #[serde(default)]
    pub networks: Vec<(Mode, NetworkConfig)>,
}

impl MatrixConfig {
    pub fn network_for(&self, mode: Mode) -> Option<&NetworkConfig> {
        self.networks.iter().find(|(m, _)| *m == mode).map(|(_, n)| n)
    }
}

impl Default for ExperimentConfig {
    /// The desk-scale experiment on the 40-patient phantom cohort.
    fn default() -> Self {
        let pool = Some(PoolSpec { window: 3, stride: 2 });
        let network = NetworkConfig {
            conv: vec![ConvSpec { filters: 12, kernel: 5, stride: 1, padding: 2, pool }],
            locally_connected: vec![LocalSpec { filters: 12, kernel: 3, padding: 1 }],
            fully_connected: vec![48],
            dropconnect_rate: 0.5,
            dropconnect_inference: DropInference::MeanField,
            init_sigma: 0.15,
            crop_px: None,
        };
        let volumetric = NetworkConfig {
            conv: vec![ConvSpec { filters: 8, kernel: 3, stride: 2, padding: 1, pool }],
            locally_connected: vec![LocalSpec { filters: 8, kernel: 3, padding: 1 }],
            ..network.clone()
        };
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 2015,
            output_dir: None,
            cohort: CohortConfig { n_patients: 40, control_fraction: 0.2, phantom: PhantomSpec::default() },
            preprocess: PreprocessConfig { isotropic_mm: 1.0, window_hu: [windows::BONE.0, windows::BONE.1] },
            detector: DetectorConfig::default(),
            labeling: LabelingConfig { match_radius: MatchRadius::TargetRadiusPlus(5.0), inject_test: true },
            sampler: SamplerConfig {
                mode: Mode::TwoHalfD,
                scales_mm: vec![20.0, 24.0, 28.0, 32.0],
                n_translations: 2,
                n_rotations: 2,
                max_translation_mm: 2.0,
                patch_px: 16,
                ..SamplerConfig::default()
            },
            network,
            schedule: TrainSchedule { learning_rate: 0.01, ..TrainSchedule::default().scaled(10) },
            eval: EvalConfig {
                k_folds: 5,
                max_folds: None,
                fp_rates: vec![1.0, 3.0, 6.0],
                fisher_fp: 3.0,
                min_target_radius_mm: 0.0,
                n_values: vec![1, 2, 4, 8, 10, 16],
            },
            mode_matrix: MatrixConfig {
                modes: Mode::ALL.to_vec(),
                variants: vec![Variant::Orig, Variant::Aug],
                networks: vec![(Mode::ThreeD, volumetric)],
            },
        }
    }
}

impl ExperimentConfig {
    /// A four-patient configuration that runs in seconds: one held-out
    /// patient, a 20-epoch schedule and a minimal network.
    pub fn smoke() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.cohort.n_patients = 4;
        cfg.cohort.control_fraction = 0.0;
        cfg.cohort.phantom.dims = [40, 40, 40];
        cfg.cohort.phantom.lesion_count = Range::new(1, 3);
        cfg.cohort.phantom.distractor_count = Range::new(6, 10);
        cfg.sampler.scales_mm = vec![24.0];
        cfg.sampler.n_translations = 2;
        cfg.sampler.n_rotations = 2;
        cfg.sampler.patch_px = 12;
        cfg.network.conv[0].filters = 4;
        cfg.network.locally_connected[0].filters = 4;
        cfg.network.fully_connected = vec![8];
        cfg.schedule.phases = vec![Phase::new(14, 16), Phase::new(6, 8)];
        cfg.eval.k_folds = 4;
        cfg.eval.max_folds = Some(1);
        cfg.eval.n_values = vec![1, 4];
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_json(&text)
    }

    /// Parse and validate; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn network_spec(&self) -> NetworkSpec {
        self.network.spec_for(self.sampler.shape())
    }

    pub fn n_folds_run(&self) -> usize {
        self.eval.max_folds.map_or(self.eval.k_folds, |m| m.min(self.eval.k_folds))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        let core = |field: &str| {
            let field = field.to_string();
            move |e: cade_core::Error| Error::config(field, e)
        };
        self.cohort.phantom.validate().map_err(core("cohort.phantom"))?;
        if self.cohort.n_patients == 0 {
            return Err(Error::config("cohort.n_patients", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.cohort.control_fraction) {
            return Err(Error::config("cohort.control_fraction", "must lie in [0, 1]"));
        }
        if !(self.preprocess.isotropic_mm > 0.0) {
            return Err(Error::config("preprocess.isotropic_mm", "must be > 0"));
        }
        let [lo, hi] = self.preprocess.window_hu;
        if !(lo < hi) {
            return Err(Error::config("preprocess.window_hu", "low must be below high"));
        }
        let d = &self.detector;
        if !(d.threshold > 0.0 && d.threshold < 1.0) {
            return Err(Error::config("detector.threshold", "must lie in (0, 1)"));
        }
        if d.max_candidates == 0 {
            return Err(Error::config("detector.max_candidates", "must be >= 1"));
        }
        self.labeling.match_radius.validate().map_err(core("labeling.match_radius"))?;
        self.sampler.validate().map_err(core("sampler"))?;
        self.network_spec().validate().map_err(core("network"))?;
        self.schedule.validate().map_err(core("schedule"))?;
        let e = &self.eval;
        if e.k_folds < 2 || e.k_folds > self.cohort.n_patients {
            return Err(Error::config("eval.k_folds", "must lie in 2..=n_patients"));
        }
        if e.max_folds == Some(0) {
            return Err(Error::config("eval.max_folds", "must be >= 1"));
        }
        if e.fp_rates.iter().any(|&f| !(f >= 0.0)) {
            return Err(Error::config("eval.fp_rates", "must be >= 0"));
        }
        if !(e.fisher_fp >= 0.0) {
            return Err(Error::config("eval.fisher_fp", "must be >= 0"));
        }
        let n_max = self.sampler.n_views();
        if let Some(&n) = e.n_values.iter().find(|&&n| n == 0 || n > n_max) {
            return Err(Error::config("eval.n_values", format!("N = {n} outside 1..={n_max}")));
        }
        for (i, (mode, net)) in self.mode_matrix.networks.iter().enumerate() {
            net.spec_for(mode.shape(self.sampler.patch_px))
                .validate()
                .map_err(core(&format!("mode_matrix.networks[{i}]")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [ExperimentConfig::default(), ExperimentConfig::smoke()] {
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn errors_name_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::smoke().to_json()).unwrap();
        v["sampler"]["n_rotations"] = serde_json::json!("five");
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("sampler.n_rotations"), "{err}");

        let mut cfg = ExperimentConfig::smoke();
        cfg.eval.n_values = vec![100];
        let err = ExperimentConfig::from_json(&cfg.to_json()).unwrap_err().to_string();
        assert!(err.contains("eval.n_values"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::smoke().to_json()).unwrap();
        v.as_object_mut().unwrap().remove("seed");
        assert!(ExperimentConfig::from_json(&v.to_string()).unwrap_err().to_string().contains("seed"));
    }
}
