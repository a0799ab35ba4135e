use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

/// Convolution followed by ReLU and an optional max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: Option<PoolSpec>,
}

/// Convolution-shaped layer without weight sharing (stride 1), then ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalSpec {
    pub filters: usize,
    pub kernel: usize,
    #[serde(default)]
    pub padding: usize,
}

/// How DropConnect layers behave at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropInference {
    /// Scale weights by the keep probability.
    #[default]
    MeanField,
    /// Average the softmax over `samples` seeded random masks.
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Observation shape `[channels, depth, height, width]`. Depth > 1
    /// selects volumetric kernels and pooling.
    pub input: [usize; 4],
    pub conv: Vec<ConvSpec>,
    pub locally_connected: Vec<LocalSpec>,
    /// Hidden fully-connected widths; the 2-way classifier is appended.
    pub fully_connected: Vec<usize>,
    pub n_classes: usize,
    pub dropconnect_rate: f64,
    #[serde(default)]
    pub dropconnect_inference: DropInference,
    pub init_sigma: f64,
    /// Train on random `crop_px` crops, test on the centre crop.
    #[serde(default)]
    pub crop_px: Option<usize>,
}

impl NetworkSpec {
    /// Two conv/pool stages, two locally-connected layers, one hidden
    /// fully-connected layer and a softmax, at the default widths.
    pub fn standard(input: [usize; 4]) -> Self {
        let pool = Some(PoolSpec { window: 3, stride: 2 });
        NetworkSpec {
            input,
            conv: alloc::vec![
                ConvSpec { filters: 64, kernel: 5, stride: 1, padding: 2, pool },
                ConvSpec { filters: 64, kernel: 5, stride: 1, padding: 2, pool },
            ],
            locally_connected: alloc::vec![
                LocalSpec { filters: 32, kernel: 3, padding: 0 },
                LocalSpec { filters: 32, kernel: 3, padding: 0 },
            ],
            fully_connected: alloc::vec![256],
            n_classes: 2,
            dropconnect_rate: 0.5,
            dropconnect_inference: DropInference::MeanField,
            init_sigma: 0.01,
            crop_px: None,
        }
    }

    pub fn is_volumetric(&self) -> bool {
        self.input[1] > 1
    }

    /// Shape actually fed to the first layer (after cropping).
    pub fn effective_input(&self) -> [usize; 4] {
        match self.crop_px {
            None => self.input,
            Some(c) => {
                let d = if self.is_volumetric() { c } else { 1 };
                [self.input[0], d, c, c]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes != 2 {
            return Err(Error::arg("n_classes must be 2"));
        }
        if self.input.contains(&0) {
            return Err(Error::arg("network input dims must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropconnect_rate) {
            return Err(Error::arg("dropconnect_rate must lie in [0, 1)"));
        }
        if !(self.init_sigma >= 0.0) || !self.init_sigma.is_finite() {
            return Err(Error::arg("init_sigma must be >= 0"));
        }
        if let Some(c) = self.crop_px {
            let vol_ok = !self.is_volumetric() || c <= self.input[1];
            if c == 0 || c > self.input[2] || c > self.input[3] || !vol_ok {
                return Err(Error::arg("crop_px must fit inside the input"));
            }
        }
        if let DropInference::Sampled { samples: 0, .. } = self.dropconnect_inference {
            return Err(Error::arg("sampled DropConnect inference needs samples >= 1"));
        }
        if self.conv.iter().any(|c| c.filters == 0 || c.kernel == 0 || c.stride == 0)
            || self.locally_connected.iter().any(|l| l.filters == 0 || l.kernel == 0)
            || self.fully_connected.contains(&0)
            || self.conv.iter().filter_map(|c| c.pool).any(|p| p.window == 0 || p.stride == 0)
        {
            return Err(Error::arg("layer sizes must be >= 1"));
        }
        super::layers::Plan::build(self).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplier on the base learning rate during this phase.
    #[serde(default = "one")]
    pub lr_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Phase {
    pub const fn new(epochs: usize, batch_size: usize) -> Self {
        Phase { epochs, batch_size, lr_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub phases: Vec<Phase>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainSchedule {
    /// 700-300-100-100 epochs on batches of 64-64-32-16.
    fn default() -> Self {
        TrainSchedule {
            phases: alloc::vec![Phase::new(700, 64), Phase::new(300, 64), Phase::new(100, 32), Phase::new(100, 16)],
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    /// Divide every phase's epoch count by `factor` (at least one epoch).
    pub fn scaled(mut self, factor: usize) -> Self {
        for p in &mut self.phases {
            p.epochs = (p.epochs / factor.max(1)).max(1);
        }
        self
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::arg("schedule needs at least one phase"));
        }
        if self.phases.iter().any(|p| p.epochs == 0 || p.batch_size == 0) {
            return Err(Error::arg("phase epochs and batch sizes must be >= 1"));
        }
        if self.phases.iter().any(|p| !(p.lr_scale >= 0.0) || !p.lr_scale.is_finite()) {
            return Err(Error::arg("phase lr_scale must be >= 0"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg("learning_rate must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::arg("weight_decay must be >= 0"));
        }
        Ok(())
    }
}
