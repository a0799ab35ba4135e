use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use super::layers::Plan;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::rng;

/// Weights and biases of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamTensor {
    fn zeros(n_weights: usize, n_bias: usize) -> Self {
        ParamTensor { weights: alloc::vec![0.0; n_weights], bias: alloc::vec![0.0; n_bias] }
    }
}

/// All learnable parameters, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub tensors: Vec<ParamTensor>,
}

pub type Gradients = Vec<ParamTensor>;

/// `(weights, bias)` sizes of every parametric layer of `spec`.
pub fn param_shapes(spec: &NetworkSpec) -> Result<Vec<(usize, usize)>> {
    Ok(Plan::build(spec)?.layers.iter().filter_map(|l| l.param_shape()).collect())
}

pub(crate) fn zeros_like(tensors: &[ParamTensor]) -> Gradients {
    tensors.iter().map(|t| ParamTensor::zeros(t.weights.len(), t.bias.len())).collect()
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let tensors = param_shapes(spec)?.into_iter().map(|(w, b)| ParamTensor::zeros(w, b)).collect();
        Ok(NetworkParams { spec: spec.clone(), tensors })
    }

    /// Rebuild from stored tensors, checking every shape against the spec.
    pub fn from_tensors(spec: NetworkSpec, tensors: Vec<ParamTensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = param_shapes(&spec)?;
        if shapes.len() != tensors.len()
            || shapes.iter().zip(&tensors).any(|(&(w, b), t)| t.weights.len() != w || t.bias.len() != b)
        {
            return Err(Error::input("parameter tensors do not match the network spec"));
        }
        let params = NetworkParams { spec, tensors };
        if !params.is_finite() {
            return Err(Error::input("parameters contain non-finite values"));
        }
        Ok(params)
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.weights.len() + t.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.weights.iter().chain(&t.bias).all(|v| v.is_finite()))
    }

    /// Every parameter value, weights before biases, layer by layer.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.weights.iter_mut().chain(t.bias.iter_mut()))
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.weights.iter().chain(t.bias.iter()))
    }
}

/// Gaussian weights with standard deviation `spec.init_sigma`, zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(spec)?;
    let normal = Normal::new(0.0, spec.init_sigma).map_err(|e| Error::arg(alloc::format!("init_sigma: {e}")))?;
    let mut rng = rng::rng_for(seed, rng::stream::INIT, 0);
    for t in &mut params.tensors {
        for w in &mut t.weights {
            *w = normal.sample(&mut rng);
        }
    }
    Ok(params)
}
