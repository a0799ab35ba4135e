use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::net::{Network, Pass};
use super::params::NetworkParams;
use super::spec::TrainSchedule;
use crate::candidates::Label;
use crate::error::{Error, Result};
use crate::rng;
use crate::sampler::Observation;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Mean training loss of each epoch, in order.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch SGD with momentum over the schedule's phases.
///
/// Each epoch visits the examples in a seeded shuffle; each step uses
/// `v ← μ·v − lr·∇`, `θ ← θ + v`. The result is a pure function of the
/// inputs and `schedule.seed`.
pub fn train(
    net: &Network,
    params0: NetworkParams,
    inputs: &[&[f64]],
    labels: &[usize],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::dataset("training set must be non-empty with one label per example"));
    }
    let mut params = params0;
    let mut velocity: Vec<Vec<f64>> =
        params.tensors.iter().map(|t| alloc::vec![0.0; t.weights.len() + t.bias.len()]).collect();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut trace = Vec::with_capacity(schedule.total_epochs());
    let mut step = 0u64;
    let mut batch_x: Vec<&[f64]> = Vec::new();
    let mut batch_y: Vec<usize> = Vec::new();

    for phase in &schedule.phases {
        let lr = schedule.learning_rate * phase.lr_scale;
        for _ in 0..phase.epochs {
            let epoch = trace.len();
            order.shuffle(&mut rng::rng_for(schedule.seed, rng::stream::SHUFFLE, epoch as u64));
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(phase.batch_size) {
                batch_x.clear();
                batch_y.clear();
                batch_x.extend(chunk.iter().map(|&i| inputs[i]));
                batch_y.extend(chunk.iter().map(|&i| labels[i]));
                let mut drop_rng = rng::rng_for(schedule.seed, rng::stream::DROPCONNECT, step);
                let (loss, grads) = net.loss_and_gradients(
                    &params,
                    &batch_x,
                    &batch_y,
                    Pass::Train(&mut drop_rng),
                    schedule.weight_decay,
                )?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch: epoch + 1, loss });
                }
                epoch_loss += loss * chunk.len() as f64;
                for ((pt, g), v) in params.tensors.iter_mut().zip(&grads).zip(&mut velocity) {
                    let values = pt.weights.iter_mut().chain(pt.bias.iter_mut());
                    let grad = g.weights.iter().chain(&g.bias);
                    for ((p, &g), v) in values.zip(grad).zip(v.iter_mut()) {
                        *v = schedule.momentum * *v - lr * g;
                        *p += *v;
                    }
                }
                step += 1;
            }
            let mean = epoch_loss / inputs.len() as f64;
            if !mean.is_finite() || !params.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch + 1, loss: mean });
            }
            log::debug!("epoch {}: loss {mean:.5}", epoch + 1);
            trace.push(mean);
        }
    }
    Ok(TrainOutcome { params, loss_trace: trace })
}

/// Train on labelled observations (positive = class 1).
pub fn train_observations(
    net: &Network,
    params0: NetworkParams,
    observations: &[Observation],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    let inputs: Vec<&[f64]> = observations.iter().map(|o| o.pixels.as_slice()).collect();
    let labels = observations
        .iter()
        .map(|o| match o.label {
            Label::Positive => Ok(1),
            Label::Negative => Ok(0),
            Label::Unlabeled => Err(Error::dataset("training observation without a label")),
        })
        .collect::<Result<Vec<usize>>>()?;
    train(net, params0, &inputs, &labels, schedule)
}
