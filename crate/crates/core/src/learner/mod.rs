//! Online learners, RMSProp, local training and FedAvg.
//!
//! A learner maps a flat parameter vector plus `I` readings to `O`
//! predictions. Parameters travel between devices as [`ModelParams`]; the
//! learner itself only describes the architecture and is shared read-only.

mod linear;
mod lstm;

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, DataWindow, TrainingInstance};

pub use linear::LinearLearner;
pub use lstm::LstmLearner;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("architecture mismatch: expected `{expected}`, got `{found}`")]
    Arch { expected: String, found: String },
    #[error("expected {expected} parameters, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("expected an input of {expected} readings, got {found}")]
    InputShape { expected: usize, found: usize },
    #[error("expected a target of {expected} readings, got {found}")]
    TargetShape { expected: usize, found: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, instance {instance}")]
    NonFiniteLoss { loss: f64, epoch: usize, instance: usize },
    #[error("non-finite parameter at index {index} after training step")]
    NonFiniteParams { index: usize },
    #[error("cannot aggregate an empty list of models")]
    EmptyAggregation,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Flat parameter vector tagged with the architecture that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch_tag: String,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch_tag: impl Into<String>, values: Vec<f64>) -> Self {
        ModelParams { arch_tag: arch_tag.into(), values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

/// A forecasting model family with a fixed architecture.
pub trait Learner: Send + Sync {
    fn arch_tag(&self) -> String;

    /// Readings consumed per prediction (`I`).
    fn input_len(&self) -> usize;

    /// Readings predicted per call (`O`).
    fn output_len(&self) -> usize;

    fn num_params(&self) -> usize;

    /// Deterministic initial parameters for `seed`.
    fn init(&self, seed: u64) -> ModelParams;

    /// Inference-mode prediction of the next `O` readings.
    fn forward(&self, params: &ModelParams, input: &[f64]) -> Result<Vec<f64>, LearnerError>;

    /// Mean squared error of one instance and its gradient. With `dropout`
    /// set, the learner samples its train-time dropout masks from it;
    /// with `None` the pass is deterministic.
    fn loss_and_gradient(
        &self,
        params: &ModelParams,
        instance: &TrainingInstance,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>), LearnerError>;

    /// Gradient of the inference-mode loss.
    fn loss_gradient(&self, params: &ModelParams, instance: &TrainingInstance) -> Result<Vec<f64>, LearnerError> {
        self.loss_and_gradient(params, instance, None).map(|(_, g)| g)
    }

    /// Inference-mode loss.
    fn loss(&self, params: &ModelParams, instance: &TrainingInstance) -> Result<f64, LearnerError> {
        check_target(self.output_len(), &instance.target)?;
        let pred = self.forward(params, &instance.input)?;
        Ok(squared_error(&pred, &instance.target))
    }

    fn check_params(&self, params: &ModelParams) -> Result<(), LearnerError> {
        let expected = self.arch_tag();
        if params.arch_tag != expected {
            return Err(LearnerError::Arch { expected, found: params.arch_tag.clone() });
        }
        if params.values.len() != self.num_params() {
            return Err(LearnerError::ParamCount { expected: self.num_params(), found: params.values.len() });
        }
        Ok(())
    }
}

pub(crate) fn check_input(expected: usize, input: &[f64]) -> Result<(), LearnerError> {
    if input.len() != expected {
        return Err(LearnerError::InputShape { expected, found: input.len() });
    }
    Ok(())
}

pub(crate) fn check_target(expected: usize, target: &[f64]) -> Result<(), LearnerError> {
    if target.len() != expected {
        return Err(LearnerError::TargetShape { expected, found: target.len() });
    }
    Ok(())
}

/// Mean of the per-step squared differences.
pub(crate) fn squared_error(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig { learning_rate: 1e-3, rho: 0.9, epsilon: 1e-8 }
    }
}

/// RMSProp with a per-parameter running average of squared gradients:
/// `v = rho * v + (1 - rho) * g^2`, `theta -= lr * g / (sqrt(v) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    accum: Vec<f64>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, num_params: usize) -> Self {
        RmsProp { config, accum: vec![0.0; num_params] }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accum
    }

    pub fn reset(&mut self) {
        self.accum.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let RmsPropConfig { learning_rate, rho, epsilon } = self.config;
        for ((p, g), v) in params.iter_mut().zip(grad).zip(self.accum.iter_mut()) {
            *v = rho * *v + (1.0 - rho) * g * g;
            *p -= learning_rate * g / (v.sqrt() + epsilon);
        }
    }
}

/// Trains a copy of `params` on every instance of `window`, in order, for
/// `epochs` passes with batch size 1. Windows shorter than `I + O` leave the
/// parameters untouched.
pub fn train_local(
    learner: &dyn Learner,
    params: &ModelParams,
    window: &DataWindow,
    epochs: usize,
    optimizer: &mut RmsProp,
    dropout: &mut ChaCha8Rng,
) -> Result<ModelParams, LearnerError> {
    learner.check_params(params)?;
    let (input_len, output_len) = (learner.input_len(), learner.output_len());
    let mut local = params.clone();
    if window.len() < input_len + output_len {
        return Ok(local);
    }
    let n = window.num_instances(input_len, output_len);
    for epoch in 0..epochs {
        for k in 1..=n {
            let instance = window.extract_instance(k, input_len, output_len)?;
            let (loss, grad) = learner.loss_and_gradient(&local, &instance, Some(&mut *dropout))?;
            if !loss.is_finite() {
                return Err(LearnerError::NonFiniteLoss { loss, epoch: epoch + 1, instance: k });
            }
            optimizer.step(&mut local.values, &grad);
            if let Some(index) = local.first_non_finite() {
                return Err(LearnerError::NonFiniteParams { index });
            }
        }
    }
    Ok(local)
}

/// Unweighted elementwise mean, accumulated in the order given.
///
/// Uses a running mean so a single model and copies of one model come back
/// bit-for-bit unchanged.
pub fn fedavg(models: &[&ModelParams]) -> Result<ModelParams, LearnerError> {
    let (first, rest) = models.split_first().ok_or(LearnerError::EmptyAggregation)?;
    let mut mean = (*first).clone();
    for (i, m) in rest.iter().enumerate() {
        if m.arch_tag != mean.arch_tag {
            return Err(LearnerError::Arch { expected: mean.arch_tag.clone(), found: m.arch_tag.clone() });
        }
        if m.values.len() != mean.values.len() {
            return Err(LearnerError::ParamCount { expected: mean.values.len(), found: m.values.len() });
        }
        let count = (i + 2) as f64;
        for (acc, v) in mean.values.iter_mut().zip(&m.values) {
            *acc += (v - *acc) / count;
        }
    }
    Ok(mean)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    arch_tag: String,
    values: Vec<f64>,
}

const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<W: Write>(params: &ModelParams, writer: W) -> Result<(), LearnerError> {
    let ckpt = Checkpoint { version: CHECKPOINT_VERSION, arch_tag: params.arch_tag.clone(), values: params.values.clone() };
    serde_json::to_writer(writer, &ckpt).map_err(|e| LearnerError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint<R: Read>(reader: R) -> Result<ModelParams, LearnerError> {
    let ckpt: Checkpoint = serde_json::from_reader(reader).map_err(|e| LearnerError::Checkpoint(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(LearnerError::Checkpoint(format!("unsupported version {}", ckpt.version)));
    }
    let params = ModelParams::new(ckpt.arch_tag, ckpt.values);
    if let Some(index) = params.first_non_finite() {
        return Err(LearnerError::NonFiniteParams { index });
    }
    Ok(params)
}
