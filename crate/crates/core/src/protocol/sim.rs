use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    align_round, predict_round, CandidateScope, DeviceState, InitialFavorites, ModelTag, ProtocolConfig,
    ProtocolError, SimParams, StepRecord,
};
use crate::data::DataWindow;
use crate::geo::{form_cfn, DeviceId, SensorRegistry};
use crate::learner::{fedavg, train_local, Learner, LearnerError, ModelParams, RmsProp};
use crate::metrics::{self, RoundPairs};
use crate::seed;

/// Starting models, `A^0`.
#[derive(Clone, Debug)]
pub enum InitialModels {
    /// Every device starts from the same model.
    Shared(ModelParams),
    /// One model per device, e.g. from pretraining.
    PerDevice(BTreeMap<DeviceId, ModelParams>),
}

/// Log record of one device in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceRound {
    pub round: usize,
    pub device: DeviceId,
    pub steps: Vec<StepRecord>,
    /// Aligned MSE of the `A` predictions.
    pub error: f64,
    /// Aligned MSE of the `A_eval` predictions, when a candidate was on trial.
    pub eval_error: Option<f64>,
    pub evaluated: Option<DeviceId>,
    pub chosen: ModelTag,
    pub added: Option<DeviceId>,
    pub removed: Option<DeviceId>,
    /// Candidate picked for trial next round.
    pub selected: Option<DeviceId>,
    /// Favorite neighbors at the end of the round.
    pub favorites: Vec<DeviceId>,
}

impl DeviceRound {
    pub fn predictions(&self) -> Vec<Vec<f64>> {
        self.steps.iter().filter_map(|s| s.prediction.clone()).collect()
    }

    pub fn truths(&self) -> Vec<Vec<f64>> {
        self.steps.iter().filter_map(|s| s.truth.clone()).collect()
    }

    /// Aligned `A` predictions and truths for scoring.
    pub fn pairs(&self, output_len: usize) -> RoundPairs {
        let a = align_round(&self.steps, output_len);
        RoundPairs { round: self.round, predictions: a.predictions, truths: a.truths }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub devices: Vec<DeviceRound>,
}

struct LocalOutcome {
    steps: Vec<StepRecord>,
    error: f64,
    eval_error: Option<f64>,
    evaluated: Option<DeviceId>,
    added: Option<DeviceId>,
    chosen: ModelTag,
    local: ModelParams,
}

/// Round-synchronous simulation over a fixed set of devices.
pub struct Simulation {
    learner: Arc<dyn Learner>,
    params: SimParams,
    protocol: ProtocolConfig,
    devices: Vec<DeviceState>,
    streams: Vec<Vec<f64>>,
    index: HashMap<DeviceId, usize>,
    round: usize,
    consumed: usize,
    parallel: bool,
}

impl Simulation {
    /// Devices are taken from `registry` in its order; every device needs a
    /// stream (raw readings, one per step).
    pub fn new(
        learner: Arc<dyn Learner>,
        params: SimParams,
        registry: &SensorRegistry,
        streams: &HashMap<DeviceId, Vec<f64>>,
        initial: InitialModels,
    ) -> Result<Self, ProtocolError> {
        params.validate()?;
        if learner.input_len() != params.input_len || learner.output_len() != params.output_len {
            return Err(ProtocolError::Config(format!(
                "learner shape I={}, O={} differs from configured I={}, O={}",
                learner.input_len(),
                learner.output_len(),
                params.input_len,
                params.output_len
            )));
        }
        let protocol = params.protocol();
        let radius = match protocol.scope {
            CandidateScope::Radius => params.radius_km,
            CandidateScope::Everyone => f64::INFINITY,
        };
        let mut devices = Vec::with_capacity(registry.len());
        let mut device_streams = Vec::with_capacity(registry.len());
        for id in registry.ids() {
            let stream = streams.get(id).ok_or_else(|| ProtocolError::MissingStream(id.clone()))?;
            let model = match &initial {
                InitialModels::Shared(m) => m.clone(),
                InitialModels::PerDevice(map) => map.get(id).cloned().ok_or_else(|| ProtocolError::MissingModel(id.clone()))?,
            };
            learner
                .check_params(&model)
                .map_err(|source| ProtocolError::Learner { device: id.clone(), round: 0, source })?;
            let cfn = form_cfn(id, registry, radius)?;
            let mut state = DeviceState::new(
                id.clone(),
                cfn,
                DataWindow::new(params.max_data_size),
                model,
                RmsProp::new(params.optimizer, learner.num_params()),
            );
            if protocol.initial_favorites == InitialFavorites::AllCandidates {
                let all: Vec<DeviceId> = state.cfn.ids().cloned().collect();
                state.set_favorites(all);
            }
            devices.push(state);
            device_streams.push(stream.clone());
        }
        let index = devices.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        Ok(Simulation {
            learner,
            params,
            protocol,
            devices,
            streams: device_streams,
            index,
            round: 0,
            consumed: 0,
            parallel: true,
        })
    }

    /// Runs devices on the rayon pool (default) or one after another. Both
    /// give identical results.
    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn protocol(&self) -> ProtocolConfig {
        self.protocol
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn device(&self, id: &DeviceId) -> Option<&DeviceState> {
        self.index.get(id).map(|&i| &self.devices[i])
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn run(&mut self, rounds: usize) -> Result<Vec<RoundLog>, ProtocolError> {
        (0..rounds).map(|_| self.run_round()).collect()
    }

    pub fn run_round(&mut self) -> Result<RoundLog, ProtocolError> {
        let j = self.round + 1;
        let tau = self.params.tau(j);
        let start = self.consumed;
        if let Some(short) = self.streams.iter().find(|s| s.len() < start + tau) {
            return Err(ProtocolError::StreamExhausted { round: j, needed: tau, available: short.len() - start.min(short.len()) });
        }

        let learner = self.learner.as_ref();
        let params = &self.params;
        let dynamic = self.protocol.dynamic;
        let streams = &self.streams;

        let local_step = |(idx, dev): (usize, &mut DeviceState)| -> Result<LocalOutcome, ProtocolError> {
            let incoming = &streams[idx][start..start + tau];
            local_round(learner, params, dynamic, idx, dev, incoming, start + 1, j)
        };
        let outcomes: Vec<LocalOutcome> = if self.parallel {
            self.devices.par_iter_mut().enumerate().map(local_step).collect::<Result<_, _>>()?
        } else {
            self.devices.iter_mut().enumerate().map(local_step).collect::<Result<_, _>>()?
        };

        // Barrier: every local model of round j is published.
        let locals: Vec<&ModelParams> = outcomes.iter().map(|o| &o.local).collect();
        let index = &self.index;
        let aggregate_step = |(idx, dev): (usize, &mut DeviceState)| -> Result<(Option<DeviceId>, Option<DeviceId>), ProtocolError> {
            aggregate_round(params, dynamic, idx, dev, &locals, index, j)
        };
        let changes: Vec<(Option<DeviceId>, Option<DeviceId>)> = if self.parallel {
            self.devices.par_iter_mut().enumerate().map(aggregate_step).collect::<Result<_, _>>()?
        } else {
            self.devices.iter_mut().enumerate().map(aggregate_step).collect::<Result<_, _>>()?
        };

        let devices = outcomes
            .into_iter()
            .zip(changes)
            .zip(&self.devices)
            .map(|((o, (removed, selected)), dev)| DeviceRound {
                round: j,
                device: dev.id.clone(),
                steps: o.steps,
                error: o.error,
                eval_error: o.eval_error,
                evaluated: o.evaluated,
                chosen: o.chosen,
                added: o.added,
                removed,
                selected,
                favorites: dev.favorites.clone(),
            })
            .collect();
        self.round = j;
        self.consumed += tau;
        Ok(RoundLog { round: j, devices })
    }
}

/// Predict, evaluate and train for one device.
#[allow(clippy::too_many_arguments)]
fn local_round(
    learner: &dyn Learner,
    params: &SimParams,
    dynamic: bool,
    idx: usize,
    dev: &mut DeviceState,
    incoming: &[f64],
    first_point: usize,
    j: usize,
) -> Result<LocalOutcome, ProtocolError> {
    let output_len = params.output_len;
    let learner_err = |device: &DeviceId, source: LearnerError| ProtocolError::Learner { device: device.clone(), round: j, source };
    let metric_err = |device: &DeviceId, source| ProtocolError::Metric { device: device.clone(), round: j, source };

    let trial = if dynamic { dev.pending_eval.clone().zip(dev.eval_model.clone()) } else { None };
    let steps = predict_round(
        learner,
        &mut dev.window,
        &dev.model,
        trial.as_ref().map(|(_, m)| m),
        incoming,
        first_point,
        j,
        params.normalization.as_ref(),
    )
    .map_err(|e| learner_err(&dev.id, e))?;

    let aligned = align_round(&steps, output_len);
    let error = metrics::mse(&aligned.predictions, &aligned.truths).map_err(|e| metric_err(&dev.id, e))?;
    dev.record_error(j, error)?;

    let mut eval_error = None;
    let mut added = None;
    let mut chosen = ModelTag::A;
    let mut evaluated = None;
    let mut start_model = dev.model.clone();
    if let Some((candidate, eval_model)) = trial {
        let eval_predictions = aligned.eval_predictions.as_deref().unwrap_or_default();
        let e_eval = metrics::mse(eval_predictions, &aligned.truths).map_err(|e| metric_err(&dev.id, e))?;
        let outcome = dev.apply_evaluation(&candidate, e_eval, error, j);
        eval_error = Some(e_eval);
        chosen = outcome.chosen;
        if outcome.admitted {
            added = Some(candidate.clone());
            start_model = eval_model;
        }
        evaluated = Some(candidate);
    }
    dev.pending_eval = None;
    dev.eval_model = None;

    if params.reset_optimizer {
        dev.optimizer.reset();
    }
    let mut dropout = seed::rng(params.seed, &[seed::stream::DROPOUT, idx as u64, j as u64]);
    let local = train_local(learner, &start_model, &dev.window, params.epochs, &mut dev.optimizer, &mut dropout)
        .map_err(|e| learner_err(&dev.id, e))?;
    Ok(LocalOutcome { steps, error, eval_error, evaluated, added, chosen, local })
}

/// Averages the given devices' local models in ascending id order.
fn aggregate_members<'a>(
    members: impl Iterator<Item = &'a DeviceId>,
    locals: &[&ModelParams],
    index: &HashMap<DeviceId, usize>,
) -> Result<ModelParams, LearnerError> {
    let mut ids: Vec<&DeviceId> = members.collect();
    ids.sort();
    ids.dedup();
    let models: Vec<&ModelParams> = ids.iter().map(|id| locals[index[*id]]).collect();
    fedavg(&models)
}

/// Aggregation, removal and selection for one device after the barrier.
fn aggregate_round(
    params: &SimParams,
    dynamic: bool,
    idx: usize,
    dev: &mut DeviceState,
    locals: &[&ModelParams],
    index: &HashMap<DeviceId, usize>,
    j: usize,
) -> Result<(Option<DeviceId>, Option<DeviceId>), ProtocolError> {
    let learner_err = |source| ProtocolError::Learner { device: dev.id.clone(), round: j, source };
    debug_assert_eq!(index[&dev.id], idx);
    let model = aggregate_members(std::iter::once(&dev.id).chain(&dev.favorites), locals, index).map_err(learner_err)?;
    dev.model = model;

    if !dynamic {
        return Ok((None, None));
    }
    let removed = dev.maybe_remove(params.nu, j, params.removal);
    let selected = dev.select_candidate(j);
    if let Some(candidate) = &selected {
        let members = std::iter::once(&dev.id).chain(&dev.favorites).chain(std::iter::once(candidate));
        let eval_model = aggregate_members(members, locals, index)
            .map_err(|source| ProtocolError::Learner { device: dev.id.clone(), round: j, source })?;
        dev.eval_model = Some(eval_model);
        dev.pending_eval = Some(candidate.clone());
    }
    Ok((removed, selected))
}
