use std::collections::BTreeMap;

use serde::Serialize;

use super::{align_for_eval, ModelTag, ProtocolError, RemovalPolicy};
use crate::data::DataWindow;
use crate::geo::{CandidateMap, DeviceId};
use crate::learner::{ModelParams, RmsProp};
use crate::metrics::{self, ErrorSeries};

/// Protocol state owned by one device.
#[derive(Clone, Debug)]
pub struct DeviceState {
    pub(crate) id: DeviceId,
    pub(crate) cfn: CandidateMap,
    /// Favorite neighbors in admission order; the tail is the most recent.
    pub(crate) favorites: Vec<DeviceId>,
    pub(crate) rep_book: BTreeMap<DeviceId, f64>,
    pub(crate) last_try_round: BTreeMap<DeviceId, usize>,
    pub(crate) retry_interval: BTreeMap<DeviceId, usize>,
    pub(crate) window: DataWindow,
    pub(crate) model: ModelParams,
    pub(crate) eval_model: Option<ModelParams>,
    pub(crate) pending_eval: Option<DeviceId>,
    pub(crate) errors: ErrorSeries,
    pub(crate) optimizer: RmsProp,
}

/// Outcome of trying a candidate's model for one round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub candidate: DeviceId,
    pub error: f64,
    pub eval_error: f64,
    pub admitted: bool,
    pub chosen: ModelTag,
}

impl DeviceState {
    /// Fresh state: every candidate starts with `last_try_round = 0`,
    /// `retry_interval = 0` and zero reputation.
    pub fn new(id: DeviceId, cfn: CandidateMap, window: DataWindow, model: ModelParams, optimizer: RmsProp) -> Self {
        let zeros = |v| cfn.ids().map(|d| (d.clone(), v)).collect::<BTreeMap<_, _>>();
        DeviceState {
            rep_book: cfn.ids().map(|d| (d.clone(), 0.0)).collect(),
            last_try_round: zeros(0),
            retry_interval: zeros(0),
            id,
            cfn,
            favorites: Vec::new(),
            window,
            model,
            eval_model: None,
            pending_eval: None,
            errors: ErrorSeries::new(),
            optimizer,
        }
    }

    pub fn id(&self) -> &DeviceId {
        &self.id
    }

    pub fn cfn(&self) -> &CandidateMap {
        &self.cfn
    }

    pub fn favorites(&self) -> &[DeviceId] {
        &self.favorites
    }

    pub fn rep_book(&self) -> &BTreeMap<DeviceId, f64> {
        &self.rep_book
    }

    pub fn last_try_round(&self, id: &DeviceId) -> Option<usize> {
        self.last_try_round.get(id).copied()
    }

    pub fn retry_interval(&self, id: &DeviceId) -> Option<usize> {
        self.retry_interval.get(id).copied()
    }

    pub fn window(&self) -> &DataWindow {
        &self.window
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn eval_model(&self) -> Option<&ModelParams> {
        self.eval_model.as_ref()
    }

    pub fn pending_eval(&self) -> Option<&DeviceId> {
        self.pending_eval.as_ref()
    }

    pub fn errors(&self) -> &ErrorSeries {
        &self.errors
    }

    /// Seeds the favorite set directly, e.g. for the static baselines.
    /// Ids outside the candidate map or duplicates are ignored.
    pub fn set_favorites(&mut self, ids: impl IntoIterator<Item = DeviceId>) {
        self.favorites.clear();
        for id in ids {
            if self.cfn.contains(&id) && id != self.id && !self.favorites.contains(&id) {
                self.favorites.push(id);
            }
        }
    }

    /// Puts a candidate on trial, as the selection step would.
    pub fn set_pending_eval(&mut self, id: Option<DeviceId>) {
        self.pending_eval = id;
    }

    /// Records this round's error for the removal trigger.
    pub fn record_error(&mut self, round: usize, error: f64) -> Result<(), ProtocolError> {
        self.errors
            .push(round, error)
            .map_err(|source| ProtocolError::Metric { device: self.id.clone(), round, source })
    }

    /// Nearest candidate outside the favorite set whose back-off has
    /// expired (`last_try_round + retry_interval < round`).
    pub fn select_candidate(&self, round: usize) -> Option<DeviceId> {
        if self.favorites.len() >= self.cfn.len() {
            return None;
        }
        self.cfn
            .ids()
            .filter(|d| !self.favorites.contains(d))
            .find(|d| self.last_try_round[*d] + self.retry_interval[*d] < round)
            .cloned()
    }

    /// Scores a trial from already-aligned errors and updates the books.
    ///
    /// The candidate's reputation gains `error - eval_error`. It joins the
    /// favorites only if `eval_error < error`; otherwise its back-off grows.
    pub fn apply_evaluation(&mut self, candidate: &DeviceId, eval_error: f64, error: f64, round: usize) -> Evaluation {
        *self.rep_book.entry(candidate.clone()).or_insert(0.0) += error - eval_error;
        let admitted = eval_error < error;
        if admitted {
            if !self.favorites.contains(candidate) {
                self.favorites.push(candidate.clone());
            }
        } else {
            self.last_try_round.insert(candidate.clone(), round);
            *self.retry_interval.entry(candidate.clone()).or_insert(0) += 1;
        }
        self.pending_eval = None;
        Evaluation {
            candidate: candidate.clone(),
            error,
            eval_error,
            admitted,
            chosen: if admitted { ModelTag::AEval } else { ModelTag::A },
        }
    }

    /// Aligns a round's prediction lists with its truths (rounds after the
    /// first), scores both and applies the result.
    pub fn evaluate_candidate(
        &mut self,
        candidate: &DeviceId,
        eval_predictions: &[Vec<f64>],
        predictions: &[Vec<f64>],
        truths: &[Vec<f64>],
        output_len: usize,
        round: usize,
    ) -> Result<Evaluation, ProtocolError> {
        let (pe, p, y) = align_for_eval(eval_predictions, predictions, truths, output_len)?;
        let metric = |source| ProtocolError::Metric { device: self.id.clone(), round, source };
        let eval_error = metrics::mse(&pe, &y).map_err(metric)?;
        let error = metrics::mse(&p, &y).map_err(metric)?;
        Ok(self.apply_evaluation(candidate, eval_error, error, round))
    }

    /// Removes the favorite with the lowest reputation; ties go to the
    /// smaller id.
    pub fn remove_by_reputation(&mut self) -> Option<DeviceId> {
        let victim = self
            .favorites
            .iter()
            .min_by(|a, b| {
                let ra = self.rep_book.get(*a).copied().unwrap_or(0.0);
                let rb = self.rep_book.get(*b).copied().unwrap_or(0.0);
                ra.total_cmp(&rb).then_with(|| a.cmp(b))
            })?
            .clone();
        self.favorites.retain(|d| *d != victim);
        Some(victim)
    }

    /// Pops the most recently admitted favorite.
    pub fn remove_last_added(&mut self) -> Option<DeviceId> {
        self.favorites.pop()
    }

    /// Removes one favorite when the last `nu + 1` errors strictly increase,
    /// and backs the removed device off like a failed trial.
    pub fn maybe_remove(&mut self, nu: usize, round: usize, policy: RemovalPolicy) -> Option<DeviceId> {
        let history: Vec<f64> = self.errors.values().collect();
        if round <= nu || !removal_triggered(&history, nu) {
            return None;
        }
        let removed = match policy {
            RemovalPolicy::ByReputation => self.remove_by_reputation(),
            RemovalPolicy::LastAdded => self.remove_last_added(),
        }?;
        self.last_try_round.insert(removed.clone(), round);
        *self.retry_interval.entry(removed.clone()).or_insert(0) += 1;
        Some(removed)
    }
}

/// True when the last `nu + 1` values form a strictly increasing run.
pub fn removal_triggered(history: &[f64], nu: usize) -> bool {
    if nu == 0 || history.len() < nu + 1 {
        return false;
    }
    history[history.len() - nu - 1..].windows(2).all(|w| w[1] > w[0])
}
