use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::data::{DataWindow, MinMaxScaler};
use crate::learner::{Learner, LearnerError, ModelParams};

/// What happened at one collection step `m` of a round.
///
/// `point` is the 1-based position in the global stream of the reading
/// collected at this step. A prediction made at this step covers points
/// `point..point+O-1`; a truth recorded at this step covers
/// `point-O+1..=point`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub m: usize,
    pub point: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_prediction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
}

/// Predict-then-collect over one round's readings.
///
/// At every step the model(s) forecast the next `O` readings from the latest
/// `I` in the window, then the step's reading is appended and, once enough
/// points exist, the latest `O` readings are recorded as a truth instance.
/// Round 1 only collects during its first `I` steps and records truths from
/// step `I + O` on. The window is trimmed once the round's readings are in.
///
/// `incoming` is in raw units; with a scaler the window holds scaled values
/// and predictions and truths are reported back in raw units.
#[allow(clippy::too_many_arguments)]
pub fn predict_round(
    learner: &dyn Learner,
    window: &mut DataWindow,
    model: &ModelParams,
    eval_model: Option<&ModelParams>,
    incoming: &[f64],
    first_point: usize,
    round: usize,
    scaler: Option<&MinMaxScaler>,
) -> Result<Vec<StepRecord>, LearnerError> {
    let (input_len, output_len) = (learner.input_len(), learner.output_len());
    let to_raw = |v: Vec<f64>| match scaler {
        Some(s) => v.into_iter().map(|x| s.unscale(x)).collect(),
        None => v,
    };
    let mut steps = Vec::with_capacity(incoming.len());
    for (idx, &reading) in incoming.iter().enumerate() {
        let m = idx + 1;
        let (prediction, eval_prediction) = if round == 1 && m <= input_len {
            (None, None)
        } else {
            let latest = window.extract_latest(input_len)?;
            let p = learner.forward(model, &latest)?;
            let pe = eval_model.map(|e| learner.forward(e, &latest)).transpose()?;
            (Some(to_raw(p)), pe.map(to_raw))
        };
        window.push(scaler.map_or(reading, |s| s.scale(reading)));
        let truth = if round > 1 || m >= input_len + output_len {
            Some(to_raw(window.extract_latest(output_len)?))
        } else {
            None
        };
        steps.push(StepRecord { m, point: first_point + idx, prediction, eval_prediction, truth });
    }
    window.trim();
    Ok(steps)
}

/// Equal-length lists of one round, paired instance by instance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlignedRound {
    pub predictions: Vec<Vec<f64>>,
    pub eval_predictions: Option<Vec<Vec<f64>>>,
    pub truths: Vec<Vec<f64>>,
}

/// Pairs each prediction with the truth instance covering the same points,
/// i.e. the truth recorded `O - 1` steps later in the same round.
///
/// For rounds after the first this drops the last `O - 1` predictions and
/// the first `O - 1` truths; in round 1 the late-starting truths already line
/// up and only the trailing predictions go.
pub fn align_round(steps: &[StepRecord], output_len: usize) -> AlignedRound {
    let shift = output_len - 1;
    let has_eval = steps.iter().any(|s| s.eval_prediction.is_some());
    let mut out = AlignedRound { eval_predictions: has_eval.then(Vec::new), ..Default::default() };
    for (idx, step) in steps.iter().enumerate() {
        let (Some(p), Some(truth)) = (&step.prediction, steps.get(idx + shift).and_then(|s| s.truth.as_ref())) else {
            continue;
        };
        out.predictions.push(p.clone());
        out.truths.push(truth.clone());
        if let Some(pe) = out.eval_predictions.as_mut() {
            pe.push(step.eval_prediction.clone().unwrap_or_default());
        }
    }
    out
}

/// List-level alignment of a full round: drops the latest `O - 1` entries of
/// both prediction lists and the earliest `O - 1` truths.
pub fn align_for_eval(
    eval_predictions: &[Vec<f64>],
    predictions: &[Vec<f64>],
    truths: &[Vec<f64>],
    output_len: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>), ProtocolError> {
    let n = truths.len();
    if eval_predictions.len() != n || predictions.len() != n {
        return Err(ProtocolError::Alignment(format!(
            "list lengths differ: P_eval={}, P={}, Y={n}",
            eval_predictions.len(),
            predictions.len()
        )));
    }
    if output_len == 0 || n < output_len {
        return Err(ProtocolError::Alignment(format!("{n} instances cannot be aligned for O={output_len}")));
    }
    let shift = output_len - 1;
    Ok((
        eval_predictions[..n - shift].to_vec(),
        predictions[..n - shift].to_vec(),
        truths[shift..].to_vec(),
    ))
}
