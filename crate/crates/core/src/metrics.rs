//! Error metrics over logged predictions.
//!
//! Every prediction and truth is an *instance* of `O` readings. The squared
//! error of an instance is the mean of its per-step squared differences, so
//! all values stay in (reading units)^2 whatever the horizon.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{predictions} predictions but {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("instance {index}: prediction has {prediction} steps, truth has {truth}")]
    InstanceShape { index: usize, prediction: usize, truth: usize },
    #[error("no instances to score")]
    Empty,
    #[error("round {round} is not after round {last}")]
    RoundOrder { round: usize, last: usize },
    #[error("error value {0} must be finite and non-negative")]
    InvalidError(f64),
    #[error("no rounds fall in {0:?}")]
    EmptyRange(RangeInclusive<usize>),
    #[error("invalid round partition: {0}")]
    Partition(String),
}

fn per_instance<'a>(
    predictions: &'a [Vec<f64>],
    truths: &'a [Vec<f64>],
) -> Result<impl Iterator<Item = (&'a [f64], &'a [f64])>, MetricError> {
    if predictions.len() != truths.len() {
        return Err(MetricError::LengthMismatch { predictions: predictions.len(), truths: truths.len() });
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    for (index, (p, y)) in predictions.iter().zip(truths).enumerate() {
        if p.len() != y.len() || p.is_empty() {
            return Err(MetricError::InstanceShape { index, prediction: p.len(), truth: y.len() });
        }
    }
    Ok(predictions.iter().zip(truths).map(|(p, y)| (p.as_slice(), y.as_slice())))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Mean over instances of the per-instance mean squared difference.
pub fn mse(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64, MetricError> {
    let pairs = per_instance(predictions, truths)?;
    Ok(mean(pairs.map(|(p, y)| mean(p.iter().zip(y).map(|(a, b)| (a - b) * (a - b))))))
}

pub fn mae(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64, MetricError> {
    let pairs = per_instance(predictions, truths)?;
    Ok(mean(pairs.map(|(p, y)| mean(p.iter().zip(y).map(|(a, b)| (a - b).abs())))))
}

pub fn rmse(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64, MetricError> {
    mse(predictions, truths).map(f64::sqrt)
}

/// Aligned prediction/truth instances of one device in one round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundPairs {
    pub round: usize,
    pub predictions: Vec<Vec<f64>>,
    pub truths: Vec<Vec<f64>>,
}

/// Pools every aligned instance of the rounds in `range`, then scores once.
pub fn pooled_mse(rounds: &[RoundPairs], range: RangeInclusive<usize>) -> Result<f64, MetricError> {
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for r in rounds.iter().filter(|r| range.contains(&r.round)) {
        if r.predictions.len() != r.truths.len() {
            return Err(MetricError::LengthMismatch { predictions: r.predictions.len(), truths: r.truths.len() });
        }
        predictions.extend(r.predictions.iter().cloned());
        truths.extend(r.truths.iter().cloned());
    }
    if predictions.is_empty() {
        return Err(MetricError::EmptyRange(range));
    }
    mse(&predictions, &truths)
}

/// Mean over devices of each device's pooled MSE.
pub fn avg_device_mse(devices: &[Vec<RoundPairs>], range: RangeInclusive<usize>) -> Result<f64, MetricError> {
    if devices.is_empty() {
        return Err(MetricError::Empty);
    }
    let per_device = devices
        .iter()
        .map(|rounds| pooled_mse(rounds, range.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(per_device.into_iter()))
}

/// Splits rounds `1..=total` into a leading range of `first` rounds, then
/// ranges of `width`, with any remainder as a shorter final range.
pub fn round_ranges(total: usize, first: usize, width: usize) -> Result<Vec<RangeInclusive<usize>>, MetricError> {
    if total == 0 || first == 0 || width == 0 {
        return Err(MetricError::Partition(format!("total={total}, first={first}, width={width}")));
    }
    let mut ranges = vec![1..=first.min(total)];
    let mut start = first + 1;
    while start <= total {
        let end = (start + width - 1).min(total);
        ranges.push(start..=end);
        start = end + 1;
    }
    Ok(ranges)
}

/// One pooled MSE per range.
pub fn round_range_mse(rounds: &[RoundPairs], ranges: &[RangeInclusive<usize>]) -> Result<Vec<f64>, MetricError> {
    ranges.iter().map(|r| pooled_mse(rounds, r.clone())).collect()
}

/// Per-round error of one device.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    points: Vec<(usize, f64)>,
}

impl ErrorSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, round: usize, error: f64) -> Result<(), MetricError> {
        if let Some(&(last, _)) = self.points.last() {
            if round <= last {
                return Err(MetricError::RoundOrder { round, last });
            }
        }
        if !(error.is_finite() && error >= 0.0) {
            return Err(MetricError::InvalidError(error));
        }
        self.points.push((round, error));
        Ok(())
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|&(_, e)| e)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vec<Vec<f64>> {
        x.iter().map(|&a| vec![a]).collect()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mse(&v(&[3.0]), &v(&[1.0])).unwrap(), 4.0);
        assert_eq!(mse(&[vec![1.0, 1.0]], &[vec![0.0, 2.0]]).unwrap(), 1.0);
        assert_eq!(mae(&v(&[3.0, 0.0]), &v(&[1.0, 1.0])).unwrap(), 1.5);
        assert_eq!(rmse(&v(&[3.0]), &v(&[1.0])).unwrap(), 2.0);
    }

    #[test]
    fn mse_errors() {
        assert_eq!(mse(&v(&[1.0]), &v(&[1.0, 2.0])), Err(MetricError::LengthMismatch { predictions: 1, truths: 2 }));
        assert_eq!(mse(&[], &[]), Err(MetricError::Empty));
        assert!(matches!(mse(&[vec![1.0, 2.0]], &[vec![1.0]]), Err(MetricError::InstanceShape { .. })));
    }

    fn rounds(errors: &[(usize, f64)]) -> Vec<RoundPairs> {
        // one instance per round whose squared error is `e`
        errors
            .iter()
            .map(|&(round, e)| RoundPairs { round, predictions: vec![vec![e.sqrt()]], truths: vec![vec![0.0]] })
            .collect()
    }

    #[test]
    fn device_average_pools_first() {
        let a = rounds(&[(1, 2.0), (2, 6.0)]);
        let b = rounds(&[(1, 6.0), (2, 6.0)]);
        assert!((pooled_mse(&a, 1..=2).unwrap() - 4.0).abs() < 1e-12);
        assert!((avg_device_mse(&[a.clone(), b], 1..=2).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(avg_device_mse(&[a.clone()], 1..=2).unwrap(), pooled_mse(&a, 1..=2).unwrap());
        let same = rounds(&[(1, 3.0), (2, 3.0)]);
        assert!((avg_device_mse(&[same.clone(), same], 1..=2).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(pooled_mse(&a, 5..=9), Err(MetricError::EmptyRange(_))));
    }

    #[test]
    fn default_partition_of_250_rounds() {
        let ranges = round_ranges(250, 23, 24).unwrap();
        let sizes: Vec<usize> = ranges.iter().map(|r| r.end() - r.start() + 1).collect();
        let mut expected = vec![23];
        expected.extend([24; 9]);
        expected.push(11);
        assert_eq!(sizes, expected);
        assert_eq!(ranges[1], 24..=47);
        assert_eq!(*ranges.last().unwrap(), 240..=250);
        assert_eq!(round_ranges(10, 23, 24).unwrap(), vec![1..=10]);
        assert!(round_ranges(0, 23, 24).is_err());
    }

    #[test]
    fn smoothing_examples() {
        let r = rounds(&[(1, 1.0), (2, 3.0), (3, 5.0)]);
        assert_eq!(round_range_mse(&r, &[1..=3]).unwrap(), vec![pooled_mse(&r, 1..=3).unwrap()]);
        let flat = rounds(&[(1, 2.0), (2, 2.0), (3, 2.0), (4, 2.0)]);
        let s = round_range_mse(&flat, &round_ranges(4, 1, 2).unwrap()).unwrap();
        assert!(s.iter().all(|x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn error_series_invariants() {
        let mut s = ErrorSeries::new();
        s.push(1, 0.5).unwrap();
        assert_eq!(s.push(1, 0.5), Err(MetricError::RoundOrder { round: 1, last: 1 }));
        assert_eq!(s.push(2, -1.0), Err(MetricError::InvalidError(-1.0)));
        assert!(s.push(2, f64::NAN).is_err());
        s.push(3, 0.0).unwrap();
        assert_eq!(s.values().collect::<Vec<_>>(), vec![0.5, 0.0]);
    }

    proptest! {
        #[test]
        fn mse_is_permutation_invariant(pairs in prop::collection::vec((-100i32..100, -100i32..100), 1..40), seed in any::<u64>()) {
            // integer-valued readings keep every partial sum exact
            let p: Vec<Vec<f64>> = pairs.iter().map(|&(a, _)| vec![a as f64]).collect();
            let y: Vec<Vec<f64>> = pairs.iter().map(|&(_, b)| vec![b as f64]).collect();
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            let mut s = seed;
            for i in (1..order.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pp: Vec<Vec<f64>> = order.iter().map(|&i| p[i].clone()).collect();
            let yy: Vec<Vec<f64>> = order.iter().map(|&i| y[i].clone()).collect();
            prop_assert_eq!(mse(&p, &y).unwrap(), mse(&pp, &yy).unwrap());
        }

        #[test]
        fn ranges_tile_the_round_axis(total in 1usize..400, first in 1usize..40, width in 1usize..40) {
            let ranges = round_ranges(total, first, width).unwrap();
            let mut next = 1;
            for r in &ranges {
                prop_assert_eq!(*r.start(), next);
                prop_assert!(r.end() >= r.start());
                next = r.end() + 1;
            }
            prop_assert_eq!(next, total + 1);
        }
    }
}
