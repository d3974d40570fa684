//! Per-device streaming data window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("instance {k} out of range: window of {len} points holds {available} instances (I={input}, O={output})")]
    InstanceOutOfRange { k: usize, len: usize, available: usize, input: usize, output: usize },
    #[error("requested the latest {wanted} points but the window holds {len}")]
    Underflow { wanted: usize, len: usize },
    #[error("invalid normalization bounds [{0}, {1}]")]
    Bounds(f64, f64),
}

/// One supervised example: `input` is `I` consecutive readings and `target`
/// the `O` readings that immediately follow.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInstance {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Number of training instances in a window of `window_len` points.
pub fn num_instances(window_len: usize, input_len: usize, output_len: usize) -> usize {
    (window_len + 1).saturating_sub(input_len + output_len)
}

/// Chronological readings, capped at `max_size` after each trim.
#[derive(Clone, Debug, PartialEq)]
pub struct DataWindow {
    points: VecDeque<f64>,
    max_size: usize,
}

impl DataWindow {
    pub fn new(max_size: usize) -> Self {
        DataWindow { points: VecDeque::with_capacity(max_size), max_size }
    }

    pub fn from_points(points: impl IntoIterator<Item = f64>, max_size: usize) -> Self {
        let mut w = DataWindow { points: points.into_iter().collect(), max_size };
        w.trim();
        w
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.points.iter().copied()
    }

    /// Appends one reading without trimming. Used while a round is still
    /// collecting; call [`DataWindow::trim`] at the end of the round.
    pub fn push(&mut self, x: f64) {
        self.points.push_back(x);
    }

    /// Drops the oldest points until at most `max_size` remain.
    pub fn trim(&mut self) {
        let excess = self.points.len().saturating_sub(self.max_size);
        self.points.drain(..excess);
    }

    /// Appends a round's readings in order, then trims.
    pub fn update_dataset(&mut self, incoming: &[f64]) {
        self.points.extend(incoming.iter().copied());
        self.trim();
    }

    pub fn num_instances(&self, input_len: usize, output_len: usize) -> usize {
        num_instances(self.len(), input_len, output_len)
    }

    /// The `k`-th instance, 1-based: input is points `k..k+I-1`, target is
    /// points `k+I..k+I+O-1`.
    pub fn extract_instance(&self, k: usize, input_len: usize, output_len: usize) -> Result<TrainingInstance, DataError> {
        let available = self.num_instances(input_len, output_len);
        if k == 0 || k > available {
            return Err(DataError::InstanceOutOfRange {
                k,
                len: self.len(),
                available,
                input: input_len,
                output: output_len,
            });
        }
        let start = k - 1;
        let input = self.points.range(start..start + input_len).copied().collect();
        let target = self
            .points
            .range(start + input_len..start + input_len + output_len)
            .copied()
            .collect();
        Ok(TrainingInstance { input, target })
    }

    /// The most recent `n` readings, oldest first.
    pub fn extract_latest(&self, n: usize) -> Result<Vec<f64>, DataError> {
        let len = self.len();
        if n > len {
            return Err(DataError::Underflow { wanted: n, len });
        }
        Ok(self.points.range(len - n..).copied().collect())
    }
}

/// Global min-max scaling to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxScaler {
    pub fn new(lo: f64, hi: f64) -> Result<Self, DataError> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(DataError::Bounds(lo, hi));
        }
        Ok(MinMaxScaler { lo, hi })
    }

    pub fn scale(&self, x: f64) -> f64 {
        (x - self.lo) / (self.hi - self.lo)
    }

    pub fn unscale(&self, x: f64) -> f64 {
        x * (self.hi - self.lo) + self.lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(lo: usize, hi: usize) -> Vec<f64> {
        (lo..=hi).map(|v| v as f64).collect()
    }

    #[test]
    fn update_dataset_trims_oldest() {
        let mut w = DataWindow::new(72);
        w.update_dataset(&seq(1, 24));
        assert_eq!(w.len(), 24);

        let mut w = DataWindow::from_points(seq(1, 72), 72);
        w.update_dataset(&seq(73, 84));
        assert_eq!(w.len(), 72);
        assert_eq!(w.points().collect::<Vec<_>>(), seq(13, 84));

        let mut w = DataWindow::from_points(seq(1, 66), 72);
        w.update_dataset(&seq(67, 78));
        assert_eq!(w.len(), 72);
        assert_eq!(w.points().next(), Some(7.0));
    }

    #[test]
    fn counting_formula() {
        assert_eq!(num_instances(72, 12, 1), 60);
        assert_eq!(num_instances(12, 12, 1), 0);
        assert_eq!(num_instances(13, 12, 1), 1);
        assert_eq!(num_instances(0, 1, 1), 0);
    }

    #[test]
    fn instance_extraction() {
        let w = DataWindow::from_points(seq(1, 72), 72);
        let first = w.extract_instance(1, 12, 1).unwrap();
        assert_eq!(first.input, seq(1, 12));
        assert_eq!(first.target, vec![13.0]);
        let last = w.extract_instance(60, 12, 1).unwrap();
        assert_eq!(last.input, seq(60, 71));
        assert_eq!(last.target, vec![72.0]);
        assert!(matches!(w.extract_instance(61, 12, 1), Err(DataError::InstanceOutOfRange { k: 61, .. })));
        assert!(w.extract_instance(0, 12, 1).is_err());

        let w = DataWindow::from_points(seq(1, 15), 72);
        let inst = w.extract_instance(2, 12, 2).unwrap();
        assert_eq!(inst.input, seq(2, 13));
        assert_eq!(inst.target, vec![14.0, 15.0]);
    }

    #[test]
    fn latest_points() {
        let w = DataWindow::from_points(seq(1, 72), 72);
        assert_eq!(w.extract_latest(12).unwrap(), seq(61, 72));
        assert_eq!(DataWindow::from_points([5.0], 72).extract_latest(1).unwrap(), vec![5.0]);
        assert_eq!(DataWindow::from_points(seq(1, 14), 72).extract_latest(2).unwrap(), vec![13.0, 14.0]);
        assert_eq!(DataWindow::new(4).extract_latest(1), Err(DataError::Underflow { wanted: 1, len: 0 }));
    }

    #[test]
    fn scaler_round_trip() {
        let s = MinMaxScaler::new(0.0, 100.0).unwrap();
        assert_eq!(s.scale(65.0), 0.65);
        assert!((s.unscale(s.scale(63.3)) - 63.3).abs() < 1e-12);
        assert!(MinMaxScaler::new(5.0, 5.0).is_err());
    }

    proptest! {
        #[test]
        fn window_length_is_min_of_total_and_cap(chunks in prop::collection::vec(1usize..30, 0..20), cap in 1usize..100) {
            let mut w = DataWindow::new(cap);
            let mut total = 0usize;
            for n in chunks {
                let batch: Vec<f64> = (total..total + n).map(|v| v as f64).collect();
                w.update_dataset(&batch);
                total += n;
                prop_assert_eq!(w.len(), total.min(cap));
                // only the oldest points are ever dropped
                let expected: Vec<f64> = (total - w.len()..total).map(|v| v as f64).collect();
                prop_assert_eq!(w.points().collect::<Vec<_>>(), expected);
            }
        }

        #[test]
        fn num_instances_matches_enumeration(len in 0usize..=100, i in 1usize..=12, o in 1usize..=12) {
            let brute = (0..len).filter(|&start| start + i + o <= len).count();
            prop_assert_eq!(num_instances(len, i, o), brute);
        }

        #[test]
        fn consecutive_instances_overlap(len in 2usize..=60, i in 1usize..=8, o in 1usize..=4) {
            let w = DataWindow::from_points((0..len).map(|v| v as f64), 100);
            let n = w.num_instances(i, o);
            for k in 1..n {
                let a = w.extract_instance(k, i, o).unwrap();
                let b = w.extract_instance(k + 1, i, o).unwrap();
                let a_all: Vec<f64> = a.input.iter().chain(&a.target).copied().collect();
                let b_all: Vec<f64> = b.input.iter().chain(&b.target).copied().collect();
                prop_assert_eq!(&a_all[1..], &b_all[..i + o - 1]);
            }
        }
    }
}
