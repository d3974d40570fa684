use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check_input, check_target, squared_error, Learner, LearnerError, ModelParams};
use crate::data::TrainingInstance;
use crate::seed;

/// Linear autoregressor: `y = W x + b` with `W` of shape `O x I`.
///
/// Parameter layout is `W` row-major followed by `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLearner {
    input_len: usize,
    output_len: usize,
}

impl LinearLearner {
    pub fn new(input_len: usize, output_len: usize) -> Self {
        assert!(input_len > 0 && output_len > 0, "linear learner needs I, O >= 1");
        LinearLearner { input_len, output_len }
    }

    fn predict(&self, values: &[f64], input: &[f64]) -> Vec<f64> {
        let (w, b) = values.split_at(self.output_len * self.input_len);
        w.chunks_exact(self.input_len)
            .zip(b)
            .map(|(row, bias)| row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>() + bias)
            .collect()
    }
}

impl Learner for LinearLearner {
    fn arch_tag(&self) -> String {
        format!("linear-i{}-o{}", self.input_len, self.output_len)
    }

    fn input_len(&self) -> usize {
        self.input_len
    }

    fn output_len(&self) -> usize {
        self.output_len
    }

    fn num_params(&self) -> usize {
        self.output_len * self.input_len + self.output_len
    }

    fn init(&self, seed: u64) -> ModelParams {
        let mut rng = seed::rng(seed, &[seed::stream::INIT]);
        let bound = 1.0 / (self.input_len as f64).sqrt();
        let values = (0..self.num_params()).map(|_| rng.gen_range(-bound..bound)).collect();
        ModelParams::new(self.arch_tag(), values)
    }

    fn forward(&self, params: &ModelParams, input: &[f64]) -> Result<Vec<f64>, LearnerError> {
        self.check_params(params)?;
        check_input(self.input_len, input)?;
        Ok(self.predict(&params.values, input))
    }

    fn loss_and_gradient(
        &self,
        params: &ModelParams,
        instance: &TrainingInstance,
        _dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>), LearnerError> {
        self.check_params(params)?;
        check_input(self.input_len, &instance.input)?;
        check_target(self.output_len, &instance.target)?;
        let pred = self.predict(&params.values, &instance.input);
        let loss = squared_error(&pred, &instance.target);
        let scale = 2.0 / self.output_len as f64;
        let dy: Vec<f64> = pred.iter().zip(&instance.target).map(|(p, t)| scale * (p - t)).collect();
        let mut grad = Vec::with_capacity(self.num_params());
        for g in &dy {
            grad.extend(instance.input.iter().map(|x| g * x));
        }
        grad.extend_from_slice(&dy);
        Ok((loss, grad))
    }
}
