use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check_input, check_target, squared_error, Learner, LearnerError, ModelParams};
use crate::data::TrainingInstance;
use crate::seed;

/// Stacked single-direction LSTM over the `I` scalar readings (one per time
/// step), followed by dropout on the last step's top hidden state and a
/// dense layer to `O` outputs.
///
/// Parameter layout, per layer: `W` of shape `4H x (n_in + H)` row-major with
/// gate blocks `[input, forget, candidate, output]`, then the `4H` bias.
/// After the layers: dense weights `O x H` row-major, then `O` biases.
/// Hidden and cell state start at zero for every instance.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLearner {
    input_len: usize,
    output_len: usize,
    hidden: usize,
    layers: usize,
    dropout: f64,
}

struct StepCache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmLearner {
    /// Two layers of 128 units with dropout 0.2.
    pub fn standard(input_len: usize, output_len: usize) -> Self {
        Self::new(input_len, output_len, 128, 2, 0.2)
    }

    pub fn new(input_len: usize, output_len: usize, hidden: usize, layers: usize, dropout: f64) -> Self {
        assert!(input_len > 0 && output_len > 0 && hidden > 0 && layers > 0, "LSTM dimensions must be positive");
        assert!((0.0..1.0).contains(&dropout), "dropout must be in [0, 1)");
        LstmLearner { input_len, output_len, hidden, layers, dropout }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    fn layer_in(&self, layer: usize) -> usize {
        if layer == 0 { 1 } else { self.hidden }
    }

    fn layer_size(&self, layer: usize) -> usize {
        4 * self.hidden * (self.layer_in(layer) + self.hidden) + 4 * self.hidden
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.layer_size(l)).sum()
    }

    fn dense_offset(&self) -> usize {
        self.layer_offset(self.layers)
    }

    /// Runs all layers, returning per-layer step caches and the top hidden
    /// state of the last step.
    fn run_layers(&self, values: &[f64], input: &[f64]) -> (Vec<Vec<StepCache>>, Vec<f64>) {
        let h = self.hidden;
        let mut seq: Vec<Vec<f64>> = input.iter().map(|&x| vec![x]).collect();
        let mut caches = Vec::with_capacity(self.layers);
        for layer in 0..self.layers {
            let n_in = self.layer_in(layer);
            let cols = n_in + h;
            let off = self.layer_offset(layer);
            let w = &values[off..off + 4 * h * cols];
            let b = &values[off + 4 * h * cols..off + self.layer_size(layer)];
            let mut h_prev = vec![0.0; h];
            let mut c_prev = vec![0.0; h];
            let mut steps = Vec::with_capacity(seq.len());
            let mut outputs = Vec::with_capacity(seq.len());
            for u in &seq {
                let mut xh = Vec::with_capacity(cols);
                xh.extend_from_slice(u);
                xh.extend_from_slice(&h_prev);
                let z: Vec<f64> = w
                    .chunks_exact(cols)
                    .zip(b)
                    .map(|(row, bias)| row.iter().zip(&xh).map(|(a, x)| a * x).sum::<f64>() + bias)
                    .collect();
                let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
                let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
                let g: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
                let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
                let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
                let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
                let h_new: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
                steps.push(StepCache { xh, i, f, g, o, c_prev: std::mem::replace(&mut c_prev, c), tanh_c });
                outputs.push(h_new.clone());
                h_prev = h_new;
            }
            caches.push(steps);
            seq = outputs;
        }
        (caches, seq.pop().unwrap_or_else(|| vec![0.0; h]))
    }

    fn dense(&self, values: &[f64], features: &[f64]) -> Vec<f64> {
        let off = self.dense_offset();
        let h = self.hidden;
        let w = &values[off..off + self.output_len * h];
        let b = &values[off + self.output_len * h..];
        w.chunks_exact(h)
            .zip(b)
            .map(|(row, bias)| row.iter().zip(features).map(|(a, x)| a * x).sum::<f64>() + bias)
            .collect()
    }
}

impl Learner for LstmLearner {
    fn arch_tag(&self) -> String {
        format!("lstm-i{}-h{}x{}-o{}", self.input_len, self.hidden, self.layers, self.output_len)
    }

    fn input_len(&self) -> usize {
        self.input_len
    }

    fn output_len(&self) -> usize {
        self.output_len
    }

    fn num_params(&self) -> usize {
        self.dense_offset() + self.output_len * self.hidden + self.output_len
    }

    fn init(&self, seed: u64) -> ModelParams {
        let mut rng = seed::rng(seed, &[seed::stream::INIT]);
        let bound = 1.0 / (self.hidden as f64).sqrt();
        let values = (0..self.num_params()).map(|_| rng.gen_range(-bound..bound)).collect();
        ModelParams::new(self.arch_tag(), values)
    }

    fn forward(&self, params: &ModelParams, input: &[f64]) -> Result<Vec<f64>, LearnerError> {
        self.check_params(params)?;
        check_input(self.input_len, input)?;
        let (_, top) = self.run_layers(&params.values, input);
        Ok(self.dense(&params.values, &top))
    }

    fn loss_and_gradient(
        &self,
        params: &ModelParams,
        instance: &TrainingInstance,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>), LearnerError> {
        self.check_params(params)?;
        check_input(self.input_len, &instance.input)?;
        check_target(self.output_len, &instance.target)?;
        let values = &params.values;
        let h = self.hidden;

        let (caches, top) = self.run_layers(values, &instance.input);
        let mask: Vec<f64> = match dropout {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                (0..h).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
            }
            _ => vec![1.0; h],
        };
        let features: Vec<f64> = top.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let pred = self.dense(values, &features);
        let loss = squared_error(&pred, &instance.target);

        let mut grad = vec![0.0; values.len()];
        let scale = 2.0 / self.output_len as f64;
        let dy: Vec<f64> = pred.iter().zip(&instance.target).map(|(p, t)| scale * (p - t)).collect();

        let off = self.dense_offset();
        let dense_w = &values[off..off + self.output_len * h];
        let mut d_top = vec![0.0; h];
        for (k, g) in dy.iter().enumerate() {
            for j in 0..h {
                grad[off + k * h + j] = g * features[j];
                d_top[j] += g * dense_w[k * h + j];
            }
            grad[off + self.output_len * h + k] = *g;
        }
        for (d, m) in d_top.iter_mut().zip(&mask) {
            *d *= m;
        }

        // Gradient w.r.t. each step's hidden output, arriving from above.
        let steps = self.input_len;
        let mut dh_ext = vec![vec![0.0; h]; steps];
        dh_ext[steps - 1] = d_top;

        for layer in (0..self.layers).rev() {
            let n_in = self.layer_in(layer);
            let cols = n_in + h;
            let loff = self.layer_offset(layer);
            let w = &values[loff..loff + 4 * h * cols];
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut d_inputs = vec![vec![0.0; n_in]; steps];
            for t in (0..steps).rev() {
                let s = &caches[layer][t];
                let mut dz = vec![0.0; 4 * h];
                for k in 0..h {
                    let dh = dh_ext[t][k] + dh_next[k];
                    let d_o = dh * s.tanh_c[k];
                    let dc = dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[k];
                    let di = dc * s.g[k];
                    let dg = dc * s.i[k];
                    let df = dc * s.c_prev[k];
                    dc_next[k] = dc * s.f[k];
                    dz[k] = di * s.i[k] * (1.0 - s.i[k]);
                    dz[h + k] = df * s.f[k] * (1.0 - s.f[k]);
                    dz[2 * h + k] = dg * (1.0 - s.g[k] * s.g[k]);
                    dz[3 * h + k] = d_o * s.o[k] * (1.0 - s.o[k]);
                }
                let mut dxh = vec![0.0; cols];
                for (r, dzr) in dz.iter().enumerate() {
                    if *dzr == 0.0 {
                        continue;
                    }
                    let row = &w[r * cols..(r + 1) * cols];
                    let grow = &mut grad[loff + r * cols..loff + (r + 1) * cols];
                    for c in 0..cols {
                        grow[c] += dzr * s.xh[c];
                        dxh[c] += dzr * row[c];
                    }
                    grad[loff + 4 * h * cols + r] += dzr;
                }
                d_inputs[t].copy_from_slice(&dxh[..n_in]);
                dh_next.copy_from_slice(&dxh[n_in..]);
            }
            dh_ext = d_inputs;
        }
        Ok((loss, grad))
    }
}
