//! The 1D CNN classifier: three conv blocks (32, 64, 128 channels) of
//! conv(width 3, same padding) -> batchnorm -> ReLU -> maxpool(2), global
//! average pooling to a 128-feature vector, dropout (training tapes only),
//! and a linear head to class logits. Built entirely on [`crate::tape`].

pub mod adam;
pub mod persist;
pub mod train;

pub use adam::Adam;
pub use persist::{decode_model, encode_model, load_model, save_model, ModelBundle, PersistError};
pub use train::{train, TrainConfig, TrainReport};

use crate::series::TimeSeries;
use crate::tape::{BnBatchStats, NodeId, Tape, TapeError, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Output channels of the three conv blocks, in order.
pub const BLOCK_CHANNELS: [usize; 3] = [32, 64, 128];
/// Feature width entering the linear head (last block's channels).
pub const HEAD_FEATURES: usize = 128;
/// Batchnorm variance guard.
pub const BN_EPS: f64 = 1e-5;
/// Momentum of the running-statistics update: `run = (1-m)*run + m*batch`.
pub const BN_MOMENTUM: f64 = 0.1;
/// Three width-2 poolings need at least this many input timesteps.
pub const MIN_INPUT_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has {found} channels, classifier expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("series length {0} too short: three width-2 poolings need at least {MIN_INPUT_LEN} timesteps")]
    TooShort(usize),
    #[error("batch must contain at least one series")]
    EmptyBatch,
    #[error("batch series must share one shape")]
    MixedShapes,
    #[error("classifier needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    BadDropout(f64),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// One conv block's parameters and batchnorm state.
#[derive(Debug, Clone)]
pub(crate) struct Conv1dBlock {
    pub kernel: Tensor, // out x in x 3
    pub bias: Tensor,   // out
    pub gamma: Tensor,  // out
    pub beta: Tensor,   // out
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl Conv1dBlock {
    fn init<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self {
            kernel: kaiming_uniform(vec![out_channels, in_channels, 3], in_channels * 3, rng),
            bias: Tensor::zeros(vec![out_channels]),
            gamma: Tensor::new(vec![out_channels], vec![1.0; out_channels]),
            beta: Tensor::zeros(vec![out_channels]),
            running_mean: vec![0.0; out_channels],
            running_var: vec![1.0; out_channels],
        }
    }

    /// Fold running statistics into the frozen per-channel affine form.
    fn frozen_affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .gamma
            .values()
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / (v + BN_EPS).sqrt())
            .collect();
        let shift: Vec<f64> = self
            .beta
            .values()
            .iter()
            .zip(self.running_mean.iter().zip(&scale))
            .map(|(b, (m, s))| b - m * s)
            .collect();
        (scale, shift)
    }

    fn update_running(&mut self, stats: &BnBatchStats) {
        for (run, batch) in self.running_mean.iter_mut().zip(&stats.mean) {
            *run = (1.0 - BN_MOMENTUM) * *run + BN_MOMENTUM * batch;
        }
        for (run, batch) in self.running_var.iter_mut().zip(&stats.var_unbiased) {
            *run = (1.0 - BN_MOMENTUM) * *run + BN_MOMENTUM * batch;
        }
    }
}

/// Kaiming-uniform fan-in initialization: `U(-b, b)` with `b = sqrt(6/fan_in)`.
fn kaiming_uniform<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let values = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, values)
}

/// Node handles of one training-mode forward graph.
pub struct TrainGraph {
    pub input: NodeId,
    pub logits: NodeId,
    /// Trainable-parameter leaves in canonical order (per block: kernel,
    /// bias, gamma, beta; then head weight, head bias).
    pub params: Vec<NodeId>,
    /// Batch statistics of each block's batchnorm, for running updates.
    pub bn_stats: Vec<BnBatchStats>,
}

#[derive(Debug, Clone)]
pub struct Classifier {
    blocks: Vec<Conv1dBlock>,
    head_weight: Tensor, // c x 128
    head_bias: Tensor,   // c
    dropout: f64,
    mode: Mode,
    in_channels: usize,
    num_classes: usize,
}

impl Classifier {
    /// Fresh classifier with seeded Kaiming-uniform weights, zero biases,
    /// identity batchnorm. Starts in training mode.
    pub fn new<R: Rng>(
        in_channels: usize,
        num_classes: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if num_classes < 2 {
            return Err(NnError::TooFewClasses(num_classes));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(NnError::BadDropout(dropout));
        }
        if in_channels == 0 {
            return Err(NnError::ChannelMismatch {
                expected: 1,
                found: 0,
            });
        }
        let mut blocks = Vec::with_capacity(BLOCK_CHANNELS.len());
        let mut c_in = in_channels;
        for &c_out in &BLOCK_CHANNELS {
            blocks.push(Conv1dBlock::init(c_in, c_out, rng));
            c_in = c_out;
        }
        Ok(Self {
            blocks,
            head_weight: kaiming_uniform(vec![num_classes, HEAD_FEATURES], HEAD_FEATURES, rng),
            head_bias: Tensor::zeros(vec![num_classes]),
            dropout,
            mode: Mode::Training,
            in_channels,
            num_classes,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Pack equal-shape series into the network's `B x d x T` input layout.
    pub fn batch_from_series(&self, items: &[&TimeSeries]) -> Result<Tensor, NnError> {
        let first = items.first().ok_or(NnError::EmptyBatch)?;
        let (t_len, channels) = first.shape();
        if channels != self.in_channels {
            return Err(NnError::ChannelMismatch {
                expected: self.in_channels,
                found: channels,
            });
        }
        if t_len < MIN_INPUT_LEN {
            return Err(NnError::TooShort(t_len));
        }
        let mut values = Vec::with_capacity(items.len() * channels * t_len);
        for series in items {
            if series.shape() != (t_len, channels) {
                return Err(NnError::MixedShapes);
            }
            for ch in 0..channels {
                for t in 0..t_len {
                    values.push(series.value(t, ch));
                }
            }
        }
        Ok(Tensor::new(vec![items.len(), channels, t_len], values))
    }

    fn check_batch_shape(&self, batch: &Tensor) -> Result<(), NnError> {
        match *batch.shape() {
            [_, d, t] => {
                if d != self.in_channels {
                    Err(NnError::ChannelMismatch {
                        expected: self.in_channels,
                        found: d,
                    })
                } else if t < MIN_INPUT_LEN {
                    Err(NnError::TooShort(t))
                } else {
                    Ok(())
                }
            }
            _ => Err(NnError::MixedShapes),
        }
    }

    /// Inference-mode graph: frozen batchnorm, no dropout. Returns the
    /// softmax probabilities node.
    pub fn forward_infer_tape(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId, NnError> {
        self.check_batch_shape(tape.value(input))?;
        let mut current = input;
        for block in &self.blocks {
            let kernel = tape.leaf(block.kernel.clone());
            let bias = tape.leaf(block.bias.clone());
            current = tape.conv1d(current, kernel, bias)?;
            let (scale, shift) = block.frozen_affine();
            current = tape.channel_affine(current, scale, shift)?;
            current = tape.relu(current);
            current = tape.maxpool2(current)?;
        }
        current = tape.global_avg_pool(current)?;
        let weight = tape.leaf(self.head_weight.clone());
        let bias = tape.leaf(self.head_bias.clone());
        let logits = tape.linear(current, weight, bias)?;
        Ok(tape.softmax(logits)?)
    }

    /// Training-mode graph: batch-statistics batchnorm and, when an RNG is
    /// supplied, inverted dropout between pooling and the head. Returns
    /// logits (the trainer attaches its own loss node).
    pub fn forward_train_tape(
        &self,
        tape: &mut Tape,
        batch: Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TrainGraph, NnError> {
        self.check_batch_shape(&batch)?;
        let input = tape.leaf(batch);
        let mut params = Vec::new();
        let mut bn_stats = Vec::new();
        let mut current = input;
        for block in &self.blocks {
            let kernel = tape.leaf(block.kernel.clone());
            let bias = tape.leaf(block.bias.clone());
            let gamma = tape.leaf(block.gamma.clone());
            let beta = tape.leaf(block.beta.clone());
            params.extend([kernel, bias, gamma, beta]);
            current = tape.conv1d(current, kernel, bias)?;
            let (bn, stats) = tape.batchnorm_train(current, gamma, beta, BN_EPS)?;
            bn_stats.push(stats);
            current = tape.relu(bn);
            current = tape.maxpool2(current)?;
        }
        current = tape.global_avg_pool(current)?;
        if let Some(rng) = dropout_rng {
            if self.dropout > 0.0 {
                current = tape.dropout(current, self.dropout, rng);
            }
        }
        let weight = tape.leaf(self.head_weight.clone());
        let bias = tape.leaf(self.head_bias.clone());
        params.extend([weight, bias]);
        let logits = tape.linear(current, weight, bias)?;
        Ok(TrainGraph {
            input,
            logits,
            params,
            bn_stats,
        })
    }

    /// Class probabilities for a `B x d x T` batch. Batchnorm follows the
    /// classifier's mode; dropout is a trainer-tape concern, so this surface
    /// is deterministic either way.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        let mut tape = Tape::new();
        let probs = match self.mode {
            Mode::Inference => {
                let input = tape.leaf(batch.clone());
                self.forward_infer_tape(&mut tape, input)?
            }
            Mode::Training => {
                let graph = self.forward_train_tape(&mut tape, batch.clone(), None)?;
                tape.softmax(graph.logits)?
            }
        };
        Ok(tape.value(probs).clone())
    }

    /// Probabilities for a slice of series (inference path regardless of
    /// mode — the deployed-classifier view).
    pub fn predict_proba(&self, items: &[&TimeSeries]) -> Result<Tensor, NnError> {
        let batch = self.batch_from_series(items)?;
        let mut tape = Tape::new();
        let input = tape.leaf(batch);
        let probs = self.forward_infer_tape(&mut tape, input)?;
        Ok(tape.value(probs).clone())
    }

    /// Predicted class index of each series (first maximal probability).
    pub fn predict(&self, items: &[&TimeSeries]) -> Result<Vec<usize>, NnError> {
        let probs = self.predict_proba(items)?;
        Ok(probs
            .values()
            .chunks(self.num_classes)
            .map(argmax)
            .collect())
    }

    /// The full class-probability row for one series together with the
    /// gradient of `p_f(target | series)` with respect to the series, as a
    /// `T x d` row-major buffer — the hook the counterfactual optimizer
    /// differentiates through. Always uses the frozen (inference) network.
    pub fn probability_gradient(
        &self,
        series: &TimeSeries,
        target: usize,
    ) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        assert!(target < self.num_classes, "target class out of range");
        let (t_len, channels) = series.shape();
        let batch = self.batch_from_series(&[series])?;
        let mut tape = Tape::new();
        let input = tape.leaf(batch);
        let probs = self.forward_infer_tape(&mut tape, input)?;
        let row = tape.value(probs).values().to_vec();
        let picked = tape.select(probs, target)?;
        let mut grads = tape.backward(picked)?;
        let input_grad = grads
            .take(input)
            .unwrap_or_else(|| vec![0.0; t_len * channels]);
        // d x T layout back to the series' T x d
        let mut grad = vec![0.0; t_len * channels];
        for ch in 0..channels {
            for t in 0..t_len {
                grad[t * channels + ch] = input_grad[ch * t_len + t];
            }
        }
        Ok((row, grad))
    }

    /// Trainable parameters in canonical order.
    pub(crate) fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.extend([&block.kernel, &block.bias, &block.gamma, &block.beta]);
        }
        out.extend([&self.head_weight, &self.head_bias]);
        out
    }

    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for block in &mut self.blocks {
            out.push(&mut block.kernel);
            out.push(&mut block.bias);
            out.push(&mut block.gamma);
            out.push(&mut block.beta);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub(crate) fn blocks(&self) -> &[Conv1dBlock] {
        &self.blocks
    }

    pub(crate) fn head_weight(&self) -> &Tensor {
        &self.head_weight
    }

    pub(crate) fn head_bias(&self) -> &Tensor {
        &self.head_bias
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [Conv1dBlock] {
        &mut self.blocks
    }

    pub(crate) fn from_parts(
        blocks: Vec<Conv1dBlock>,
        head_weight: Tensor,
        head_bias: Tensor,
        dropout: f64,
        in_channels: usize,
        num_classes: usize,
    ) -> Self {
        Self {
            blocks,
            head_weight,
            head_bias,
            dropout,
            mode: Mode::Inference,
            in_channels,
            num_classes,
        }
    }
}

/// Index of the first maximal element.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_classifier(seed: u64) -> Classifier {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Classifier::new(1, 2, 0.2, &mut rng).unwrap()
    }

    fn random_batch(seed: u64, b: usize, d: usize, t: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..b * d * t).map(|_| rng.gen_range(-1.5..1.5)).collect();
        Tensor::new(vec![b, d, t], values)
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let mut clf = tiny_classifier(1);
        clf.set_mode(Mode::Inference);
        let batch = random_batch(2, 3, 1, 16);
        let probs = clf.forward(&batch).unwrap();
        assert_eq!(probs.shape(), &[3, 2]);
        for row in probs.values().chunks(2) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn inference_forward_is_bitwise_deterministic() {
        let mut clf = tiny_classifier(2);
        clf.set_mode(Mode::Inference);
        let batch = random_batch(3, 2, 1, 16);
        let a = clf.forward(&batch).unwrap();
        let b = clf.forward(&batch).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut clf = tiny_classifier(4);
        clf.set_mode(Mode::Inference);
        clf.head_weight = Tensor::zeros(vec![2, HEAD_FEATURES]);
        clf.head_bias = Tensor::zeros(vec![2]);
        let batch = random_batch(5, 4, 1, 16);
        let probs = clf.forward(&batch).unwrap();
        for &p in probs.values() {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn probability_gradient_matches_finite_differences() {
        let mut clf = tiny_classifier(6);
        clf.set_mode(Mode::Inference);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let series = TimeSeries::univariate(values.clone()).unwrap();
        let (probs, grad) = clf.probability_gradient(&series, 1).unwrap();
        let p = probs[1];
        assert!(p > 0.0 && p < 1.0);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let step = 1e-4;
        let mut checked = 0;
        for idx in (0..16).step_by(3) {
            let eval = |delta: f64| {
                let mut v = values.clone();
                v[idx] += delta;
                let s = TimeSeries::univariate(v).unwrap();
                clf.predict_proba(&[&s]).unwrap().values()[1]
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            let denom = grad[idx].abs().max(fd.abs()).max(1e-3);
            assert!(
                (grad[idx] - fd).abs() / denom < 1e-4,
                "idx {idx}: {} vs {fd}",
                grad[idx]
            );
            checked += 1;
        }
        assert!(checked >= 5);
    }

    #[test]
    fn rejects_wrong_channel_count_and_short_series() {
        let clf = tiny_classifier(8);
        let wide = TimeSeries::new(vec![0.0; 32], 16, 2).unwrap();
        assert!(matches!(
            clf.predict_proba(&[&wide]),
            Err(NnError::ChannelMismatch {
                expected: 1,
                found: 2
            })
        ));
        let short = TimeSeries::univariate(vec![0.0; 7]).unwrap();
        assert!(matches!(
            clf.predict_proba(&[&short]),
            Err(NnError::TooShort(7))
        ));
    }

    #[test]
    fn head_logit_shift_does_not_change_argmax() {
        let mut clf = tiny_classifier(9);
        clf.set_mode(Mode::Inference);
        let batch = random_batch(10, 4, 1, 16);
        let before: Vec<usize> = clf
            .forward(&batch)
            .unwrap()
            .values()
            .chunks(2)
            .map(argmax)
            .collect();
        // shift every head bias by the same constant
        for b in clf.head_bias.values_mut() {
            *b += 3.25;
        }
        let after: Vec<usize> = clf
            .forward(&batch)
            .unwrap()
            .values()
            .chunks(2)
            .map(argmax)
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn batch_layout_is_channel_major() {
        let clf = Classifier::new(2, 2, 0.0, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let series = TimeSeries::new(
            (0..16).flat_map(|t| [t as f64, 100.0 + t as f64]).collect(),
            16,
            2,
        )
        .unwrap();
        let batch = clf.batch_from_series(&[&series]).unwrap();
        assert_eq!(batch.shape(), &[1, 2, 16]);
        assert_eq!(batch.values()[0], 0.0); // channel 0 first
        assert_eq!(batch.values()[16], 100.0); // then channel 1
    }
}
