//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one forward computation as a flat list of nodes; ids
//! are topologically ordered by construction, so the backward pass is a
//! single reverse sweep. Tapes are single-owner and single-shot: one
//! [`Tape::backward`] call consumes the recording, and a second call is a
//! runtime error.
//!
//! The op set is exactly what the 1D CNN classifier and the counterfactual
//! loss need: conv1d (width-3 kernel, same padding), batchnorm in training
//! and frozen-statistics form, ReLU, width-2 max pooling, global average
//! pooling, linear, inverted dropout, softmax, mean cross-entropy, plus
//! scalar plumbing (select, sum).

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("backward target must be a scalar, node holds {0} elements")]
    NonScalarOutput(usize),
    #[error("tape already consumed by a previous backward pass")]
    Consumed,
    #[error("{op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
}

fn shape_err(op: &'static str, details: String) -> TapeError {
    TapeError::ShapeMismatch { op, details }
}

/// Dense n-dimensional value array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Panics if the buffer length does not match the shape product; shapes
    /// are caller-controlled, so a mismatch is a programming error.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            values.len(),
            "tensor shape {shape:?} needs {numel} values, got {}",
            values.len()
        );
        Self { shape, values }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// The single value of a scalar or one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }
}

/// Handle to one node of a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Per-channel batch statistics produced by a training-mode batchnorm node;
/// the layer folds these into its running estimates.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Biased (1/N) variance — what normalization divides by.
    pub var_biased: Vec<f64>,
    /// Unbiased (1/(N-1)) variance — what running estimates track.
    pub var_unbiased: Vec<f64>,
}

enum Op {
    Leaf,
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    BatchNormTrain {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        // caches for the backward formula
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Frozen-statistics batchnorm: per-channel `y = scale * x + shift` with
    /// scale/shift treated as constants.
    ChannelAffine {
        input: NodeId,
        scale: Vec<f64>,
    },
    Relu {
        input: NodeId,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: NodeId,
        t_len: usize,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Dropout {
        input: NodeId,
        mask: Vec<f64>,
    },
    Softmax {
        input: NodeId,
    },
    CrossEntropyMean {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Select {
        input: NodeId,
        index: usize,
    },
    Sum {
        input: NodeId,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of one backward pass, indexed by the node ids of the consumed
/// tape. Leaves that the output does not depend on hold `None`.
pub struct GradStore {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradStore {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.grads[id.0].take()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.push(Op::Leaf, tensor)
    }

    /// 1D convolution with a width-3 kernel and same-length padding 1.
    /// Input `B x Cin x T`, kernel `Cout x Cin x 3`, bias `Cout`.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TapeError> {
        let x = self.value(input);
        let w = self.value(kernel);
        let b = self.value(bias);
        let (batch, c_in, t_len) = match *x.shape() {
            [batch, c_in, t_len] => (batch, c_in, t_len),
            _ => {
                return Err(shape_err(
                    "conv1d",
                    format!("input must be B x Cin x T, got {:?}", x.shape()),
                ))
            }
        };
        let (c_out, k_in) = match *w.shape() {
            [c_out, k_in, 3] => (c_out, k_in),
            _ => {
                return Err(shape_err(
                    "conv1d",
                    format!("kernel must be Cout x Cin x 3, got {:?}", w.shape()),
                ))
            }
        };
        if k_in != c_in || b.shape() != [c_out] {
            return Err(shape_err(
                "conv1d",
                format!(
                    "kernel {:?} / bias {:?} incompatible with input {:?}",
                    w.shape(),
                    b.shape(),
                    x.shape()
                ),
            ));
        }
        let mut out = vec![0.0; batch * c_out * t_len];
        for bi in 0..batch {
            for co in 0..c_out {
                let out_row = &mut out[(bi * c_out + co) * t_len..][..t_len];
                out_row.fill(b.values()[co]);
                for ci in 0..c_in {
                    let x_row = &x.values()[(bi * c_in + ci) * t_len..][..t_len];
                    let w_row = &w.values()[(co * c_in + ci) * 3..][..3];
                    for (k, &wk) in w_row.iter().enumerate() {
                        if wk == 0.0 {
                            continue;
                        }
                        // out[t] += wk * x[t + k - 1]
                        let (t_lo, t_hi) = conv_range(k, t_len);
                        for t in t_lo..t_hi {
                            out_row[t] += wk * x_row[t + k - 1];
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv1d {
                input,
                kernel,
                bias,
            },
            Tensor::new(vec![batch, c_out, t_len], out),
        ))
    }

    /// Training-mode batch normalization over (batch, time) per channel.
    /// Returns the node plus the batch statistics for running-estimate
    /// updates. `eps` guards the variance.
    pub fn batchnorm_train(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, BnBatchStats), TapeError> {
        let x = self.value(input);
        let (batch, channels, t_len) = match *x.shape() {
            [b, c, t] => (b, c, t),
            _ => {
                return Err(shape_err(
                    "batchnorm",
                    format!("input must be B x C x T, got {:?}", x.shape()),
                ))
            }
        };
        if self.value(gamma).shape() != [channels] || self.value(beta).shape() != [channels] {
            return Err(shape_err(
                "batchnorm",
                format!("gamma/beta must have {channels} channels"),
            ));
        }
        let n = (batch * t_len) as f64;
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for bi in 0..batch {
            for (c, m) in mean.iter_mut().enumerate() {
                let row = &x.values()[(bi * channels + c) * t_len..][..t_len];
                *m += row.iter().sum::<f64>();
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for bi in 0..batch {
            for (c, vc) in var.iter_mut().enumerate() {
                let row = &x.values()[(bi * channels + c) * t_len..][..t_len];
                let m = mean[c];
                *vc += row.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
        }
        for v in var.iter_mut() {
            *v /= n;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        {
            let g = self.value(gamma).values();
            let bt = self.value(beta).values();
            let xv = self.value(input).values();
            for bi in 0..batch {
                for c in 0..channels {
                    let base = (bi * channels + c) * t_len;
                    for t in 0..t_len {
                        let h = (xv[base + t] - mean[c]) * inv_std[c];
                        xhat[base + t] = h;
                        out[base + t] = g[c] * h + bt[c];
                    }
                }
            }
        }
        let var_unbiased = if n > 1.0 {
            var.iter().map(|&v| v * n / (n - 1.0)).collect()
        } else {
            var.clone()
        };
        let stats = BnBatchStats {
            mean,
            var_biased: var,
            var_unbiased,
        };
        let id = self.push(
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            Tensor::new(vec![batch, channels, t_len], out),
        );
        Ok((id, stats))
    }

    /// Frozen per-channel affine `y[b,c,t] = scale[c] * x[b,c,t] + shift[c]`
    /// — inference-mode batchnorm with the statistics folded into constants.
    pub fn channel_affine(
        &mut self,
        input: NodeId,
        scale: Vec<f64>,
        shift: Vec<f64>,
    ) -> Result<NodeId, TapeError> {
        let x = self.value(input);
        let (batch, channels, t_len) = match *x.shape() {
            [b, c, t] => (b, c, t),
            _ => {
                return Err(shape_err(
                    "channel_affine",
                    format!("input must be B x C x T, got {:?}", x.shape()),
                ))
            }
        };
        if scale.len() != channels || shift.len() != channels {
            return Err(shape_err(
                "channel_affine",
                format!("scale/shift must have {channels} channels"),
            ));
        }
        let mut out = vec![0.0; x.numel()];
        for bi in 0..batch {
            for c in 0..channels {
                let base = (bi * channels + c) * t_len;
                for t in 0..t_len {
                    out[base + t] = scale[c] * x.values()[base + t] + shift[c];
                }
            }
        }
        Ok(self.push(
            Op::ChannelAffine { input, scale },
            Tensor::new(vec![batch, channels, t_len], out),
        ))
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let out = x.values().iter().map(|&v| v.max(0.0)).collect();
        let shape = x.shape().to_vec();
        self.push(Op::Relu { input }, Tensor::new(shape, out))
    }

    /// Width-2, stride-2 max pooling along time, floor mode (an odd final
    /// timestep is dropped). Gradient routes to the first maximal element.
    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId, TapeError> {
        let x = self.value(input);
        let (batch, channels, t_len) = match *x.shape() {
            [b, c, t] => (b, c, t),
            _ => {
                return Err(shape_err(
                    "maxpool2",
                    format!("input must be B x C x T, got {:?}", x.shape()),
                ))
            }
        };
        let t_out = t_len / 2;
        if t_out == 0 {
            return Err(shape_err(
                "maxpool2",
                format!("time axis too short to pool: {t_len}"),
            ));
        }
        let mut out = vec![0.0; batch * channels * t_out];
        let mut argmax = vec![0usize; out.len()];
        for bc in 0..batch * channels {
            let row = &x.values()[bc * t_len..][..t_len];
            for i in 0..t_out {
                let (a, b) = (row[2 * i], row[2 * i + 1]);
                let (v, idx) = if a >= b { (a, 2 * i) } else { (b, 2 * i + 1) };
                out[bc * t_out + i] = v;
                argmax[bc * t_out + i] = bc * t_len + idx;
            }
        }
        Ok(self.push(
            Op::MaxPool2 { input, argmax },
            Tensor::new(vec![batch, channels, t_out], out),
        ))
    }

    /// Mean over the time axis: `B x C x T -> B x C`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId, TapeError> {
        let x = self.value(input);
        let (batch, channels, t_len) = match *x.shape() {
            [b, c, t] => (b, c, t),
            _ => {
                return Err(shape_err(
                    "global_avg_pool",
                    format!("input must be B x C x T, got {:?}", x.shape()),
                ))
            }
        };
        let out: Vec<f64> = x
            .values()
            .chunks_exact(t_len)
            .map(|row| row.iter().sum::<f64>() / t_len as f64)
            .collect();
        Ok(self.push(
            Op::GlobalAvgPool { input, t_len },
            Tensor::new(vec![batch, channels], out),
        ))
    }

    /// Fully connected layer: input `B x F`, weight `C x F`, bias `C`.
    pub fn linear(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TapeError> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (batch, features) = match *x.shape() {
            [batch, features] => (batch, features),
            _ => {
                return Err(shape_err(
                    "linear",
                    format!("input must be B x F, got {:?}", x.shape()),
                ))
            }
        };
        let (c_out, f_in) = match *w.shape() {
            [c, f] => (c, f),
            _ => {
                return Err(shape_err(
                    "linear",
                    format!("weight must be C x F, got {:?}", w.shape()),
                ))
            }
        };
        if f_in != features || b.shape() != [c_out] {
            return Err(shape_err(
                "linear",
                format!(
                    "weight {:?} / bias {:?} incompatible with input {:?}",
                    w.shape(),
                    b.shape(),
                    x.shape()
                ),
            ));
        }
        let mut out = vec![0.0; batch * c_out];
        for bi in 0..batch {
            let x_row = &x.values()[bi * features..][..features];
            for c in 0..c_out {
                let w_row = &w.values()[c * features..][..features];
                let dot: f64 = x_row.iter().zip(w_row).map(|(a, b)| a * b).sum();
                out[bi * c_out + c] = dot + b.values()[c];
            }
        }
        Ok(self.push(
            Op::Linear {
                input,
                weight,
                bias,
            },
            Tensor::new(vec![batch, c_out], out),
        ))
    }

    /// Inverted dropout: each element is zeroed with probability `rate`,
    /// survivors are scaled by `1/(1-rate)`. Training-mode only; inference
    /// simply skips the op.
    pub fn dropout<R: Rng>(&mut self, input: NodeId, rate: f64, rng: &mut R) -> NodeId {
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(input).numel())
            .map(|_| if rng.gen_bool(rate) { 0.0 } else { 1.0 / keep })
            .collect();
        self.dropout_with_mask(input, mask)
    }

    /// Dropout with a caller-supplied multiplier mask — the deterministic
    /// core of [`Tape::dropout`], also used by gradient tests that must
    /// rebuild a tape with an identical mask.
    pub fn dropout_with_mask(&mut self, input: NodeId, mask: Vec<f64>) -> NodeId {
        let x = self.value(input);
        assert_eq!(mask.len(), x.numel(), "dropout mask length mismatch");
        let out = x.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = x.shape().to_vec();
        self.push(Op::Dropout { input, mask }, Tensor::new(shape, out))
    }

    /// Row-wise softmax over the last axis of a `B x C` tensor, max-shifted
    /// for overflow safety.
    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId, TapeError> {
        let x = self.value(input);
        let (batch, classes) = match *x.shape() {
            [b, c] => (b, c),
            _ => {
                return Err(shape_err(
                    "softmax",
                    format!("input must be B x C, got {:?}", x.shape()),
                ))
            }
        };
        let mut out = vec![0.0; batch * classes];
        for bi in 0..batch {
            let row = &x.values()[bi * classes..][..classes];
            softmax_row(row, &mut out[bi * classes..][..classes]);
        }
        Ok(self.push(
            Op::Softmax { input },
            Tensor::new(vec![batch, classes], out),
        ))
    }

    /// Mean cross-entropy of logits against integer labels, as one scalar
    /// node: `-(1/B) sum_b log softmax(logits_b)[label_b]`.
    pub fn cross_entropy_mean(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, TapeError> {
        let x = self.value(logits);
        let (batch, classes) = match *x.shape() {
            [b, c] => (b, c),
            _ => {
                return Err(shape_err(
                    "cross_entropy",
                    format!("logits must be B x C, got {:?}", x.shape()),
                ))
            }
        };
        if labels.len() != batch {
            return Err(shape_err(
                "cross_entropy",
                format!("{} labels for a batch of {batch}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(shape_err(
                "cross_entropy",
                format!("label {bad} out of range for {classes} classes"),
            ));
        }
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for bi in 0..batch {
            let row = &x.values()[bi * classes..][..classes];
            let out_row = &mut probs[bi * classes..][..classes];
            let log_z = softmax_row(row, out_row);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // log p = (x - max) - log sum exp(x - max)
            total -= row[labels[bi]] - max - log_z;
        }
        let value = total / batch as f64;
        Ok(self.push(
            Op::CrossEntropyMean {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(value),
        ))
    }

    /// Extract one element (by flat index) as a scalar node.
    pub fn select(&mut self, input: NodeId, index: usize) -> Result<NodeId, TapeError> {
        let x = self.value(input);
        if index >= x.numel() {
            return Err(shape_err(
                "select",
                format!("index {index} out of range for {} elements", x.numel()),
            ));
        }
        let value = x.values()[index];
        Ok(self.push(Op::Select { input, index }, Tensor::scalar(value)))
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total = self.value(input).values().iter().sum();
        self.push(Op::Sum { input }, Tensor::scalar(total))
    }

    /// Reverse sweep from a scalar output; returns the gradient of that
    /// scalar with respect to every node the output depends on. Consumes the
    /// recording: a second call on the same tape is an error.
    pub fn backward(&mut self, output: NodeId) -> Result<GradStore, TapeError> {
        if self.consumed {
            return Err(TapeError::Consumed);
        }
        let out_numel = self.value(output).numel();
        if out_numel != 1 {
            return Err(TapeError::NonScalarOutput(out_numel));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for id in (0..=output.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            self.accumulate(id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        Ok(GradStore { grads })
    }

    /// Propagate `grad` of node `id` into the gradients of its inputs.
    fn accumulate(&self, id: usize, grad: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let ensure = |grads: &mut [Option<Vec<f64>>], node: NodeId, len: usize| {
            grads[node.0].get_or_insert_with(|| vec![0.0; len]);
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                kernel,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*kernel);
                let [batch, c_in, t_len] = *x.shape() else {
                    unreachable!()
                };
                let [c_out, _, _] = *w.shape() else {
                    unreachable!()
                };
                assert!(
                    input.0 != kernel.0 && kernel.0 != bias.0 && input.0 != bias.0,
                    "conv1d arguments must be distinct nodes"
                );
                // take the three buffers out of the store to mutate them together
                let mut dx = grads[input.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; x.numel()]);
                let mut dw = grads[kernel.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; w.numel()]);
                let mut db = grads[bias.0].take().unwrap_or_else(|| vec![0.0; c_out]);
                for bi in 0..batch {
                    for co in 0..c_out {
                        let dy = &grad[(bi * c_out + co) * t_len..][..t_len];
                        db[co] += dy.iter().sum::<f64>();
                        for ci in 0..c_in {
                            let x_row = &x.values()[(bi * c_in + ci) * t_len..][..t_len];
                            let dx_row = &mut dx[(bi * c_in + ci) * t_len..][..t_len];
                            let w_row = &w.values()[(co * c_in + ci) * 3..][..3];
                            let dw_row = &mut dw[(co * c_in + ci) * 3..][..3];
                            for k in 0..3 {
                                let (t_lo, t_hi) = conv_range(k, t_len);
                                let mut acc = 0.0;
                                for t in t_lo..t_hi {
                                    acc += dy[t] * x_row[t + k - 1];
                                    dx_row[t + k - 1] += dy[t] * w_row[k];
                                }
                                dw_row[k] += acc;
                            }
                        }
                    }
                }
                grads[input.0] = Some(dx);
                grads[kernel.0] = Some(dw);
                grads[bias.0] = Some(db);
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let x = self.value(*input);
                let [batch, channels, t_len] = *x.shape() else {
                    unreachable!()
                };
                let n = (batch * t_len) as f64;
                let g = self.value(*gamma).values().to_vec();
                ensure(grads, *input, x.numel());
                ensure(grads, *gamma, channels);
                ensure(grads, *beta, channels);
                // per-channel reductions first
                let mut sum_dy = vec![0.0; channels];
                let mut sum_dy_xhat = vec![0.0; channels];
                for bi in 0..batch {
                    for c in 0..channels {
                        let base = (bi * channels + c) * t_len;
                        for t in 0..t_len {
                            sum_dy[c] += grad[base + t];
                            sum_dy_xhat[c] += grad[base + t] * xhat[base + t];
                        }
                    }
                }
                {
                    let dgamma = grads[gamma.0].as_mut().unwrap();
                    for c in 0..channels {
                        dgamma[c] += sum_dy_xhat[c];
                    }
                }
                {
                    let dbeta = grads[beta.0].as_mut().unwrap();
                    for c in 0..channels {
                        dbeta[c] += sum_dy[c];
                    }
                }
                let dx = grads[input.0].as_mut().unwrap();
                for bi in 0..batch {
                    for c in 0..channels {
                        let base = (bi * channels + c) * t_len;
                        let scale = g[c] * inv_std[c];
                        for t in 0..t_len {
                            dx[base + t] += scale
                                * (grad[base + t]
                                    - sum_dy[c] / n
                                    - xhat[base + t] * sum_dy_xhat[c] / n);
                        }
                    }
                }
            }
            Op::ChannelAffine { input, scale } => {
                let x = self.value(*input);
                let [batch, channels, t_len] = *x.shape() else {
                    unreachable!()
                };
                ensure(grads, *input, x.numel());
                let dx = grads[input.0].as_mut().unwrap();
                for bi in 0..batch {
                    for (c, &s) in scale.iter().enumerate() {
                        let base = (bi * channels + c) * t_len;
                        for t in 0..t_len {
                            dx[base + t] += s * grad[base + t];
                        }
                    }
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                ensure(grads, *input, x.numel());
                let dx = grads[input.0].as_mut().unwrap();
                for (i, &v) in x.values().iter().enumerate() {
                    if v > 0.0 {
                        dx[i] += grad[i];
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let x = self.value(*input);
                ensure(grads, *input, x.numel());
                let dx = grads[input.0].as_mut().unwrap();
                for (i, &src) in argmax.iter().enumerate() {
                    dx[src] += grad[i];
                }
            }
            Op::GlobalAvgPool { input, t_len } => {
                let x = self.value(*input);
                ensure(grads, *input, x.numel());
                let dx = grads[input.0].as_mut().unwrap();
                let scale = 1.0 / *t_len as f64;
                for (bc, &g) in grad.iter().enumerate() {
                    let row = &mut dx[bc * t_len..][..*t_len];
                    for v in row {
                        *v += g * scale;
                    }
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let [batch, features] = *x.shape() else {
                    unreachable!()
                };
                let [c_out, _] = *w.shape() else {
                    unreachable!()
                };
                assert!(
                    input.0 != weight.0 && weight.0 != bias.0 && input.0 != bias.0,
                    "linear arguments must be distinct nodes"
                );
                let mut dx = grads[input.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; x.numel()]);
                let mut dw = grads[weight.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; w.numel()]);
                let mut db = grads[bias.0].take().unwrap_or_else(|| vec![0.0; c_out]);
                for bi in 0..batch {
                    let dy = &grad[bi * c_out..][..c_out];
                    let x_row = &x.values()[bi * features..][..features];
                    let dx_row = &mut dx[bi * features..][..features];
                    for c in 0..c_out {
                        let g = dy[c];
                        if g == 0.0 {
                            continue;
                        }
                        db[c] += g;
                        let w_row = &w.values()[c * features..][..features];
                        let dw_row = &mut dw[c * features..][..features];
                        for f in 0..features {
                            dx_row[f] += g * w_row[f];
                            dw_row[f] += g * x_row[f];
                        }
                    }
                }
                grads[input.0] = Some(dx);
                grads[weight.0] = Some(dw);
                grads[bias.0] = Some(db);
            }
            Op::Dropout { input, mask } => {
                let x = self.value(*input);
                ensure(grads, *input, x.numel());
                let dx = grads[input.0].as_mut().unwrap();
                for i in 0..mask.len() {
                    dx[i] += grad[i] * mask[i];
                }
            }
            Op::Softmax { input } => {
                let y = self.value(NodeId(id));
                let [batch, classes] = *y.shape() else {
                    unreachable!()
                };
                ensure(grads, *input, y.numel());
                let dx = grads[input.0].as_mut().unwrap();
                for bi in 0..batch {
                    let p = &y.values()[bi * classes..][..classes];
                    let dy = &grad[bi * classes..][..classes];
                    let dot: f64 = p.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for c in 0..classes {
                        dx[bi * classes + c] += p[c] * (dy[c] - dot);
                    }
                }
            }
            Op::CrossEntropyMean {
                logits,
                labels,
                probs,
            } => {
                let x = self.value(*logits);
                let [batch, classes] = *x.shape() else {
                    unreachable!()
                };
                ensure(grads, *logits, x.numel());
                let dx = grads[logits.0].as_mut().unwrap();
                let g = grad[0] / batch as f64;
                for bi in 0..batch {
                    for c in 0..classes {
                        let indicator = if c == labels[bi] { 1.0 } else { 0.0 };
                        dx[bi * classes + c] += g * (probs[bi * classes + c] - indicator);
                    }
                }
            }
            Op::Select { input, index } => {
                let x = self.value(*input);
                ensure(grads, *input, x.numel());
                grads[input.0].as_mut().unwrap()[*index] += grad[0];
            }
            Op::Sum { input } => {
                let x = self.value(*input);
                ensure(grads, *input, x.numel());
                let dx = grads[input.0].as_mut().unwrap();
                for v in dx.iter_mut() {
                    *v += grad[0];
                }
            }
        }
    }
}

/// Valid output range for a width-3, padding-1 kernel tap: `out[t]` reads
/// `x[t + k - 1]`, so `t + k - 1` must land in `[0, t_len)`.
fn conv_range(k: usize, t_len: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { t_len - 1 } else { t_len };
    (lo, hi.max(lo))
}

/// Stable softmax of one row into `out`; returns `ln sum exp(row - max)` for
/// reuse by log-prob computations.
fn softmax_row(row: &[f64], out: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln()
}
