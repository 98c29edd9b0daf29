//! Per-sample backpropagation.
//!
//! Unlike ordinary backprop, weight gradients are kept for every sample
//! separately; the Fisher blocks need them un-summed. Dense layers keep them
//! factored (`D_W[p] = a[p]^T d_s[p]` is rank one), convolutional layers
//! store them densely.

use super::{ForwardCache, LayerParams, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_bias_grad_per_sample, conv2d_input_grad, conv2d_weight_grad_per_sample, gemm,
    maxpool2d_backward, Tensor,
};

#[derive(Clone, Debug)]
pub enum WeightGrads {
    /// `D_W[p] = inputs[p]^T d_pre[p]`, bias gradient `d_pre[p]`.
    Dense { inputs: Tensor },
    /// `kernel` is `P x k x e x C_in x C_out`, `bias` is `P x C_out`.
    Conv { kernel: Tensor, bias: Tensor },
}

/// Gradients of one trainable layer for every sample in the batch.
#[derive(Clone, Debug)]
pub struct PerSampleGrads {
    /// `D_s`: derivative with respect to the pre-activation.
    pub d_pre: Tensor,
    pub weights: WeightGrads,
    /// `D_a` for the layer below; `None` when nothing below needs it.
    pub d_input: Option<Tensor>,
}

impl PerSampleGrads {
    pub fn batch(&self) -> usize {
        self.d_pre.batch()
    }

    pub fn weight_len(&self) -> usize {
        match &self.weights {
            WeightGrads::Dense { inputs } => inputs.shape()[1] * self.d_pre.shape()[1],
            WeightGrads::Conv { kernel, .. } => kernel.len() / kernel.batch(),
        }
    }

    pub fn bias_len(&self) -> usize {
        match &self.weights {
            WeightGrads::Dense { .. } => self.d_pre.shape()[1],
            WeightGrads::Conv { bias, .. } => bias.shape()[1],
        }
    }

    /// Parameter count of the layer (weights plus bias).
    pub fn param_count(&self) -> usize {
        self.weight_len() + self.bias_len()
    }

    /// Sample `p`'s gradient at flat parameter index `flat` (row-major
    /// weights, then bias).
    #[inline]
    pub fn entry(&self, p: usize, flat: usize) -> f64 {
        let nw = self.weight_len();
        match &self.weights {
            WeightGrads::Dense { inputs } => {
                let n_out = self.d_pre.shape()[1];
                let ds = self.d_pre.sample(p);
                if flat < nw {
                    inputs.sample(p)[flat / n_out] * ds[flat % n_out]
                } else {
                    ds[flat - nw]
                }
            }
            WeightGrads::Conv { kernel, bias } => {
                if flat < nw {
                    kernel.sample(p)[flat]
                } else {
                    bias.sample(p)[flat - nw]
                }
            }
        }
    }

    /// Per-sample gradient vector in flat parameter order.
    pub fn sample_flat(&self, p: usize) -> Vec<f64> {
        (0..self.param_count()).map(|j| self.entry(p, j)).collect()
    }

    /// Per-sample weight gradients materialized as `P x (weight shape)`.
    pub fn materialize_weights(&self) -> Tensor {
        match &self.weights {
            WeightGrads::Dense { inputs } => {
                let (p, n_in, n_out) = (self.batch(), inputs.shape()[1], self.d_pre.shape()[1]);
                Tensor::from_fn(&[p, n_in, n_out], |i| {
                    let (s, r) = (i / (n_in * n_out), i % (n_in * n_out));
                    inputs.sample(s)[r / n_out] * self.d_pre.sample(s)[r % n_out]
                })
            }
            WeightGrads::Conv { kernel, .. } => kernel.clone(),
        }
    }

    /// Batch average of the per-sample gradients.
    pub fn mean(&self) -> LayerParams {
        let p = self.batch();
        let inv = 1.0 / p as f64;
        match &self.weights {
            WeightGrads::Dense { inputs } => {
                let (n_in, n_out) = (inputs.shape()[1], self.d_pre.shape()[1]);
                let mut w = vec![0.0; n_in * n_out];
                gemm(n_in, p, n_out, inputs.data(), true, self.d_pre.data(), false, &mut w, false);
                let mut b = vec![0.0; n_out];
                for row in self.d_pre.data().chunks(n_out) {
                    b.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                }
                LayerParams {
                    weights: Tensor::from_vec(&[n_in, n_out], w).expect("shape").scale(inv),
                    bias: Tensor::from_vec(&[n_out], b).expect("shape").scale(inv),
                }
            }
            WeightGrads::Conv { kernel, bias } => {
                let avg = |t: &Tensor| {
                    let n = t.len() / p;
                    let mut acc = vec![0.0; n];
                    for s in 0..p {
                        acc.iter_mut().zip(t.sample(s)).for_each(|(a, v)| *a += v);
                    }
                    Tensor::from_vec(&t.shape()[1..], acc).expect("shape").scale(inv)
                };
                LayerParams {
                    weights: avg(kernel),
                    bias: avg(bias),
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_pre.is_finite()
            && match &self.weights {
                WeightGrads::Dense { inputs } => inputs.is_finite(),
                WeightGrads::Conv { kernel, bias } => kernel.is_finite() && bias.is_finite(),
            }
    }
}

/// Walks the layers from the output down, yielding each trainable layer's
/// per-sample gradients. Cache entries are released as soon as they are used.
pub struct Backprop<'a> {
    net: &'a Network,
    cache: ForwardCache,
    d_a: Option<Tensor>,
    next: usize,
    lowest_trainable: usize,
}

/// Starts backpropagation from `d_out`, the derivative with respect to the
/// network output.
pub fn backprop_per_sample<'a>(net: &'a Network, mut cache: ForwardCache, d_out: Tensor) -> Result<Backprop<'a>> {
    let n = net.layers().len();
    if cache.activations.len() != n + 1 || cache.pre_activations.len() != n {
        return Err(Error::Validation("forward cache does not belong to this network".into()));
    }
    let out_shape = cache
        .output()
        .map(|t| t.shape().to_vec())
        .unwrap_or_else(|| std::iter::once(cache.batch()).chain(net.output_shape()).collect());
    if d_out.shape() != out_shape.as_slice() || d_out.batch() != cache.batch() {
        return Err(Error::Validation(format!(
            "upstream gradient {:?} does not match cached output {:?}",
            d_out.shape(),
            out_shape
        )));
    }
    // The logits are not needed again.
    cache.take_output();
    Ok(Backprop {
        net,
        cache,
        d_a: Some(d_out),
        next: n,
        lowest_trainable: net.trainable_layers().next().expect("validated network"),
    })
}

impl Backprop<'_> {
    fn missing(layer: usize, what: &str) -> Error {
        Error::Validation(format!("forward cache is missing {what} for layer {layer}"))
    }

    fn step(&mut self, i: usize) -> Result<Option<PerSampleGrads>> {
        let d_a = self.d_a.take().expect("upstream gradient present");
        let need_input_grad = i > self.lowest_trainable;
        let layer = self.net.layer(i);
        let input = self.cache.activations[i].take();
        match layer {
            LayerSpec::Flatten => {
                let input = input.ok_or_else(|| Self::missing(i, "its input"))?;
                self.d_a = Some(d_a.reshape(input.shape())?);
                Ok(None)
            }
            LayerSpec::MaxPool { .. } => {
                let idx = self.cache.pool_indices[i]
                    .take()
                    .ok_or_else(|| Self::missing(i, "pooling indices"))?;
                self.d_a = Some(maxpool2d_backward(&d_a, &idx)?);
                Ok(None)
            }
            LayerSpec::Dense(_) | LayerSpec::Conv2d(_) => {
                let input = input.ok_or_else(|| Self::missing(i, "its input"))?;
                let s = self.cache.pre_activations[i]
                    .take()
                    .ok_or_else(|| Self::missing(i, "its pre-activation"))?;
                let act = layer.activation().expect("trainable");
                let d_pre = d_a.zip_map(&s, |g, s| g * act.derivative(s))?;
                drop(s);
                let (weights, d_input) = match layer {
                    LayerSpec::Dense(d) => {
                        let d_input = if need_input_grad {
                            let p = d_pre.batch();
                            let mut g = vec![0.0; p * d.n_in];
                            gemm(p, d.n_out, d.n_in, d_pre.data(), false, d.weights.data(), true, &mut g, false);
                            Some(Tensor::from_vec(&[p, d.n_in], g)?)
                        } else {
                            None
                        };
                        (WeightGrads::Dense { inputs: input }, d_input)
                    }
                    LayerSpec::Conv2d(c) => {
                        let kernel = conv2d_weight_grad_per_sample(&input, &d_pre)?;
                        let bias = conv2d_bias_grad_per_sample(&d_pre)?;
                        drop(input);
                        let d_input = if need_input_grad {
                            Some(conv2d_input_grad(&d_pre, &c.weights)?)
                        } else {
                            None
                        };
                        (WeightGrads::Conv { kernel, bias }, d_input)
                    }
                    _ => unreachable!(),
                };
                self.d_a = d_input.clone();
                Ok(Some(PerSampleGrads {
                    d_pre,
                    weights,
                    d_input,
                }))
            }
        }
    }
}

impl Iterator for Backprop<'_> {
    type Item = Result<(usize, PerSampleGrads)>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.next > 0 && self.d_a.is_some() {
            self.next -= 1;
            let i = self.next;
            match self.step(i) {
                Ok(Some(grads)) => return Some(Ok((i, grads))),
                Ok(None) => continue,
                Err(e) => {
                    self.next = 0;
                    return Some(Err(Error::Layer {
                        layer: i,
                        msg: e.to_string(),
                    }));
                }
            }
        }
        None
    }
}
