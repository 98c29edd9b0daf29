//! Layer descriptions with forward propagation. Per-sample backpropagation
//! lives in `backprop`.
//!
//! Activations are batch-leading: dense layers carry `P x n`, convolutional
//! and pooling layers `P x H x W x C`. Layer `i` reads `A[i]` and writes
//! `A[i + 1]`; `A[0]` is the network input.

mod arch;
mod backprop;
mod init;
mod loss;

pub use arch::{Arch, LayerDesc};
pub use backprop::{backprop_per_sample, Backprop, PerSampleGrads, WeightGrads};
pub use init::he_init;
pub use loss::{
    accuracy, softmax, softmax_cross_entropy, softmax_cross_entropy_per_sample,
    validate_one_hot,
};

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d_forward, maxpool2d, ArgmaxIndices, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Relu => s.max(0.0),
            Activation::Tanh => s.tanh(),
            Activation::Identity => s,
        }
    }

    /// Derivative at pre-activation `s`; relu'(0) is taken as 0.
    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Activation::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - s.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Validation(format!("unknown activation `{other}`"))),
        }
    }
}

/// `s = a W + b`, weights `n_in x n_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        DenseLayer {
            n_in,
            n_out,
            activation,
            weights: Tensor::zeros(&[n_in, n_out]),
            bias: Tensor::zeros(&[n_out]),
        }
    }
}

/// Valid, stride-1 cross-correlation with kernel `k x e x c_in x c_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub activation: Activation,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn zeros(kernel: (usize, usize), c_in: usize, c_out: usize, activation: Activation) -> Self {
        ConvLayer {
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            c_in,
            c_out,
            activation,
            weights: Tensor::zeros(&[kernel.0, kernel.1, c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense(DenseLayer),
    Conv2d(ConvLayer),
    MaxPool { window: (usize, usize) },
    Flatten,
}

/// Weights and bias of one trainable layer. Also used for gradients and
/// updates of the same shape.
///
/// The flat order is the row-major weight tensor followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(other: &LayerParams) -> Self {
        LayerParams {
            weights: Tensor::zeros(other.weights.shape()),
            bias: Tensor::zeros(other.bias.shape()),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_flat(&self, i: usize) -> f64 {
        let nw = self.weights.len();
        if i < nw {
            self.weights.data()[i]
        } else {
            self.bias.data()[i - nw]
        }
    }

    pub fn set_flat(&mut self, i: usize, v: f64) {
        let nw = self.weights.len();
        if i < nw {
            self.weights.data_mut()[i] = v;
        } else {
            self.bias.data_mut()[i - nw] = v;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weights.data().to_vec();
        v.extend_from_slice(self.bias.data());
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.data().iter().chain(self.bias.data()).copied()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.data_mut().iter_mut().chain(self.bias.data_mut().iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.is_finite()
    }
}

impl LayerSpec {
    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Dense(_) | LayerSpec::Conv2d(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense(_) => "dense",
            LayerSpec::Conv2d(_) => "conv2d",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            LayerSpec::Dense(d) => Some(d.activation),
            LayerSpec::Conv2d(c) => Some(c.activation),
            _ => None,
        }
    }

    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            LayerSpec::Dense(d) => Some((&d.weights, &d.bias)),
            LayerSpec::Conv2d(c) => Some((&c.weights, &c.bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            LayerSpec::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            LayerSpec::Conv2d(c) => Some((&mut c.weights, &mut c.bias)),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().map_or(0, |(w, b)| w.len() + b.len())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            LayerSpec::Dense(d) => {
                if input != [d.n_in] {
                    return Err(format!("dense expects input [{}], got {input:?}", d.n_in));
                }
                Ok(vec![d.n_out])
            }
            LayerSpec::Conv2d(c) => match *input {
                [h, w, ch] if ch == c.c_in && h >= c.kernel_h && w >= c.kernel_w => {
                    Ok(vec![h - c.kernel_h + 1, w - c.kernel_w + 1, c.c_out])
                }
                _ => Err(format!(
                    "conv {}x{} over {} channels cannot read input {input:?}",
                    c.kernel_h, c.kernel_w, c.c_in
                )),
            },
            LayerSpec::MaxPool { window: (wh, ww) } => match *input {
                [h, w, ch] if *wh > 0 && *ww > 0 && h % wh == 0 && w % ww == 0 => {
                    Ok(vec![h / wh, w / ww, ch])
                }
                _ => Err(format!("maxpool {wh}x{ww} does not tile input {input:?}")),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn check_weights(&self) -> std::result::Result<(), String> {
        let expected: (Vec<usize>, Vec<usize>) = match self {
            LayerSpec::Dense(d) => (vec![d.n_in, d.n_out], vec![d.n_out]),
            LayerSpec::Conv2d(c) => (vec![c.kernel_h, c.kernel_w, c.c_in, c.c_out], vec![c.c_out]),
            _ => return Ok(()),
        };
        let (w, b) = self.params().expect("trainable");
        if w.shape() != expected.0.as_slice() || b.shape() != expected.1.as_slice() {
            return Err(format!(
                "weights {:?} / bias {:?} do not match expected {:?} / {:?}",
                w.shape(),
                b.shape(),
                expected.0,
                expected.1
            ));
        }
        if !(w.is_finite() && b.is_finite()) {
            return Err("non-finite weights".into());
        }
        Ok(())
    }

    /// Applies the layer to a batch. Returns the output, the pre-activation
    /// for trainable layers, and argmax indices for pooling.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Option<Tensor>, Option<ArgmaxIndices>)> {
        match self {
            LayerSpec::Dense(d) => {
                let mut s = x.matmul(&d.weights)?;
                for row in s.data_mut().chunks_mut(d.n_out) {
                    for (v, b) in row.iter_mut().zip(d.bias.data()) {
                        *v += b;
                    }
                }
                let a = s.map(|v| d.activation.apply(v));
                Ok((a, Some(s), None))
            }
            LayerSpec::Conv2d(c) => {
                let s = conv2d_forward(x, &c.weights, &c.bias)?;
                let a = s.map(|v| c.activation.apply(v));
                Ok((a, Some(s), None))
            }
            LayerSpec::MaxPool { window } => {
                let (y, idx) = maxpool2d(x, *window)?;
                Ok((y, None, Some(idx)))
            }
            LayerSpec::Flatten => {
                let p = x.batch();
                let rest = x.len() / p;
                Ok((x.clone().reshape(&[p, rest])?, None, None))
            }
        }
    }
}

/// Pre- and post-activations retained for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub(crate) activations: Vec<Option<Tensor>>,
    pub(crate) pre_activations: Vec<Option<Tensor>>,
    pub(crate) pool_indices: Vec<Option<ArgmaxIndices>>,
    batch: usize,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// `A[i]`: the input of layer `i` (`A[0]` is the batch itself).
    pub fn activation(&self, i: usize) -> Option<&Tensor> {
        self.activations.get(i).and_then(Option::as_ref)
    }

    /// `S[i]`: the pre-activation of trainable layer `i`.
    pub fn pre_activation(&self, i: usize) -> Option<&Tensor> {
        self.pre_activations.get(i).and_then(Option::as_ref)
    }

    /// The network output `z`, if not yet released.
    pub fn output(&self) -> Option<&Tensor> {
        self.activations.last().and_then(Option::as_ref)
    }

    pub fn take_output(&mut self) -> Option<Tensor> {
        self.activations.last_mut().and_then(Option::take)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    seed: u64,
}

impl Network {
    /// Validates layer chaining and weights. `input_shape` excludes the batch.
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if !layers.iter().any(LayerSpec::is_trainable) {
            return Err(Error::Validation("network has no trainable layer".into()));
        }
        let mut shape = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            layer
                .check_weights()
                .map_err(|msg| Error::Layer { layer: i, msg })?;
            shape = layer
                .output_shape(&shape)
                .map_err(|msg| Error::Layer { layer: i, msg })?;
        }
        Ok(Network {
            layers,
            input_shape: input_shape.to_vec(),
            seed,
        })
    }

    /// Builds and He-initializes a network from an architecture description.
    ///
    /// Convolutions use relu. A dense layer without an explicit activation
    /// uses relu, except the last layer, which produces logits.
    pub fn from_arch(arch: &Arch, input_shape: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(arch.len());
        let last = arch.len().saturating_sub(1);
        for (i, desc) in arch.layers().iter().enumerate() {
            let bad = |msg: String| Error::Layer { layer: i, msg };
            let spec = match *desc {
                LayerDesc::Conv { filters, kernel } => match *shape.as_slice() {
                    [_, _, c_in] => LayerSpec::Conv2d(ConvLayer::zeros(kernel, c_in, filters, Activation::Relu)),
                    _ => return Err(bad(format!("conv needs an H x W x C input, got {shape:?}"))),
                },
                LayerDesc::MaxPool { window } => LayerSpec::MaxPool { window },
                LayerDesc::Flatten => LayerSpec::Flatten,
                LayerDesc::Dense { units, activation } => match *shape.as_slice() {
                    [n_in] => {
                        let act = activation.unwrap_or(if i == last {
                            Activation::Identity
                        } else {
                            Activation::Relu
                        });
                        LayerSpec::Dense(DenseLayer::zeros(n_in, units, act))
                    }
                    _ => return Err(bad(format!("dense needs a flat input, got {shape:?}; add flatten"))),
                },
            };
            shape = spec.output_shape(&shape).map_err(bad)?;
            layers.push(he_init(spec, &mut rng));
        }
        Network::new(input_shape, layers, seed)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerSpec {
        &self.layers[i]
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers.iter().fold(self.input_shape.clone(), |s, l| {
            l.output_shape(&s).expect("validated at construction")
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Indices of dense and convolutional layers, ascending.
    pub fn trainable_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_trainable())
            .map(|(i, _)| i)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Copy of a trainable layer's parameters.
    pub fn layer_params(&self, i: usize) -> Option<LayerParams> {
        self.layers[i].params().map(|(w, b)| LayerParams {
            weights: w.clone(),
            bias: b.clone(),
        })
    }

    /// `params += scale * delta` for a trainable layer.
    pub fn apply_update(&mut self, i: usize, delta: &LayerParams, scale: f64) -> Result<()> {
        let (w, b) = self.layers[i].params_mut().ok_or_else(|| Error::Layer {
            layer: i,
            msg: "not a trainable layer".into(),
        })?;
        if w.shape() != delta.weights.shape() || b.shape() != delta.bias.shape() {
            return Err(Error::shape("apply_update", w.shape(), delta.weights.shape()));
        }
        for (p, d) in w.data_mut().iter_mut().zip(delta.weights.data()) {
            *p += scale * d;
        }
        for (p, d) in b.data_mut().iter_mut().zip(delta.bias.data()) {
            *p += scale * d;
        }
        Ok(())
    }

    /// Overwrites one trainable layer's parameters.
    pub fn set_layer_params(&mut self, i: usize, params: LayerParams) -> Result<()> {
        let (w, b) = self.layers[i].params_mut().ok_or_else(|| Error::Layer {
            layer: i,
            msg: "not a trainable layer".into(),
        })?;
        if w.shape() != params.weights.shape() || b.shape() != params.bias.shape() {
            return Err(Error::shape("set_layer_params", w.shape(), params.weights.shape()));
        }
        *w = params.weights;
        *b = params.bias;
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() < 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Layer {
                layer: 0,
                msg: format!(
                    "input batch {:?} does not match network input {:?}",
                    x.shape(),
                    self.input_shape
                ),
            });
        }
        Ok(())
    }

    /// Runs the batch forward, keeping every `S[i]` and `A[i]`.
    pub fn forward_prop(&self, x: &Tensor) -> Result<ForwardCache> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        let mut pre_activations = Vec::with_capacity(n);
        let mut pool_indices = Vec::with_capacity(n);
        activations.push(Some(x.clone()));
        for (i, layer) in self.layers.iter().enumerate() {
            let input = activations[i].as_ref().expect("just pushed");
            let (a, s, idx) = layer.forward(input).map_err(|e| Error::Layer {
                layer: i,
                msg: e.to_string(),
            })?;
            activations.push(Some(a));
            pre_activations.push(s);
            pool_indices.push(idx);
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
            pool_indices,
            batch: x.batch(),
        })
    }

    /// Logits only; nothing is cached.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer
                .forward(&a)
                .map_err(|e| Error::Layer {
                    layer: i,
                    msg: e.to_string(),
                })?
                .0;
        }
        Ok(a)
    }
}
