use super::{apply_all, mean_gradients, StepStats};
use crate::error::{Error, Result};
use crate::network::{LayerParams, Network};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Per-step multiplicative decay of the learning rate; 1 disables it.
    pub lr_decay: f64,
    /// Per-step multiplicative decay of epsilon; 1 disables it.
    pub epsilon_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr_decay: 1.0,
            epsilon_decay: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0
            && self.epsilon_decay > 0.0
            && self.epsilon_decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid Adam configuration {self:?}")))
        }
    }
}

/// First and second moment estimates for every trainable layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<(usize, LayerParams)>,
    v: Vec<(usize, LayerParams)>,
    t: u64,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<_> = net
            .trainable_layers()
            .map(|l| (l, LayerParams::zeros_like(&net.layer_params(l).expect("trainable"))))
            .collect();
        Ok(AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[(usize, LayerParams)] {
        &self.m
    }

    pub fn second_moment(&self) -> &[(usize, LayerParams)] {
        &self.v
    }
}

/// One Adam step with bias correction on the batch-mean gradient.
pub fn adam_step(net: &mut Network, x: &Tensor, y: &Tensor, state: &mut AdamState) -> Result<StepStats> {
    let (stats, grads) = mean_gradients(net, x, y)?;
    if grads.len() != state.m.len() || grads.iter().zip(&state.m).any(|((l, g), (ml, m))| l != ml || g.len() != m.len()) {
        return Err(Error::Validation("Adam state does not match the network".into()));
    }
    let c = state.config;
    let t = state.t + 1;
    let decay = (t - 1) as i32;
    let lr = c.learning_rate * c.lr_decay.powi(decay);
    let eps = c.epsilon * c.epsilon_decay.powi(decay);
    let bc1 = 1.0 - c.beta1.powi(t as i32);
    let bc2 = 1.0 - c.beta2.powi(t as i32);

    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut updates = Vec::with_capacity(grads.len());
    for (((l, g), (_, m)), (_, v)) in grads.iter().zip(m.iter_mut()).zip(v.iter_mut()) {
        let mut u = LayerParams::zeros_like(g);
        for (((gi, mi), vi), ui) in g.iter().zip(m.iter_mut()).zip(v.iter_mut()).zip(u.iter_mut()) {
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            *ui = (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
        }
        updates.push((*l, u));
    }
    apply_all(net, &updates, -lr)?;
    state.m = m;
    state.v = v;
    state.t = t;
    Ok(stats)
}

/// `W -= lr * mean gradient`.
pub fn sgd_step(net: &mut Network, x: &Tensor, y: &Tensor, lr: f64) -> Result<StepStats> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Validation(format!("learning rate must be non-negative, got {lr}")));
    }
    let (stats, grads) = mean_gradients(net, x, y)?;
    apply_all(net, &grads, -lr)?;
    Ok(stats)
}
