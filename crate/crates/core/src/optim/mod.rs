//! Training steps. Component-wise natural gradient lives beside first-order
//! baselines that use only the batch-mean gradient.

mod adam;
mod cwngd;

pub use adam::{adam_step, sgd_step, AdamConfig, AdamState};
pub use cwngd::{cwngd_step, cwngd_updates, CwNgd, CwNgdConfig, SolveRoute};

use crate::error::{Error, Result};
use crate::network::{accuracy, backprop_per_sample, softmax_cross_entropy_per_sample, LayerParams, Network, PerSampleGrads};
use crate::tensor::Tensor;

/// Loss and accuracy of the batch, measured before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Forward pass plus per-sample backprop for a cross-entropy batch.
fn per_sample_gradients(net: &Network, x: &Tensor, y: &Tensor) -> Result<(StepStats, Vec<(usize, PerSampleGrads)>)> {
    if x.batch() != y.batch() {
        return Err(Error::shape("training batch", x.shape(), y.shape()));
    }
    let mut cache = net.forward_prop(x)?;
    let logits = cache.take_output().ok_or_else(|| Error::Internal("empty forward cache".into()))?;
    let (loss, d_out) = softmax_cross_entropy_per_sample(&logits, y)?;
    let stats = StepStats {
        loss,
        accuracy: accuracy(&logits, y)?,
    };
    drop(logits);
    let grads = backprop_per_sample(net, cache, d_out)?.collect::<Result<Vec<_>>>()?;
    Ok((stats, grads))
}

fn mean_gradients(net: &Network, x: &Tensor, y: &Tensor) -> Result<(StepStats, Vec<(usize, LayerParams)>)> {
    let (stats, grads) = per_sample_gradients(net, x, y)?;
    let mut means: Vec<_> = grads.into_iter().map(|(l, g)| (l, g.mean())).collect();
    means.sort_by_key(|(l, _)| *l);
    if means.iter().any(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((stats, means))
}

/// Applies `params += scale * delta` for every layer, all or nothing.
fn apply_all(net: &mut Network, updates: &[(usize, LayerParams)], scale: f64) -> Result<()> {
    if updates.iter().any(|(_, u)| !u.is_finite()) {
        return Err(Error::NonFinite("update"));
    }
    for (l, u) in updates {
        net.apply_update(*l, u, scale)?;
    }
    Ok(())
}
