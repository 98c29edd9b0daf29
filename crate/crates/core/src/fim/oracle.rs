use crate::error::{Error, Result};
use crate::network::{backprop_per_sample, softmax_cross_entropy_per_sample, Network};
use crate::tensor::Tensor;

/// Largest parameter count the dense oracle accepts.
pub const MAX_ORACLE_PARAMS: usize = 4096;

/// Start of each trainable layer's slice in the concatenated parameter
/// vector, in ascending layer order: `(layer, offset)`.
pub fn param_offsets(net: &Network) -> Vec<(usize, usize)> {
    let mut offset = 0;
    net.trainable_layers()
        .map(|l| {
            let at = offset;
            offset += net.layer(l).param_count();
            (l, at)
        })
        .collect()
}

/// Un-averaged per-sample cross-entropy gradients of every parameter,
/// `P x D`, with layers concatenated as in [`param_offsets`].
pub fn full_gradient_rows(net: &Network, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let d = net.param_count();
    if d > MAX_ORACLE_PARAMS {
        return Err(Error::OracleTooLarge {
            params: d,
            limit: MAX_ORACLE_PARAMS,
        });
    }
    let mut cache = net.forward_prop(x)?;
    let logits = cache.take_output().ok_or_else(|| Error::Internal("empty forward cache".into()))?;
    let (_, d_out) = softmax_cross_entropy_per_sample(&logits, y)?;
    // take_output released the logits, but backprop only reads layer inputs.
    let p = x.batch();
    let offsets = param_offsets(net);
    let mut rows = Tensor::zeros(&[p, d]);
    for item in backprop_per_sample(net, cache, d_out)? {
        let (layer, grads) = item?;
        let (_, off) = offsets.iter().find(|(l, _)| *l == layer).copied().expect("trainable layer");
        for s in 0..p {
            let row = rows.sample_mut(s);
            for j in 0..grads.param_count() {
                row[off + j] = grads.entry(s, j);
            }
        }
    }
    Ok(rows)
}

/// The dense `D x D` Fisher `sum_p g_p^T g_p` over all parameters.
///
/// Only meant for small networks; used to check the component blocks.
pub fn full_fim_oracle(net: &Network, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let rows = full_gradient_rows(net, x, y)?;
    let d = rows.shape()[1];
    let mut f = Tensor::zeros(&[d, d]);
    let out = f.data_mut();
    for s in 0..rows.batch() {
        let g = rows.sample(s);
        for (i, &gi) in g.iter().enumerate() {
            for (o, &gj) in out[i * d..(i + 1) * d].iter_mut().zip(g) {
                *o += gi * gj;
            }
        }
    }
    Ok(f)
}
