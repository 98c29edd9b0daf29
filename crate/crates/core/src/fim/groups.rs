use crate::error::{Error, Result};
use crate::network::LayerSpec;

/// Partition of one layer's flat parameter indices into components.
///
/// Flat order is the row-major weight tensor followed by the bias. Each group
/// lists its bias index first, then its weights in flat order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupIndexMap {
    pub layer: usize,
    groups: Vec<Vec<usize>>,
    param_count: usize,
}

impl GroupIndexMap {
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Every group of a layer has the same size.
    pub fn group_size(&self) -> usize {
        self.groups[0].len()
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }
}

/// Groups by output unit (dense) or output channel (conv).
pub fn make_groups(spec: &LayerSpec, layer: usize) -> Result<GroupIndexMap> {
    let (fan_in, n_out) = match spec {
        LayerSpec::Dense(d) => (d.n_in, d.n_out),
        LayerSpec::Conv2d(c) => (c.kernel_h * c.kernel_w * c.c_in, c.c_out),
        other => {
            return Err(Error::Validation(format!(
                "layer {layer} ({}) has no parameters to group",
                other.kind()
            )))
        }
    };
    // Dense weights are n_in x n_out and conv kernels (k*e*c_in) x c_out in
    // row-major order, so a column is a stride-n_out walk either way.
    let weight_len = fan_in * n_out;
    let groups = (0..n_out)
        .map(|o| {
            std::iter::once(weight_len + o)
                .chain((0..fan_in).map(|r| r * n_out + o))
                .collect()
        })
        .collect();
    Ok(GroupIndexMap {
        layer,
        groups,
        param_count: weight_len + n_out,
    })
}
