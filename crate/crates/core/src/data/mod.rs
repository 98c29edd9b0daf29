//! Datasets from MNIST IDX files or synthetic generators, with seeded batching.

mod idx;
mod synth;

pub use idx::{load_mnist_dir, load_mnist_idx, MNIST_CLASSES};
pub use synth::{synth_dataset, SynthKind};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Tensor,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Tensor, split: Split) -> Result<Self> {
        if inputs.batch() != labels.batch() || labels.rank() != 2 {
            return Err(Error::shape("dataset", inputs.shape(), labels.shape()));
        }
        if !inputs.is_finite() {
            return Err(Error::NonFinite("dataset inputs"));
        }
        crate::network::validate_one_hot(&labels, &labels)?;
        Ok(Dataset { inputs, labels, split })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.labels.shape()[1]
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// The first `n` samples (all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Validation("cannot select an empty subset".into()));
        }
        Ok(Dataset {
            inputs: gather(&self.inputs, indices)?,
            labels: gather(&self.labels, indices)?,
            split: self.split,
        })
    }
}

fn gather(t: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    let mut data = Vec::with_capacity(indices.len() * (t.len() / t.batch()));
    for &i in indices {
        if i >= t.batch() {
            return Err(Error::Validation(format!("sample index {i} out of range for {} samples", t.batch())));
        }
        data.extend_from_slice(t.sample(i));
    }
    Tensor::from_vec(&shape, data)
}

/// Sample order for one epoch, determined by `(seed, epoch)` alone.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled `(X, Y)` batches of size `batch_size`; the last one may be
/// shorter.
pub fn batches(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Validation("batch size must be at least 1".into()));
    }
    Ok(Batches {
        ds,
        order: epoch_permutation(ds.len(), seed, epoch),
        batch_size,
        pos: 0,
    })
}

pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Tensor);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let x = gather(&self.ds.inputs, idx).expect("indices from permutation");
        let y = gather(&self.ds.labels, idx).expect("indices from permutation");
        Some((x, y))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}
