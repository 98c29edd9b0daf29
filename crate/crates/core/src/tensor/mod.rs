//! Dense row-major tensors and the numeric kernels built on them.
//!
//! Everything is `f64`. Batched operations follow the "last two dimensions"
//! convention: a `P x M x K` tensor times a `P x K x N` tensor is `P`
//! independent matrix products.

mod cholesky;
mod conv;
mod pool;

pub use cholesky::{cholesky_factor, cholesky_solve, cholesky_solve_factored};
pub use conv::{
    conv2d_bias_grad_per_sample, conv2d_forward, conv2d_input_grad,
    conv2d_weight_grad_per_sample,
};
pub use pool::{maxpool2d, maxpool2d_backward, ArgmaxIndices};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero extent in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on a zero extent; use [`Tensor::from_vec`] for untrusted shapes.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(!shape.contains(&0), "zero extent in shape {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    /// Builds a rank-2 tensor from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("tensor", "ragged rows"));
        }
        Self::from_vec(&[rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Leading extent; the batch size for batch-leading tensors.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Values of one leading-index slice.
    pub fn sample(&self, p: usize) -> &[f64] {
        let stride = self.data.len() / self.batch();
        &self.data[p * stride..(p + 1) * stride]
    }

    pub fn sample_mut(&mut self, p: usize) -> &mut [f64] {
        let stride = self.data.len() / self.batch();
        &mut self.data[p * stride..(p + 1) * stride]
    }

    /// Row-major reinterpretation; never moves data.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let i = self.flat_index(index);
        self.data[i] = value;
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                assert!(i < n, "index {index:?} out of bounds for {:?}", self.shape);
                acc * n + i
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_map", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Batched matrix product over the last two dimensions.
    ///
    /// Leading dimensions must match, or one operand must be rank 2 and is
    /// then shared by every slice of the other.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ra, rb) = (self.rank(), other.rank());
        if ra < 2 || rb < 2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (m, k) = (self.shape[ra - 2], self.shape[ra - 1]);
        let (k2, n) = (other.shape[rb - 2], other.shape[rb - 1]);
        let lead_a = &self.shape[..ra - 2];
        let lead_b = &other.shape[..rb - 2];
        if k != k2 || !(lead_a == lead_b || lead_a.is_empty() || lead_b.is_empty()) {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let lead = if lead_a.is_empty() { lead_b } else { lead_a };
        let batch: usize = lead.iter().product();
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];

        if lead_b.is_empty() {
            // A shared right operand lets the whole batch go through one product.
            gemm(batch * m, k, n, &self.data, false, &other.data, false, &mut out, false);
        } else {
            for (s, c) in out.chunks_mut(m * n).enumerate() {
                let a = if lead_a.is_empty() {
                    &self.data[..]
                } else {
                    &self.data[s * m * k..(s + 1) * m * k]
                };
                let b = &other.data[s * k * n..(s + 1) * k * n];
                gemm(m, k, n, a, false, b, false, c, false);
            }
        }
        Tensor::from_vec(&shape, out)
    }

    /// Swaps the last two extents.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::dim(
                "transpose_last2",
                format!("rank {r} tensor {:?} has no last two dimensions", self.shape),
            ));
        }
        let (m, n) = (self.shape[r - 2], self.shape[r - 1]);
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        let mut out = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks(m * n).zip(out.chunks_mut(m * n)) {
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        Tensor::from_vec(&shape, out)
    }
}

/// Row-major `c (+)= op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// `a_t` / `b_t` mean the stored buffer is the transpose (`k x m`, `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above stay inside the operand and output
    // buffers, whose lengths were checked.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(a.matmul(&Tensor::eye(2)).unwrap(), a);
        assert_eq!(a.matmul(&Tensor::zeros(&[2, 2])).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_batched_per_sample() {
        let a = Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, -1.0, 5.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 1], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_broadcasts_rank2_operand() {
        let a = Tensor::from_fn(&[3, 2, 4], |i| i as f64 * 0.5 - 3.0);
        let b = Tensor::from_fn(&[4, 5], |i| (i as f64).sin());
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[3, 2, 5]);
        for s in 0..3 {
            let want = naive_matmul(a.sample(s), b.data(), 2, 4, 5);
            for (x, y) in c.sample(s).iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let left = b.transpose_last2().unwrap().matmul(&a.transpose_last2().unwrap()).unwrap();
        assert_eq!(left.shape(), &[3, 5, 2]);
    }

    #[test]
    fn matmul_shape_errors_name_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(Tensor::zeros(&[2, 2, 3]).matmul(&Tensor::zeros(&[3, 3, 2])).is_err());
        assert!(Tensor::zeros(&[3]).matmul(&Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn transpose_contract() {
        let a = Tensor::from_fn(&[3, 4], |i| i as f64);
        let t = a.transpose_last2().unwrap();
        assert_eq!(t.shape(), &[4, 3]);
        assert_eq!(t.get(&[1, 2]), a.get(&[2, 1]));

        let sym = Tensor::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]).unwrap();
        assert_eq!(sym.transpose_last2().unwrap(), sym);

        let b = Tensor::from_fn(&[2, 3, 5], |i| i as f64 * 1.5);
        let bt = b.transpose_last2().unwrap();
        assert_eq!(bt.shape(), &[2, 5, 3]);
        for p in 0..2 {
            for i in 0..3 {
                for j in 0..5 {
                    assert_eq!(bt.get(&[p, j, i]), b.get(&[p, i, j]));
                }
            }
        }
        assert!(Tensor::zeros(&[4]).transpose_last2().is_err());
    }

    #[test]
    fn from_vec_rejects_bad_shapes() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::zeros(&[6]).reshape(&[4, 2]).is_err());
    }

    fn mat(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1..max, 1..max).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), prop::collection::vec(-10.0f64..10.0, r * c))
        })
    }

    proptest! {
        #[test]
        fn transpose_is_involution((r, c, v) in mat(7)) {
            let t = Tensor::from_vec(&[r, c], v).unwrap();
            prop_assert_eq!(t.transpose_last2().unwrap().transpose_last2().unwrap(), t);
        }

        #[test]
        fn identity_associativity((m, k, a) in mat(6), n in 1usize..6, seed in 0u64..1000) {
            let a = Tensor::from_vec(&[m, k], a).unwrap();
            let b = Tensor::from_fn(&[k, n], |i| ((i as u64 * 7919 + seed) % 97) as f64 / 13.0 - 3.0);
            let ai = a.matmul(&Tensor::eye(k)).unwrap().matmul(&b).unwrap();
            let ab = a.matmul(&b).unwrap();
            prop_assert!(ai.max_abs_diff(&ab) <= 1e-12);
        }

        #[test]
        fn matmul_is_pure((m, k, a) in mat(8)) {
            let a = Tensor::from_vec(&[m, k], a).unwrap();
            let b = a.transpose_last2().unwrap();
            let x = a.matmul(&b).unwrap();
            let y = a.matmul(&b).unwrap();
            prop_assert_eq!(x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
