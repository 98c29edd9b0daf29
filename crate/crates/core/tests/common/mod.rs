//! Reference computations shared by the integration tests. They use none of
//! the library's numerics.

#![allow(dead_code)]

use cwngd::network::Network;
use cwngd::Tensor;

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        let pivot_row = m[c].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != c {
                let f = row[c];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    m.into_iter().map(|row| row[n]).collect()
}

/// Mean softmax cross-entropy, written out directly.
pub fn mean_cross_entropy(logits: &Tensor, labels: &Tensor) -> f64 {
    let c = logits.shape()[1];
    let mut total = 0.0;
    for (z, y) in logits.data().chunks(c).zip(labels.data().chunks(c)) {
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let k = y.iter().position(|&v| v == 1.0).unwrap();
        total += lse - z[k];
    }
    total / logits.batch() as f64
}

/// Every trainable parameter of `net`, layer by layer, weights then bias.
pub fn flat_params(net: &Network) -> Vec<f64> {
    net.trainable_layers()
        .flat_map(|l| net.layer_params(l).unwrap().to_flat())
        .collect()
}

/// Copy of `net` with flat parameter `k` (in [`flat_params`] order) shifted by `h`.
pub fn perturbed(net: &Network, k: usize, h: f64) -> Network {
    let mut out = net.clone();
    let mut offset = 0;
    for l in net.trainable_layers().collect::<Vec<_>>() {
        let mut p = net.layer_params(l).unwrap();
        if k < offset + p.len() {
            let v = p.get_flat(k - offset);
            p.set_flat(k - offset, v + h);
            out.set_layer_params(l, p).unwrap();
            return out;
        }
        offset += p.len();
    }
    panic!("parameter {k} out of range");
}

/// One-hot labels with class `(p * stride + shift) % c` for row `p`.
pub fn cyclic_labels(p: usize, c: usize, stride: usize, shift: usize) -> Tensor {
    Tensor::from_fn(&[p, c], |i| if i % c == (i / c * stride + shift) % c { 1.0 } else { 0.0 })
}
