//! 2-D convolution kernels: stride-1 cross-correlation with valid padding.
//!
//! Layouts: inputs `P x H x W x C_in`, kernels `k x e x C_in x C_out`,
//! outputs `P x H' x W' x C_out` with `H' = H - k + 1`, `W' = W - e + 1`.
//! A kernel flattened row-major is exactly the `(k*e*C_in) x C_out` matrix
//! that multiplies an im2col patch matrix.

use super::{gemm, Tensor};
use crate::error::{Error, Result};

struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    c_in: usize,
    k: usize,
    e: usize,
    c_out: usize,
}

impl Geometry {
    fn out_h(&self) -> usize {
        self.h - self.k + 1
    }
    fn out_w(&self) -> usize {
        self.w - self.e + 1
    }
    fn patch_len(&self) -> usize {
        self.k * self.e * self.c_in
    }
    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

fn require_rank(op: &'static str, t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(
            op,
            format!("{what} must be rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// Gathers one sample's receptive fields into a `positions x patch_len` matrix.
fn im2col(g: &Geometry, sample: &[f64], cols: &mut [f64]) {
    let (oh, ow, pl) = (g.out_h(), g.out_w(), g.patch_len());
    let row_len = g.e * g.c_in;
    for y in 0..oh {
        for x in 0..ow {
            let dst = &mut cols[(y * ow + x) * pl..(y * ow + x + 1) * pl];
            for r in 0..g.k {
                let src = ((y + r) * g.w + x) * g.c_in;
                dst[r * row_len..(r + 1) * row_len].copy_from_slice(&sample[src..src + row_len]);
            }
        }
    }
}

/// Scatter-adds a patch matrix back onto one sample's input grid.
fn col2im(g: &Geometry, cols: &[f64], sample: &mut [f64]) {
    let (oh, ow, pl) = (g.out_h(), g.out_w(), g.patch_len());
    let row_len = g.e * g.c_in;
    for y in 0..oh {
        for x in 0..ow {
            let src = &cols[(y * ow + x) * pl..(y * ow + x + 1) * pl];
            for r in 0..g.k {
                let dst = ((y + r) * g.w + x) * g.c_in;
                for (d, s) in sample[dst..dst + row_len]
                    .iter_mut()
                    .zip(&src[r * row_len..(r + 1) * row_len])
                {
                    *d += s;
                }
            }
        }
    }
}

pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "conv2d_forward";
    require_rank(OP, input, 4, "input")?;
    require_rank(OP, kernel, 4, "kernel")?;
    let (is, ks) = (input.shape(), kernel.shape());
    let g = Geometry {
        batch: is[0],
        h: is[1],
        w: is[2],
        c_in: is[3],
        k: ks[0],
        e: ks[1],
        c_out: ks[3],
    };
    if ks[2] != g.c_in || g.k > g.h || g.e > g.w {
        return Err(Error::shape(OP, is, ks));
    }
    if bias.shape() != [g.c_out] {
        return Err(Error::shape(OP, ks, bias.shape()));
    }

    let (pos, pl) = (g.positions(), g.patch_len());
    let mut out = vec![0.0; g.batch * pos * g.c_out];
    let mut cols = vec![0.0; pos * pl];
    for (p, o) in out.chunks_mut(pos * g.c_out).enumerate() {
        im2col(&g, input.sample(p), &mut cols);
        for row in o.chunks_mut(g.c_out) {
            row.copy_from_slice(bias.data());
        }
        gemm(pos, pl, g.c_out, &cols, false, kernel.data(), false, o, true);
    }
    Tensor::from_vec(&[g.batch, g.out_h(), g.out_w(), g.c_out], out)
}

/// Gradient of `sum(d_out * conv(x))` with respect to `x`, per sample.
pub fn conv2d_input_grad(d_out: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    const OP: &str = "conv2d_input_grad";
    require_rank(OP, d_out, 4, "upstream gradient")?;
    require_rank(OP, kernel, 4, "kernel")?;
    let (ds, ks) = (d_out.shape(), kernel.shape());
    if ds[3] != ks[3] {
        return Err(Error::shape(OP, ds, ks));
    }
    let g = Geometry {
        batch: ds[0],
        h: ds[1] + ks[0] - 1,
        w: ds[2] + ks[1] - 1,
        c_in: ks[2],
        k: ks[0],
        e: ks[1],
        c_out: ks[3],
    };
    let (pos, pl) = (g.positions(), g.patch_len());
    let mut out = vec![0.0; g.batch * g.h * g.w * g.c_in];
    let mut cols = vec![0.0; pos * pl];
    for (p, x) in out.chunks_mut(g.h * g.w * g.c_in).enumerate() {
        // d_cols = d_out_p (pos x c_out) * kernel^T (c_out x patch)
        gemm(pos, g.c_out, pl, d_out.sample(p), false, kernel.data(), true, &mut cols, false);
        col2im(&g, &cols, x);
    }
    Tensor::from_vec(&[g.batch, g.h, g.w, g.c_in], out)
}

/// Kernel gradient for every sample separately: `P x k x e x C_in x C_out`.
pub fn conv2d_weight_grad_per_sample(input: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    const OP: &str = "conv2d_weight_grad_per_sample";
    require_rank(OP, input, 4, "input")?;
    require_rank(OP, d_out, 4, "upstream gradient")?;
    let (is, ds) = (input.shape(), d_out.shape());
    if is[0] != ds[0] || ds[1] > is[1] || ds[2] > is[2] {
        return Err(Error::shape(OP, is, ds));
    }
    let g = Geometry {
        batch: is[0],
        h: is[1],
        w: is[2],
        c_in: is[3],
        k: is[1] - ds[1] + 1,
        e: is[2] - ds[2] + 1,
        c_out: ds[3],
    };
    let (pos, pl) = (g.positions(), g.patch_len());
    let mut out = vec![0.0; g.batch * pl * g.c_out];
    let mut cols = vec![0.0; pos * pl];
    for (p, dw) in out.chunks_mut(pl * g.c_out).enumerate() {
        im2col(&g, input.sample(p), &mut cols);
        gemm(pl, pos, g.c_out, &cols, true, d_out.sample(p), false, dw, false);
    }
    Tensor::from_vec(&[g.batch, g.k, g.e, g.c_in, g.c_out], out)
}

/// Per-sample bias gradient: `d_out` summed over spatial positions, `P x C_out`.
pub fn conv2d_bias_grad_per_sample(d_out: &Tensor) -> Result<Tensor> {
    require_rank("conv2d_bias_grad_per_sample", d_out, 4, "upstream gradient")?;
    let s = d_out.shape();
    let (batch, c_out) = (s[0], s[3]);
    let mut out = vec![0.0; batch * c_out];
    for (p, b) in out.chunks_mut(c_out).enumerate() {
        for row in d_out.sample(p).chunks(c_out) {
            for (acc, v) in b.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    Tensor::from_vec(&[batch, c_out], out)
}
