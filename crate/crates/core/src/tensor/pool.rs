use super::Tensor;
use crate::error::{Error, Result};

/// Flat input index of each pooled maximum, kept for the backward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxIndices {
    input_shape: Vec<usize>,
    flat: Vec<usize>,
}

impl ArgmaxIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.flat
    }
}

/// Non-overlapping max pooling over `P x H x W x C`. Ties go to the lowest
/// flat index.
pub fn maxpool2d(input: &Tensor, window: (usize, usize)) -> Result<(Tensor, ArgmaxIndices)> {
    const OP: &str = "maxpool2d";
    if input.rank() != 4 {
        return Err(Error::dim(OP, format!("input must be rank 4, got {:?}", input.shape())));
    }
    let s = input.shape();
    let (batch, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0 {
        return Err(Error::dim(
            OP,
            format!("window {wh}x{ww} does not tile a {h}x{w} input"),
        ));
    }
    let (oh, ow) = (h / wh, w / ww);
    let n_out = batch * oh * ow * c;
    let mut values = Vec::with_capacity(n_out);
    let mut flat = Vec::with_capacity(n_out);
    let x = input.data();
    for p in 0..batch {
        for y in 0..oh {
            for xo in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    let mut best_val = f64::NEG_INFINITY;
                    for r in 0..wh {
                        for q in 0..ww {
                            let idx = ((p * h + y * wh + r) * w + xo * ww + q) * c + ch;
                            if best == usize::MAX || x[idx] > best_val {
                                best = idx;
                                best_val = x[idx];
                            }
                        }
                    }
                    values.push(best_val);
                    flat.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[batch, oh, ow, c], values)?,
        ArgmaxIndices {
            input_shape: s.to_vec(),
            flat,
        },
    ))
}

/// Routes each upstream value to its argmax position; zero elsewhere.
pub fn maxpool2d_backward(d_out: &Tensor, argmax: &ArgmaxIndices) -> Result<Tensor> {
    if d_out.len() != argmax.flat.len() {
        return Err(Error::shape("maxpool2d_backward", d_out.shape(), &argmax.input_shape));
    }
    let mut out = Tensor::zeros(&argmax.input_shape);
    let buf = out.data_mut();
    for (&i, &g) in argmax.flat.iter().zip(d_out.data()) {
        buf[i] += g;
    }
    Ok(out)
}
