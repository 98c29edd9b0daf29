use super::{Executor, GroupIndexMap};
use crate::error::{Error, Result};
use crate::network::{LayerParams, PerSampleGrads, WeightGrads};
use crate::tensor::{cholesky_factor, cholesky_solve_factored, gemm, Tensor};

/// How many times a failed factorization is retried with ten times the damping.
pub const DAMPING_RETRIES: usize = 3;

/// Per-component Fisher blocks of one layer, `G x N x N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentFimBlocks {
    pub layer: usize,
    blocks: Tensor,
    damping: Option<f64>,
}

impl ComponentFimBlocks {
    pub fn new(layer: usize, blocks: Tensor) -> Result<Self> {
        let s = blocks.shape();
        if blocks.rank() != 3 || s[1] != s[2] {
            return Err(Error::dim("fim blocks", format!("expected G x N x N, got {s:?}")));
        }
        Ok(ComponentFimBlocks {
            layer,
            blocks,
            damping: None,
        })
    }

    pub fn blocks(&self) -> &Tensor {
        &self.blocks
    }

    pub fn block(&self, g: usize) -> &[f64] {
        self.blocks.sample(g)
    }

    pub fn group_count(&self) -> usize {
        self.blocks.shape()[0]
    }

    pub fn group_size(&self) -> usize {
        self.blocks.shape()[1]
    }

    /// Damping already added to the diagonal, if any.
    pub fn damping(&self) -> Option<f64> {
        self.damping
    }

    /// Copy with `gamma I` added to every block.
    pub fn damped(&self, gamma: f64) -> Self {
        let n = self.group_size();
        let mut blocks = self.blocks.clone();
        for g in 0..self.group_count() {
            add_diagonal(blocks.sample_mut(g), n, gamma);
        }
        ComponentFimBlocks {
            layer: self.layer,
            blocks,
            damping: Some(self.damping.unwrap_or(0.0) + gamma),
        }
    }
}

fn add_diagonal(m: &mut [f64], n: usize, v: f64) {
    for i in 0..n {
        m[i * n + i] += v;
    }
}

fn check_map(grads: &PerSampleGrads, map: &GroupIndexMap) -> Result<()> {
    if map.param_count() != grads.param_count() || map.is_empty() {
        return Err(Error::Internal(format!(
            "group map covers {} parameters but layer {} gradients have {}",
            map.param_count(),
            map.layer,
            grads.param_count()
        )));
    }
    Ok(())
}

pub fn component_fim(grads: &PerSampleGrads, map: &GroupIndexMap) -> Result<ComponentFimBlocks> {
    component_fim_with(grads, map, &Executor::Serial)
}

/// `F_g = sum_p g_p^T g_p` for every group, summed sample by sample.
pub fn component_fim_with(grads: &PerSampleGrads, map: &GroupIndexMap, exec: &Executor) -> Result<ComponentFimBlocks> {
    check_map(grads, map)?;
    let n = map.group_size();
    let blocks = exec.map(map.len(), |g| {
        let idx = map.group(g);
        let mut block = vec![0.0; n * n];
        let mut row = vec![0.0; n];
        for p in 0..grads.batch() {
            for (r, &j) in row.iter_mut().zip(idx) {
                *r = grads.entry(p, j);
            }
            for (i, &ri) in row.iter().enumerate() {
                for (b, &rj) in block[i * n..(i + 1) * n].iter_mut().zip(&row) {
                    *b += ri * rj;
                }
            }
        }
        block
    });
    ComponentFimBlocks::new(map.layer, Tensor::from_vec(&[map.len(), n, n], blocks.concat())?)
}

/// Factors `m + gamma I`, escalating the damping tenfold on failure.
fn factor_with_escalation(m: &[f64], n: usize, gamma: f64, layer: usize, group: usize) -> Result<Vec<f64>> {
    let mut damping = gamma;
    for attempt in 0..=DAMPING_RETRIES {
        if attempt > 0 {
            damping *= 10.0;
        }
        let mut a = m.to_vec();
        add_diagonal(&mut a, n, damping);
        if cholesky_factor(&mut a, n).is_ok() {
            return Ok(a);
        }
    }
    Err(Error::SolveFailed {
        layer,
        group,
        damping,
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Validation(format!("damping must be positive, got {gamma}")));
    }
    Ok(())
}

fn scatter(groups: &[Vec<f64>], map: &GroupIndexMap, template: &LayerParams) -> LayerParams {
    let mut out = LayerParams::zeros_like(template);
    for (vals, idx) in groups.iter().zip(map.groups()) {
        for (&v, &j) in vals.iter().zip(idx) {
            out.set_flat(j, v);
        }
    }
    out
}

pub fn damped_solve(
    blocks: &ComponentFimBlocks,
    map: &GroupIndexMap,
    gradient: &LayerParams,
    gamma: f64,
) -> Result<LayerParams> {
    damped_solve_with(blocks, map, gradient, gamma, &Executor::Serial)
}

/// `u_g = d_g (F_g + gamma I)^-1` for every group, reassembled into the
/// layer's weight and bias shapes.
///
/// A block that still fails to factor is retried with the damping multiplied
/// by ten, up to [`DAMPING_RETRIES`] times.
pub fn damped_solve_with(
    blocks: &ComponentFimBlocks,
    map: &GroupIndexMap,
    gradient: &LayerParams,
    gamma: f64,
    exec: &Executor,
) -> Result<LayerParams> {
    check_gamma(gamma)?;
    if blocks.damping().is_some() {
        return Err(Error::Validation("blocks are already damped".into()));
    }
    if blocks.group_count() != map.len() || blocks.group_size() != map.group_size() || gradient.len() != map.param_count()
    {
        return Err(Error::dim(
            "damped_solve",
            format!(
                "{} blocks of size {}, {} groups of size {}, gradient of {} values",
                blocks.group_count(),
                blocks.group_size(),
                map.len(),
                map.group_size(),
                gradient.len()
            ),
        ));
    }
    let n = map.group_size();
    let solved = exec.map(map.len(), |g| -> Result<Vec<f64>> {
        let l = factor_with_escalation(blocks.block(g), n, gamma, map.layer, g)?;
        // The damped block is symmetric, so d A^-1 is A^-1 d^T.
        let mut u: Vec<f64> = map.group(g).iter().map(|&j| gradient.get_flat(j)).collect();
        cholesky_solve_factored(&l, n, &mut u);
        Ok(u)
    });
    let solved = solved.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(scatter(&solved, map, gradient))
}

/// The damped component update for the batch-mean gradient, computed in
/// sample space.
///
/// With `G` the `P x N` matrix of per-sample group gradients and
/// `d = 1^T G / P`, the identity `(G^T G + gamma I)^-1 G^T = G^T (G G^T + gamma I)^-1`
/// gives `u = G^T (G G^T + gamma I)^-1 1 / P`: one `P x P` factorization
/// instead of an `N x N` one. Exact, and cheaper whenever `N > P`.
pub fn kernel_damped_solve(
    grads: &PerSampleGrads,
    map: &GroupIndexMap,
    gamma: f64,
    exec: &Executor,
) -> Result<LayerParams> {
    check_gamma(gamma)?;
    check_map(grads, map)?;
    let p = grads.batch();
    let n = map.group_size();
    let inv_p = 1.0 / p as f64;
    let template = LayerParams {
        weights: Tensor::zeros(&[grads.weight_len()]),
        bias: Tensor::zeros(&[grads.bias_len()]),
    };

    // Dense groups share one input Gram matrix: G_g = diag(d_s[:, g]) [1 | A].
    let dense_gram = match &grads.weights {
        WeightGrads::Dense { inputs } => {
            let n_in = inputs.shape()[1];
            let mut aug = vec![0.0; p * (n_in + 1)];
            for (s, row) in aug.chunks_mut(n_in + 1).enumerate() {
                row[0] = 1.0;
                row[1..].copy_from_slice(inputs.sample(s));
            }
            let mut gram = vec![0.0; p * p];
            gemm(p, n_in + 1, p, &aug, false, &aug, true, &mut gram, false);
            Some((aug, gram))
        }
        WeightGrads::Conv { .. } => None,
    };

    let solved = exec.map(map.len(), |g| -> Result<Vec<f64>> {
        let idx = map.group(g);
        let mut kernel = vec![0.0; p * p];
        let rows: Option<Vec<f64>>;
        match &dense_gram {
            Some((_, gram)) => {
                let col: Vec<f64> = (0..p).map(|s| grads.d_pre.sample(s)[g]).collect();
                for i in 0..p {
                    for j in 0..p {
                        kernel[i * p + j] = col[i] * col[j] * gram[i * p + j];
                    }
                }
                rows = None;
            }
            None => {
                let mut m = vec![0.0; p * n];
                for (s, row) in m.chunks_mut(n).enumerate() {
                    for (r, &j) in row.iter_mut().zip(idx) {
                        *r = grads.entry(s, j);
                    }
                }
                gemm(p, n, p, &m, false, &m, true, &mut kernel, false);
                rows = Some(m);
            }
        }
        let l = factor_with_escalation(&kernel, p, gamma, map.layer, g)?;
        let mut z = vec![inv_p; p];
        cholesky_solve_factored(&l, p, &mut z);
        let mut u = vec![0.0; n];
        match (&dense_gram, rows) {
            (Some((aug, _)), _) => {
                for (s, zs) in z.iter_mut().enumerate() {
                    *zs *= grads.d_pre.sample(s)[g];
                }
                gemm(1, p, n, &z, false, aug, false, &mut u, false);
            }
            (None, Some(m)) => gemm(1, p, n, &z, false, &m, false, &mut u, false),
            (None, None) => unreachable!(),
        }
        Ok(u)
    });
    let solved = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let flat = scatter(&solved, map, &template);
    let mean = grads.mean();
    Ok(LayerParams {
        weights: Tensor::from_vec(mean.weights.shape(), flat.weights.into_data())?,
        bias: Tensor::from_vec(mean.bias.shape(), flat.bias.into_data())?,
    })
}
