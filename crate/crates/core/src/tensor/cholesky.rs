use super::Tensor;
use crate::error::{Error, Result};

/// In-place Cholesky factorization of a row-major `n x n` SPD matrix.
///
/// On success the lower triangle holds `L` with `A = L L^T` and the strict
/// upper triangle is zeroed. Only the lower triangle of the input is read.
pub fn cholesky_factor(a: &mut [f64], n: usize) -> Result<()> {
    assert_eq!(a.len(), n * n);
    for i in 0..n {
        let (done, rest) = a.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..i {
            let row_j = &done[j * n..j * n + j];
            let s = row_i[j] - dot(&row_i[..j], row_j);
            row_i[j] = s / done[j * n + j];
        }
        let d = row_i[i] - dot(&row_i[..i], &row_i[..i]);
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::NotPositiveDefinite { slice: 0 });
        }
        row_i[i] = d.sqrt();
        row_i[i + 1..].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` in place given the factor from [`cholesky_factor`].
pub fn cholesky_solve_factored(l: &[f64], n: usize, b: &mut [f64]) {
    assert_eq!(l.len(), n * n);
    assert_eq!(b.len(), n);
    for i in 0..n {
        let s = dot(&l[i * n..i * n + i], &b[..i]);
        b[i] = (b[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Batched right-division: for each slice `g`, returns `X_g` with
/// `X_g A_g = B_g`, where `A` is `G x N x N` SPD and `B` is `G x M x N`.
pub fn cholesky_solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    const OP: &str = "cholesky_solve";
    let (sa, sb) = (a.shape(), b.shape());
    if a.rank() != 3 || b.rank() != 3 || sa[1] != sa[2] || sa[0] != sb[0] || sb[2] != sa[1] {
        return Err(Error::shape(OP, sa, sb));
    }
    let (groups, n, m) = (sa[0], sa[1], sb[1]);
    let mut out = b.clone();
    for g in 0..groups {
        let mut l = a.sample(g).to_vec();
        check_symmetric(&l, n, g)?;
        cholesky_factor(&mut l, n).map_err(|_| Error::NotPositiveDefinite { slice: g })?;
        // A is symmetric, so X A = B is A X^T = B^T row by row.
        for row in out.sample_mut(g).chunks_mut(n).take(m) {
            cholesky_solve_factored(&l, n, row);
        }
    }
    Ok(out)
}

fn check_symmetric(a: &[f64], n: usize, slice: usize) -> Result<()> {
    let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-10 * scale {
                return Err(Error::Validation(format!(
                    "matrix slice {slice} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}
