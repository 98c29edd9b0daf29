use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of a `P x C` tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::dim("softmax", format!("expected P x C logits, got {:?}", logits.shape())));
    }
    let c = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Checks that `labels` is `P x C` matching `logits` with one-hot rows.
pub fn validate_one_hot(logits: &Tensor, labels: &Tensor) -> Result<()> {
    if labels.shape() != logits.shape() || logits.rank() != 2 {
        return Err(Error::shape("softmax_cross_entropy", logits.shape(), labels.shape()));
    }
    let c = labels.shape()[1];
    for (p, row) in labels.data().chunks(c).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!("label row {p} is not one-hot")));
        }
    }
    Ok(())
}

/// Mean cross-entropy and the derivative of each sample's own loss with
/// respect to its logits (`softmax(z) - y`, not divided by `P`).
pub fn softmax_cross_entropy_per_sample(logits: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
    validate_one_hot(logits, labels)?;
    let (p, c) = (logits.shape()[0], logits.shape()[1]);
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (row, y) in grad.data_mut().chunks_mut(c).zip(labels.data().chunks(c)) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        for (v, &t) in row.iter_mut().zip(y) {
            if t == 1.0 {
                total += log_norm - *v;
            }
            *v = (*v - log_norm).exp() - t;
        }
    }
    let loss = total / p as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((loss, grad))
}

/// Mean cross-entropy over the batch and `D_a = (softmax(z) - y) / P`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
    let (loss, grad) = softmax_cross_entropy_per_sample(logits, labels)?;
    let scale = 1.0 / logits.shape()[0] as f64;
    Ok((loss, grad.scale(scale)))
}

/// Fraction of rows whose logit argmax equals the label argmax (ties go to
/// the lowest index).
pub fn accuracy(logits: &Tensor, labels: &Tensor) -> Result<f64> {
    if logits.shape() != labels.shape() || logits.rank() != 2 {
        return Err(Error::shape("accuracy", logits.shape(), labels.shape()));
    }
    let c = logits.shape()[1];
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    };
    let hits = logits
        .data()
        .chunks(c)
        .zip(labels.data().chunks(c))
        .filter(|(z, y)| argmax(z) == argmax(y))
        .count();
    Ok(hits as f64 / logits.shape()[0] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(p: usize, c: usize, cls: impl Fn(usize) -> usize) -> Tensor {
        Tensor::from_fn(&[p, c], |i| if i % c == cls(i / c) { 1.0 } else { 0.0 })
    }

    #[test]
    fn uniform_softmax() {
        let z = Tensor::zeros(&[1, 2]);
        let y = one_hot(1, 2, |_| 0);
        let (loss, d) = softmax_cross_entropy(&z, &y).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(d.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn saturation_limit() {
        let z = Tensor::from_vec(&[1, 3], vec![60.0, 0.0, 0.0]).unwrap();
        let (loss, d) = softmax_cross_entropy(&z, &one_hot(1, 3, |_| 0)).unwrap();
        assert!(loss < 1e-20);
        assert!(d.max_abs() < 1e-20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Tensor::from_fn(&[4, 5], |_| rng.random_range(-3.0..3.0));
        let y = one_hot(4, 5, |p| (p * 3) % 5);
        let (_, d) = softmax_cross_entropy(&z, &y).unwrap();
        let h = 1e-5;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp.data_mut()[i] += h;
            let mut zm = z.clone();
            zm.data_mut()[i] -= h;
            let fd = (softmax_cross_entropy(&zp, &y).unwrap().0 - softmax_cross_entropy(&zm, &y).unwrap().0)
                / (2.0 * h);
            let err = (fd - d.data()[i]).abs() / (1e-8 + fd.abs().max(d.data()[i].abs()));
            assert!(err <= 1e-7, "{i}: {fd} vs {}", d.data()[i]);
        }
    }

    #[test]
    fn rows_sum_to_one_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Tensor::from_fn(&[6, 4], |_| rng.random_range(-10.0..10.0));
        let y = one_hot(6, 4, |p| p % 4);
        let s = softmax(&z).unwrap();
        let (_, d) = softmax_cross_entropy(&z, &y).unwrap();
        for p in 0..6 {
            assert!((s.sample(p).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(d.sample(p).iter().sum::<f64>().abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_non_one_hot_labels() {
        let z = Tensor::zeros(&[2, 2]);
        for bad in [vec![1.0, 1.0, 0.0, 1.0], vec![0.5, 0.5, 1.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]] {
            let y = Tensor::from_vec(&[2, 2], bad).unwrap();
            assert!(matches!(softmax_cross_entropy(&z, &y), Err(Error::Validation(_))));
        }
        assert!(softmax_cross_entropy(&z, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn accuracy_ties_to_lowest_index() {
        let z = Tensor::from_vec(&[2, 3], vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        let y = one_hot(2, 3, |p| if p == 0 { 0 } else { 2 });
        assert_eq!(accuracy(&z, &y).unwrap(), 0.5);
    }
}
