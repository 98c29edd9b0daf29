use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthKind {
    /// The four corners of the unit square, cycled in order, labelled by
    /// XOR of the coordinates, plus Gaussian noise of the given deviation.
    Xor { noise: f64 },
    /// `classes` unit-variance Gaussian clusters in 2-D whose centres lie on
    /// a circle, neighbouring centres `separation` apart.
    Blobs { classes: usize, separation: f64 },
}

pub fn synth_dataset(kind: SynthKind, n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::Validation(format!("synthetic datasets need at least 4 samples, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, cls, c) = match kind {
        SynthKind::Xor { noise } => {
            if !(noise >= 0.0 && noise.is_finite()) {
                return Err(Error::Validation(format!("noise must be non-negative, got {noise}")));
            }
            let normal = Normal::new(0.0, noise).expect("checked deviation");
            let mut x = Vec::with_capacity(2 * n);
            let mut cls = Vec::with_capacity(n);
            for i in 0..n {
                let (a, b) = ((i % 4) / 2, i % 2);
                x.push(a as f64 + normal.sample(&mut rng));
                x.push(b as f64 + normal.sample(&mut rng));
                cls.push(a ^ b);
            }
            (x, cls, 2)
        }
        SynthKind::Blobs { classes, separation } => {
            if classes < 2 || !(separation > 0.0 && separation.is_finite()) {
                return Err(Error::Validation("blobs need at least 2 classes and a positive separation".into()));
            }
            let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
            let centres = blob_centres(classes, radius);
            let normal = Normal::new(0.0, 1.0).expect("unit deviation");
            let mut x = Vec::with_capacity(2 * n);
            let mut cls = Vec::with_capacity(n);
            for _ in 0..n {
                let k = rng.random_range(0..classes);
                x.push(centres[k].0 + normal.sample(&mut rng));
                x.push(centres[k].1 + normal.sample(&mut rng));
                cls.push(k);
            }
            (x, cls, classes)
        }
    };
    let labels = Tensor::from_fn(&[n, c], |i| if i % c == cls[i / c] { 1.0 } else { 0.0 });
    Dataset::new(Tensor::from_vec(&[n, 2], x)?, labels, Split::Train)
}

fn blob_centres(classes: usize, radius: f64) -> Vec<(f64, f64)> {
    (0..classes)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
            (radius * t.cos(), radius * t.sin())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_truth_table() {
        let ds = synth_dataset(SynthKind::Xor { noise: 0.0 }, 4, 0).unwrap();
        assert_eq!(ds.inputs.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let cls: Vec<usize> = (0..4).map(|p| if ds.labels.sample(p)[1] == 1.0 { 1 } else { 0 }).collect();
        assert_eq!(cls, vec![0, 1, 1, 0]);
    }

    #[test]
    fn deterministic_per_seed() {
        let k = SynthKind::Xor { noise: 0.1 };
        assert_eq!(synth_dataset(k, 40, 7).unwrap(), synth_dataset(k, 40, 7).unwrap());
        assert_ne!(synth_dataset(k, 40, 7).unwrap(), synth_dataset(k, 40, 8).unwrap());
        assert!(synth_dataset(k, 3, 0).is_err());
    }

    #[test]
    fn separated_blobs_are_nearest_centroid_separable() {
        let ds = synth_dataset(
            SynthKind::Blobs {
                classes: 4,
                separation: 10.0,
            },
            2000,
            1,
        )
        .unwrap();
        // Class means estimated from the data itself.
        let mut sums = [(0.0, 0.0, 0usize); 4];
        let class = |p: usize| ds.labels.sample(p).iter().position(|&v| v == 1.0).unwrap();
        for p in 0..ds.len() {
            let s = &mut sums[class(p)];
            s.0 += ds.inputs.sample(p)[0];
            s.1 += ds.inputs.sample(p)[1];
            s.2 += 1;
        }
        let means: Vec<(f64, f64)> = sums.iter().map(|s| (s.0 / s.2 as f64, s.1 / s.2 as f64)).collect();
        let hits = (0..ds.len())
            .filter(|&p| {
                let x = ds.inputs.sample(p);
                let d = |m: &(f64, f64)| (x[0] - m.0).powi(2) + (x[1] - m.1).powi(2);
                let best = (0..4).min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b]))).unwrap();
                best == class(p)
            })
            .count();
        assert!(hits as f64 / ds.len() as f64 >= 0.99);
    }
}
