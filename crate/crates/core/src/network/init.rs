use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LayerSpec;

/// He initialization: weights drawn from `Normal(0, sqrt(2 / fan_in))`,
/// biases zero. Layers without weights pass through unchanged.
pub fn he_init<R: Rng + ?Sized>(mut spec: LayerSpec, rng: &mut R) -> LayerSpec {
    let fan_in = match &spec {
        LayerSpec::Dense(d) => d.n_in,
        LayerSpec::Conv2d(c) => c.kernel_h * c.kernel_w * c.c_in,
        _ => return spec,
    };
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let (w, b) = spec.params_mut().expect("trainable");
    w.data_mut().iter_mut().for_each(|v| *v = normal.sample(rng));
    b.data_mut().iter_mut().for_each(|v| *v = 0.0);
    spec
}
