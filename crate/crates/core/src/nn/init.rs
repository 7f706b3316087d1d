//! Seeded parameter initialization.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Standard-normal draw via Box-Muller. Keeps the crate off extra
/// distribution dependencies and pins the sampling algorithm so seeds
/// reproduce across releases.
pub fn standard_normal(rng: &mut ChaCha12Rng) -> f32 {
    let u1: f64 = loop {
        let v = rng.random::<f64>();
        if v > 0.0 {
            break v;
        }
    };
    let u2: f64 = rng.random::<f64>();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

/// He/Kaiming-normal tensor: std = sqrt(2 / fan_in).
pub fn he_normal(rng: &mut ChaCha12Rng, shape: &[usize], fan_in: usize) -> ArrayD<f32> {
    let std = (2.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| standard_normal(rng) * std).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
}

pub fn zeros(shape: &[usize]) -> ArrayD<f32> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> ArrayD<f32> {
    ArrayD::from_elem(IxDyn(shape), 1.0)
}
