//! Weight initialisers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;
use crate::scalar::Real;

/// Kaiming/He normal initialisation for ReLU networks: `N(0, 2 / fan_in)`.
pub fn he_normal<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * std)
    })
}

/// Uniform `U(-bound, bound)`.
pub fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}
