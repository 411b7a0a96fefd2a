//! Weight initialization: centered uniform scaled by fan-in. Values are
//! drawn as `f64` and converted, so a given seed produces the same numbers
//! in training and verification precision.

use rand::Rng;

use super::{sc, Scalar, Tensor};

/// `U(-1/sqrt(fan_in), +1/sqrt(fan_in))` over the given shape.
pub fn fan_in_uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| sc(rng.gen_range(-bound..bound)))
}

/// `U(lo, hi)` over the given shape.
pub fn uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| sc(rng.gen_range(lo..hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounded_and_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Tensor<f32> = fan_in_uniform(&mut rng, &[3, 3, 4, 8], 36);
        let bound = 1.0 / 6.0;
        assert!(a.data().iter().all(|v| v.abs() < bound));

        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let b: Tensor<f32> = fan_in_uniform(&mut rng2, &[3, 3, 4, 8], 36);
        assert_eq!(a.data(), b.data());
    }
}
