use super::Scalar;
use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fan-in-scaled uniform initialization: `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`.
///
/// Samples are drawn in `f64` and cast, so an `f32` and an `f64` model built
/// from the same seed share the same underlying draw sequence.
pub fn he_uniform<F: Scalar, D: Dimension, Sh: ShapeBuilder<Dim = D>>(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    shape: Sh,
) -> Array<F, D> {
    let limit = (6.0 / fan_in as f64).sqrt();
    Array::from_shape_simple_fn(shape, || {
        F::fromf64(rng.random_range(-limit..limit))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn same_seed_same_weights() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let wa: ndarray::Array2<f32> = he_uniform(&mut a, 16, (4, 16));
        let wb: ndarray::Array2<f32> = he_uniform(&mut b, 16, (4, 16));
        assert_eq!(wa, wb);
        let wc: ndarray::Array2<f32> = he_uniform(&mut a, 16, (4, 16));
        assert_ne!(wa, wc);
    }

    #[test]
    fn bounds_scale_with_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: ndarray::Array1<f64> = he_uniform(&mut rng, 600, 1000);
        let limit = (6.0f64 / 600.0).sqrt();
        assert!(w.iter().all(|v| v.abs() < limit));
    }
}
