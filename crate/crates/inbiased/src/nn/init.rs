//! Parameter initialization.

use crate::num::{cast, Scalar};
use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform fan-in initialization: every entry drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` in row-major order.
///
/// The draw order is part of the reproducibility contract: tensors are
/// always filled element by element from the stream they are given.
pub fn uniform_fan_in<F: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<F> {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len)
        .map(|_| cast::<F>(rng.gen_range(-bound..bound)))
        .collect()
}

pub fn linear_weight<F: Scalar>(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Array2<F> {
    Array2::from_shape_vec((out_dim, in_dim), uniform_fan_in(rng, in_dim, out_dim * in_dim))
        .expect("weight shape")
}

pub fn linear_bias<F: Scalar>(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Array1<F> {
    Array1::from_vec(uniform_fan_in(rng, in_dim, out_dim))
}

pub fn conv_weight<F: Scalar>(
    rng: &mut ChaCha8Rng,
    out_c: usize,
    in_c: usize,
    kh: usize,
    kw: usize,
) -> Array4<F> {
    let fan_in = in_c * kh * kw;
    Array4::from_shape_vec(
        (out_c, in_c, kh, kw),
        uniform_fan_in(rng, fan_in, out_c * in_c * kh * kw),
    )
    .expect("conv weight shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_respected() {
        let mut rng = crate::rng::stream(3, "test/init");
        let w: Vec<f32> = uniform_fan_in(&mut rng, 100, 10_000);
        let bound = 0.1f32;
        assert!(w.iter().all(|v| v.abs() < bound));
        // not degenerate
        assert!(w.iter().any(|v| v.abs() > bound / 4.0));
    }

    #[test]
    fn different_streams_differ() {
        let mut a = crate::rng::stream(3, "test/init-a");
        let mut b = crate::rng::stream(3, "test/init-b");
        let wa: Vec<f64> = uniform_fan_in(&mut a, 10, 50);
        let wb: Vec<f64> = uniform_fan_in(&mut b, 10, 50);
        assert_ne!(wa, wb);
    }
}
