//! Minimal CPU network toolkit: flat parameter vectors, convolution layers
//! with hand-written backward passes, softmax cross-entropy and Adam.
//!
//! Every layer is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

mod adam;
mod layers;
mod loss;
mod real;

pub use adam::{Adam, LrSchedule};
pub use layers::{Conv2d, Feature, Linear, ParamAllocator, UpConv2x2};
pub use loss::{ce_objective, softmax_ce_grad, softmax_chw, PixelTargets};
pub use real::{matmul, Real};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// He-normal initialization of every weight block, zero biases.
pub(crate) fn init_params<T: Real>(
    len: usize,
    blocks: &[(std::ops::Range<usize>, usize)],
    seed: u64,
) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![T::zero(); len];
    for (range, fan_in) in blocks {
        let std = (2.0 / *fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for p in &mut params[range.clone()] {
            *p = T::from_f64(normal.sample(&mut rng));
        }
    }
    params
}

pub(crate) fn relu_inplace<T: Real>(xs: &mut [T]) {
    for x in xs {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes gradient entries where the forward activation was clipped.
pub(crate) fn relu_backward<T: Real>(activated: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Adds `src` into `dst` elementwise.
pub(crate) fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
