//! A small differentiable tensor engine: convolution and pooling kernels,
//! a reverse-mode tape, Adam and a warm-up cosine schedule.

pub mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod scalar;
mod schedule;
mod tape;
mod tensor;

pub use optim::{adam_step, AdamState};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::Real;
pub use schedule::cosine_warmup_lr;
pub use tape::{softmax, Gradients, Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

/// Uniform fan-in initialization in `±1/sqrt(fan_in)`.
pub fn init_uniform<T: Real, R: Rng>(rng: &mut R, dims: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(dims, |_| T::of(rng.random_range(-bound..bound)))
}

#[cfg(test)]
mod tests;
