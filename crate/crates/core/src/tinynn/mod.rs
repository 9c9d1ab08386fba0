//! A small CNN toolkit with hand-written backpropagation.
//!
//! One network shape covers both the policy agent and the reward classifier:
//! word and position embeddings feed a single-window convolution, max-pooled
//! over time and passed through a relu, whose output (optionally scaled and
//! concatenated with a constant side vector) feeds a softmax head.

mod checkpoint;
mod encoder;
pub mod gradcheck;
mod head;
mod network;
mod optim;

pub use checkpoint::{Checkpoint, CheckpointError, Tensor};
pub use encoder::{encode, EncoderParams, Pooled};
pub use head::{log_softmax, softmax, SoftmaxHead};
pub use network::{Example, GradientBundle, LossSpec, Network, NetworkShape, Trace};
pub use optim::{sgd_update, Sgd};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainFault {
    #[error("non-finite gradient in {tensor}[{index}] = {value}")]
    NonFiniteGradient { tensor: &'static str, index: usize, value: f64 },
    #[error("gradient shape mismatch for {0}")]
    Shape(&'static str),
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
