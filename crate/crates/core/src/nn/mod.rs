//! Minimal differentiable numerics shared by every network: tensors with a
//! recorded graph, convolution, activations, pooling, resampling and
//! softmax, plus named parameter sets.

mod conv;
mod float;
pub mod flops;
pub mod gradcheck;
mod linalg;
mod ops;
mod params;
mod pool;
mod resample;
mod tensor;

pub use conv::Padding;
pub use float::Float;
pub use flops::count_flops;
pub use linalg::softmax_over;
pub use params::{backward, Initializer, ParamSet};
pub use params::stream_seed;
pub use resample::{resample_weights, resize_plane, InterpolationMode, ScaleFactor, CUBIC_A};
pub use tensor::{grad, grad_enabled, no_grad, with_grad_mode, Tensor};
pub(crate) use tensor::Backward;

/// Activation selector for [`activate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

/// Elementwise activation.
pub fn activate<T: Float>(x: &Tensor<T>, mode: Activation) -> Tensor<T> {
    match mode {
        Activation::Relu => x.relu(),
        Activation::LeakyRelu(slope) => x.leaky_relu(T::lit(slope)),
        Activation::Sigmoid => x.sigmoid(),
    }
}
