//! Generator, WGAN critic and perceptual encoder built from the shared
//! primitives.

mod critic;
mod generator;
mod perceptual;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

pub use critic::{Critic, CriticConfig};
pub use generator::{Generator, GeneratorConfig};
pub use perceptual::{Decoder, PerceptualEncoder, PerceptualEncoderConfig, ENCODER_FILTERS};

use crate::error::{Error, Result};
use crate::nn::{count_flops, no_grad, Float, Padding, ParamSet, Tensor};

/// Where the scale change happens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PipelineMode {
    /// The LR image is bicubic-upsampled before decomposition; the network
    /// keeps the subband resolution.
    PreInterpolated,
    /// Raw LR subbands go in and the upsample-attention block resizes them.
    Progressive,
}

impl PipelineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::PreInterpolated => "pre_interpolated",
            PipelineMode::Progressive => "progressive",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_interpolated" => Ok(PipelineMode::PreInterpolated),
            "progressive" => Ok(PipelineMode::Progressive),
            other => Err(Error::InvalidConfig(format!(
                "mode must be pre_interpolated or progressive, got {other}"
            ))),
        }
    }
}

/// Anything with a forward pass over a parameter set.
pub trait Network {
    fn forward(&self, x: &Tensor<f32>, params: &ParamSet<f32>) -> Result<Tensor<f32>>;
}

/// Convolution named `name` from `params`, adding `{name}.bias` when present.
pub(crate) fn conv<T: Float>(x: &Tensor<T>, params: &ParamSet<T>, name: &str, stride: usize) -> Result<Tensor<T>> {
    let y = x.conv2d(&params.get(&format!("{name}.weight"))?, stride, Padding::Same)?;
    let bias = format!("{name}.bias");
    if params.contains(&bias) {
        Ok(y.add(&params.get(&bias)?))
    } else {
        Ok(y)
    }
}

/// Size and cost of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub parameter_count: usize,
    pub memory_bytes_f32: usize,
    /// Floating-point operations (two per multiply-accumulate) of the
    /// convolutions and matrix products in one forward pass.
    pub flops_estimate: u64,
    /// Median wall-clock time of 5 forward passes.
    pub inference_seconds: f64,
    pub input_shape: Vec<usize>,
}

pub fn complexity_report(net: &dyn Network, params: &ParamSet<f32>, input_shape: &[usize]) -> Result<ComplexityReport> {
    let x = Tensor::zeros(input_shape);
    let (out, flops) = count_flops(|| no_grad(|| net.forward(&x, params)));
    out?;
    let mut times = Vec::with_capacity(5);
    for _ in 0..5 {
        let start = Instant::now();
        no_grad(|| net.forward(&x, params))?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(ComplexityReport {
        parameter_count: params.parameter_count(),
        memory_bytes_f32: params.parameter_count() * 4,
        flops_estimate: flops,
        inference_seconds: times[2],
        input_shape: input_shape.to_vec(),
    })
}
