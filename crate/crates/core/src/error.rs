use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("odd dimension: {what} is {value}, expected an even size")]
    OddDimension { what: &'static str, value: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("channel mismatch: input has {got} channels, kernel expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("kernel spatial size must be odd, got {0}x{1}")]
    NonOddKernel(usize, usize),

    #[error("resampling {size} by {num}/{den} does not give an integral size")]
    NonIntegralOutput { size: usize, num: usize, den: usize },

    #[error("gradient requested for a non-scalar output with {0} elements")]
    NotScalar(usize),

    #[error("output is not connected to any tensor that requires a gradient")]
    GraphDetached,

    #[error("self-attention over {0} positions exceeds the limit of {max}", max = crate::attention::MAX_ATTENTION_POSITIONS)]
    AttentionTooLarge(usize),

    #[error("{channels} channels are not divisible by reduction factor {k}")]
    DivisibilityError { channels: usize, k: usize },

    #[error("input too small: {0}")]
    InputTooSmall(String),

    #[error("image too small: {height}x{width} cannot hold a {patch}x{patch} patch")]
    ImageTooSmall { height: usize, width: usize, patch: usize },

    #[error("dimensions {height}x{width} are not divisible by {divisor}")]
    IndivisibleDims { height: usize, width: usize, divisor: usize },

    #[error("range tag mismatch: {0}")]
    RangeTagMismatch(String),

    #[error("image is smaller than the {window}x{window} SSIM window")]
    ImageSmallerThanWindow { window: usize },

    #[error("no counterpart for {0} in the reference folder")]
    MissingCounterpart(String),

    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("variant {variant} {problem}")]
    VariantTermMismatch { variant: String, problem: String },

    #[error("parameter {0} has no gradient")]
    MissingGrad(String),

    #[error("unknown parameter {0}")]
    MissingParam(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged {
        step: usize,
        detail: String,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("variant {0} needs a perceptual encoder but none was supplied")]
    MissingPerceptualEncoder(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
