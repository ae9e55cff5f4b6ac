pub mod attention;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
pub use image::{Image, RangeTag};
