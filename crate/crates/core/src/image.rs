//! Grayscale rasters with a declared value range.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::nn::Float;

/// Nominal value range of an [`Image`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangeTag {
    /// `[0, 1]`
    Unit,
    /// `[0, 255]`
    Byte,
}

impl RangeTag {
    pub fn max(self) -> f64 {
        match self {
            RangeTag::Unit => 1.0,
            RangeTag::Byte => 255.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RangeTag::Unit => "unit",
            RangeTag::Byte => "byte",
        }
    }
}

/// Row-major grayscale image, at least 2x2, with finite values inside its
/// range tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T: Float = f32> {
    height: usize,
    width: usize,
    pixels: Vec<T>,
    range: RangeTag,
    pub source_path: Option<PathBuf>,
}

impl<T: Float> Image<T> {
    pub fn new(height: usize, width: usize, pixels: Vec<T>, range: RangeTag) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InputTooSmall(format!(
                "images must be at least 2x2, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        let hi = T::lit(range.max());
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < T::zero() || **v > hi) {
            return Err(Error::ShapeMismatch(format!(
                "pixel value {bad} is outside the {} range",
                range.name()
            )));
        }
        Ok(Image {
            height,
            width,
            pixels,
            range,
            source_path: None,
        })
    }

    /// Like [`Image::new`] but clamps out-of-range values and replaces
    /// non-finite ones with zero.
    pub fn clamped(height: usize, width: usize, mut pixels: Vec<T>, range: RangeTag) -> Result<Self> {
        let hi = T::lit(range.max());
        for v in &mut pixels {
            *v = if v.is_finite() { v.max(T::zero()).min(hi) } else { T::zero() };
        }
        Self::new(height, width, pixels, range)
    }

    pub fn filled(height: usize, width: usize, value: T, range: RangeTag) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> T {
        self.pixels[y * self.width + x]
    }

    /// Rescales into another range tag.
    pub fn to_range(&self, range: RangeTag) -> Image<T> {
        if range == self.range {
            return self.clone();
        }
        let k = T::lit(range.max() / self.range.max());
        let hi = T::lit(range.max());
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| (v * k).min(hi)).collect(),
            range,
            source_path: self.source_path.clone(),
        }
    }

    /// Copies the `h x w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Image<T>> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {h}x{w} at ({y},{x}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(h * w);
        for r in y..y + h {
            pixels.extend_from_slice(&self.pixels[r * self.width + x..r * self.width + x + w]);
        }
        let mut out = Image::new(h, w, pixels, self.range)?;
        out.source_path = self.source_path.clone();
        Ok(out)
    }

    /// Largest top-left crop with even height and width.
    pub fn crop_even(&self) -> Result<Image<T>> {
        self.crop(0, 0, self.height & !1, self.width & !1)
    }

    pub fn cast<U: Float>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|v| U::lit(v.as_f64())).collect(),
            range: self.range,
            source_path: self.source_path.clone(),
        }
    }
}
